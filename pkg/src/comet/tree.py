"""Decision trees with entropy splits and per-node attribute subsampling.

Trees are stored as flat preorder node arrays. Internal node ``i`` sends
``x[feature] < threshold`` to its left child ``i + 1`` and everything else to
the right child ``i + 1 + skip`` where ``skip`` is the size of the left subtree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from numba import njit

from .errors import ValidationError

# Gains at or below this are treated as zero; guards against entropy round-off.
MIN_GAIN = 1e-12


def attr_sample_size(d: int) -> int:
    """Number of features examined per node: ``floor(1 + log2 d)`` clamped to [1, d]."""
    if d < 1:
        raise ValidationError(f"feature count must be >= 1, got {d}")
    # bit_length avoids float log2 round-off at exact powers of two
    return max(1, min(d, 1 + (d.bit_length() - 1)))


@dataclass(frozen=True)
class TreeParams:
    attrs_per_node: int
    min_leaf_size: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.attrs_per_node < 1:
            raise ValidationError("attrs_per_node must be >= 1")
        if self.min_leaf_size < 1:
            raise ValidationError("min_leaf_size must be >= 1")


class Split(NamedTuple):
    feature: int
    threshold: float
    skip: int


class Leaf(NamedTuple):
    counts: tuple[int, ...]


def _xlog2x(a):
    # inputs are counts (integers >= 0), so max(a, 1) maps 0*log(0) to 0 exactly
    a = np.asarray(a, dtype=np.float64)
    return a * np.log2(np.maximum(a, 1.0))


def entropy(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n <= 0:
        return 0.0
    return float(math.log2(n) - _xlog2x(counts).sum() / n)


@njit(cache=True)
def _xlog2x_scalar(a):
    return a * math.log2(a) if a > 0 else 0.0


@njit(cache=True)
def _split_kernel(X, y, idx, feats, c, min_gain):
    n = idx.shape[0]
    parent = np.zeros(c, dtype=np.int64)
    for i in range(n):
        parent[y[idx[i]]] += 1
    s_parent = 0.0
    for k in range(c):
        s_parent += _xlog2x_scalar(parent[k])
    h_parent = math.log2(n) - s_parent / n

    best_f = -1
    best_pos_lo = 0.0
    best_pos_hi = 0.0
    best_gain = min_gain
    if h_parent <= 0.0:
        return best_f, best_pos_lo, best_pos_hi, 0.0

    vals = np.empty(n)
    left = np.zeros(c, dtype=np.int64)
    for fi in range(feats.shape[0]):
        f = feats[fi]
        for i in range(n):
            vals[i] = X[idx[i], f]
        order = np.argsort(vals, kind="mergesort")
        left[:] = 0
        for pos in range(n - 1):
            left[y[idx[order[pos]]]] += 1
            lo = vals[order[pos]]
            hi = vals[order[pos + 1]]
            if not lo < hi:
                continue
            n_left = pos + 1
            n_right = n - n_left
            s_left = 0.0
            s_right = 0.0
            for k in range(c):
                s_left += _xlog2x_scalar(left[k])
                s_right += _xlog2x_scalar(parent[k] - left[k])
            child = (_xlog2x_scalar(n_left) - s_left + _xlog2x_scalar(n_right) - s_right) / n
            gain = h_parent - child
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_pos_lo = lo
                best_pos_hi = hi
    return best_f, best_pos_lo, best_pos_hi, best_gain


def _midpoint(lo, hi):
    t = 0.5 * (lo + hi)
    if not math.isfinite(t):
        t = lo / 2 + hi / 2
    if not lo < t <= hi:
        t = hi
    return float(t)


def _split(X, y, idx, feats, c):
    f, lo, hi, gain = _split_kernel(X, y, idx, feats, c, MIN_GAIN)
    if f < 0:
        return None
    return int(f), _midpoint(lo, hi), float(gain)


def best_split(X, y, features, num_classes: int | None = None):
    """Best entropy split of ``(X, y)`` over the given feature indices.

    Returns ``(feature, threshold, gain)`` or ``None`` when no candidate
    threshold has positive gain. Candidates are midpoints between consecutive
    distinct sorted values. Ties go to the lowest feature index, then the
    lowest threshold.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    if y.shape[0] == 0:
        raise ValidationError("best_split needs at least one example")
    feats = np.unique(np.asarray(list(features), dtype=np.int64))
    if feats.size == 0:
        raise ValidationError("feature subset is empty")
    if feats[0] < 0 or feats[-1] >= X.shape[1]:
        raise ValidationError("feature index out of range")
    c = int(y.max()) + 1 if num_classes is None else num_classes
    return _split(X, y, np.arange(y.shape[0]), feats, c)


class DecisionTree:
    """A trained tree. Immutable once built."""

    __slots__ = ("feature", "threshold", "left", "right", "counts", "leaf_class",
                 "num_features", "num_classes", "block_id", "seed", "depth")

    def __init__(self, feature, threshold, left, right, counts, num_features,
                 block_id=0, seed=0):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.ndim != 2:
            raise ValidationError("counts must be a (nodes, classes) matrix")
        self.num_classes = self.counts.shape[1]
        self.num_features = int(num_features)
        self.block_id = int(block_id)
        self.seed = int(seed)
        # np.argmax breaks ties toward the lowest class index
        self.leaf_class = np.argmax(self.counts, axis=1)
        for arr in (self.feature, self.threshold, self.left, self.right, self.counts, self.leaf_class):
            arr.flags.writeable = False
        self.depth = self._depth()

    def _depth(self):
        depth = np.zeros(len(self.feature), dtype=np.int64)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) if depth.size else 0

    @property
    def num_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf_only(self) -> bool:
        return self.num_nodes == 1

    def nodes(self) -> Iterator[Split | Leaf]:
        """Nodes in preorder."""
        for i in range(self.num_nodes):
            f = int(self.feature[i])
            if f < 0:
                yield Leaf(tuple(int(v) for v in self.counts[i]))
            else:
                yield Split(f, float(self.threshold[i]), int(self.right[i] - i - 1))

    @classmethod
    def from_nodes(cls, nodes: Sequence[Split | Leaf], num_features, num_classes,
                   block_id=0, seed=0) -> "DecisionTree":
        k = len(nodes)
        feature = np.full(k, -1, dtype=np.int64)
        threshold = np.zeros(k)
        left = np.full(k, -1, dtype=np.int64)
        right = np.full(k, -1, dtype=np.int64)
        counts = np.zeros((k, num_classes), dtype=np.int64)
        for i, node in enumerate(nodes):
            if isinstance(node, Split):
                feature[i] = node.feature
                threshold[i] = node.threshold
                left[i] = i + 1
                right[i] = i + 1 + node.skip
            else:
                counts[i] = node.counts
        # internal counts are not stored; rebuild them bottom-up
        for i in range(k - 1, -1, -1):
            if feature[i] >= 0:
                counts[i] = counts[left[i]] + counts[right[i]]
        return cls(feature, threshold, left, right, counts, num_features, block_id, seed)

    def predict(self, X) -> np.ndarray:
        """Vectorized class predictions for the rows of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.num_features:
            raise ValidationError(f"expected {self.num_features} features, got {X.shape[1]}")
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            go_left = X[rows, np.where(internal, f, 0)] < self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)
        return self.leaf_class[node]

    def predict_one(self, x) -> int:
        """Single-row descent without array overhead. ``x`` is not validated."""
        feature, threshold, left, right = self.feature, self.threshold, self.left, self.right
        i = 0
        f = feature[0]
        while f >= 0:
            i = left[i] if x[f] < threshold[i] else right[i]
            f = feature[i]
        return int(self.leaf_class[i])

    def structurally_equal(self, other: "DecisionTree") -> bool:
        return (
            self.num_features == other.num_features
            and np.array_equal(self.feature, other.feature)
            and np.array_equal(self.threshold, other.threshold)
            and np.array_equal(self.counts, other.counts)
        )

    def __repr__(self):
        return (f"DecisionTree(nodes={self.num_nodes}, depth={self.depth}, "
                f"block={self.block_id}, seed={self.seed})")


def train_tree(X, y, params: TreeParams, num_classes: int | None = None,
               block_id: int = 0) -> DecisionTree:
    """Grow a full tree on a bite.

    A node becomes a leaf when it is pure, holds fewer than
    ``params.min_leaf_size`` examples, or no sampled feature yields a split
    with positive information gain.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    if y.shape[0] == 0:
        raise ValidationError("cannot train a tree on an empty bite")
    n, d = X.shape
    c = int(y.max()) + 1 if num_classes is None else num_classes
    c = max(c, 2)
    k = min(params.attrs_per_node, d)
    rng = np.random.default_rng(params.seed)

    feature, threshold, right, counts = [], [], [], []
    # (example indices, index of the parent whose right child this is or -1)
    stack = [(np.arange(n), -1)]
    while stack:
        idx, parent = stack.pop()
        me = len(feature)
        if parent >= 0:
            right[parent] = me
        node_counts = np.bincount(y[idx], minlength=c)
        counts.append(node_counts)
        split = None
        if idx.size >= params.min_leaf_size and np.count_nonzero(node_counts) > 1:
            subset = np.sort(rng.choice(d, size=k, replace=False))
            split = _split(X, y, idx, subset, c)
        if split is None:
            feature.append(-1)
            threshold.append(0.0)
            right.append(-1)
            continue
        f, t, _ = split
        feature.append(f)
        threshold.append(t)
        right.append(-1)
        go_left = X[idx, f] < t
        stack.append((idx[~go_left], me))
        stack.append((idx[go_left], -1))

    feature = np.asarray(feature, dtype=np.int64)
    left = np.where(feature >= 0, np.arange(len(feature)) + 1, -1)
    return DecisionTree(feature, threshold, left, right, counts, d, block_id, params.seed)


def predict_tree(tree: DecisionTree, x) -> int:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != tree.num_features:
        raise ValidationError(f"expected a vector of {tree.num_features} features, got shape {x.shape}")
    return tree.predict_one(x)


def leaf_tree(counts, num_features: int, block_id=0, seed=0) -> DecisionTree:
    """A single-leaf tree; used for constant predictors."""
    return DecisionTree([-1], [0.0], [-1], [-1], [list(counts)], num_features, block_id, seed)


class Ensemble:
    """A flat, equally weighted list of trees."""

    def __init__(self, trees: Sequence[DecisionTree], num_features: int, num_classes: int):
        self.trees = list(trees)
        self.num_features = int(num_features)
        self.num_classes = int(num_classes)
        for t in self.trees:
            if t.num_features != self.num_features:
                raise ValidationError("tree feature count does not match ensemble")
            if t.num_classes != self.num_classes:
                raise ValidationError("tree class count does not match ensemble")

    def __len__(self):
        return len(self.trees)

    def __iter__(self):
        return iter(self.trees)

    def __getitem__(self, i):
        return self.trees[i]

    def check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.num_features:
            raise ValidationError(f"expected {self.num_features} features, got {x.shape[-1]}")
        return x

    def vote_matrix(self, X) -> np.ndarray:
        """``(rows, trees)`` matrix of individual tree predictions."""
        X = self.check_input(np.atleast_2d(X))
        out = np.empty((X.shape[0], len(self.trees)), dtype=np.int64)
        for j, t in enumerate(self.trees):
            out[:, j] = t.predict(X)
        return out

    def vote_counts(self, X) -> np.ndarray:
        votes = self.vote_matrix(X)
        return np.stack([(votes == k).sum(axis=1) for k in range(self.num_classes)], axis=1)

    def predict(self, X) -> np.ndarray:
        """Full-ensemble majority for each row; ties go to the lowest class."""
        if not self.trees:
            raise ValidationError("empty ensemble cannot predict")
        return np.argmax(self.vote_counts(X), axis=1)

    def permuted(self, seed: int) -> "Ensemble":
        order = np.random.default_rng(seed).permutation(len(self.trees))
        return Ensemble([self.trees[i] for i in order], self.num_features, self.num_classes)

    def __add__(self, other: "Ensemble") -> "Ensemble":
        if (self.num_features, self.num_classes) != (other.num_features, other.num_classes):
            raise ValidationError("cannot merge ensembles with different feature or class counts")
        return Ensemble(self.trees + other.trees, self.num_features, self.num_classes)

    def __repr__(self):
        return f"Ensemble(trees={len(self.trees)}, features={self.num_features}, classes={self.num_classes})"
