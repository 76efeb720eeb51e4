"""Per-block ensemble construction: IVoting and the bagging baseline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .data import Block
from .errors import ValidationError
from .tree import Ensemble, TreeParams, attr_sample_size, train_tree

# Seeds handed to individual trees are drawn below this bound so they fit a signed 64-bit field.
_SEED_BOUND = 2**63 - 1


@dataclass(frozen=True)
class IVoteParams:
    ensemble_size: int
    bite_size: int
    min_leaf_size: int = 10
    attrs_per_node: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.ensemble_size < 1:
            raise ValidationError(f"ensemble_size must be >= 1, got {self.ensemble_size}")
        if self.bite_size < 2 or self.bite_size % 2:
            raise ValidationError(f"bite_size must be an even integer >= 2, got {self.bite_size}")
        if self.min_leaf_size < 1:
            raise ValidationError("min_leaf_size must be >= 1")
        if self.attrs_per_node is not None and self.attrs_per_node < 1:
            raise ValidationError("attrs_per_node must be >= 1")

    def tree_params(self, d: int, seed: int) -> TreeParams:
        k = attr_sample_size(d) if self.attrs_per_node is None else min(self.attrs_per_node, d)
        return TreeParams(k, self.min_leaf_size, seed)


def default_bite_size(block_size: int) -> int:
    """10% of the block, capped at 10,000, rounded to an even number >= 2."""
    b = min(block_size // 10, 10_000)
    return max(2, b - b % 2)


class OOBTally:
    """Running out-of-bag vote counts, one row per example of the block."""

    def __init__(self, labels, num_classes: int):
        self.labels = np.asarray(labels, dtype=np.int64)
        self.num_classes = num_classes
        self.counts = np.zeros((self.labels.shape[0], num_classes), dtype=np.int64)

    def __len__(self):
        return self.labels.shape[0]

    def record(self, predictions, in_bite) -> None:
        """Add one tree's votes for every example outside its bite."""
        oob = np.flatnonzero(~np.asarray(in_bite, dtype=bool))
        np.add.at(self.counts, (oob, np.asarray(predictions)[oob]), 1)

    def correct_mask(self) -> np.ndarray:
        """True where the label strictly beats every other class.

        Ties and all-zero rows count as incorrect.
        """
        rows = np.arange(len(self))
        own = self.counts[rows, self.labels]
        others = self.counts.copy()
        others[rows, self.labels] = -1
        return own > others.max(axis=1)


def classify_oob(tally: OOBTally, j: int) -> Literal["correct", "incorrect"]:
    if not 0 <= j < len(tally):
        raise ValidationError(f"example index {j} out of range")
    row = tally.counts[j]
    label = tally.labels[j]
    rivals = np.delete(row, label)
    return "correct" if row[label] > rivals.max(initial=0) else "incorrect"


@dataclass
class IterationInfo:
    """What one IVoting iteration did; passed to the optional callback."""

    iteration: int
    drawn_correct: np.ndarray
    drawn_incorrect: np.ndarray
    correct_before: int
    correct: np.ndarray
    tally: OOBTally


def _half(rng, pool, full, k):
    # an empty partition falls back to the whole block
    source = pool if pool.size else full
    return source[rng.integers(0, source.size, size=k)]


def ivote(block: Block, params: IVoteParams,
          callback: Callable[[IterationInfo], None] | None = None) -> Ensemble:
    """Grow ``params.ensemble_size`` trees on bites that are half correctly and
    half incorrectly classified examples, judged by out-of-bag votes."""
    rng = np.random.default_rng(params.seed)
    n, d, c = len(block), block.num_features, block.num_classes
    everyone = np.arange(n)
    tally = OOBTally(block.y, c)
    correct = np.zeros(n, dtype=bool)
    pos, neg = everyone, everyone  # both start as the full block
    half = params.bite_size // 2
    trees = []
    for i in range(params.ensemble_size):
        drawn_pos = _half(rng, pos, everyone, half)
        drawn_neg = _half(rng, neg, everyone, half)
        bite = np.concatenate([drawn_pos, drawn_neg])
        seed = int(rng.integers(_SEED_BOUND))
        tree = train_tree(block.X[bite], block.y[bite], params.tree_params(d, seed), c, block.block_id)
        trees.append(tree)

        in_bite = np.zeros(n, dtype=bool)
        in_bite[bite] = True
        tally.record(tree.predict(block.X), in_bite)
        before = int(correct.sum())
        correct = tally.correct_mask()
        pos, neg = everyone[correct], everyone[~correct]
        if callback is not None:
            callback(IterationInfo(i, drawn_pos, drawn_neg, before, correct, tally))
    return Ensemble(trees, d, c)


def bag(block: Block, params: IVoteParams) -> Ensemble:
    """Bagging baseline: every tree sees ``bite_size`` uniform draws with replacement."""
    rng = np.random.default_rng(params.seed)
    n, d, c = len(block), block.num_features, block.num_classes
    trees = []
    for _ in range(params.ensemble_size):
        bite = rng.integers(0, n, size=params.bite_size)
        seed = int(rng.integers(_SEED_BOUND))
        trees.append(train_tree(block.X[bite], block.y[bite], params.tree_params(d, seed), c, block.block_id))
    return Ensemble(trees, d, c)


SAMPLERS = {"ivoting": ivote, "bagging": bag}
