"""Single-pass partition-parallel training and the ensemble file format.

Each block is a map task: it trains a local ensemble and tags every tree with
a random partition key in ``1..p``. The reduce step groups trees by key and
writes one ensemble file per partition.

File format (UTF-8, one record per line)::

    COMET-ENSEMBLE v1 trees=<t> features=<d> classes=<c>
    TREE id=<i> block=<b> seed=<s> nodes=<k>
    N <feature> <threshold> skip=<left-subtree-size>
    L <count_0> ... <count_{c-1}>

Nodes are listed in preorder, left subtree first. Thresholds use the shortest
decimal that round-trips a 64-bit float.
"""

from __future__ import annotations

import logging
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import load_block
from .errors import JobError, ParseError, ValidationError
from .ivoting import SAMPLERS, IVoteParams
from .tree import DecisionTree, Ensemble, Leaf, Split

log = logging.getLogger(__name__)

FORMAT_VERSION = "v1"
_HEADER = re.compile(r"^COMET-ENSEMBLE (\S+) trees=(\d+) features=(\d+) classes=(\d+)$")
_TREE = re.compile(r"^TREE id=(\d+) block=(\d+) seed=(\d+) nodes=(\d+)$")


# --- serialization --------------------------------------------------------------

def format_ensemble(ensemble: Ensemble) -> str:
    lines = [f"COMET-ENSEMBLE {FORMAT_VERSION} trees={len(ensemble)} "
             f"features={ensemble.num_features} classes={ensemble.num_classes}"]
    for i, tree in enumerate(ensemble.trees):
        lines.append(f"TREE id={i} block={tree.block_id} seed={tree.seed} nodes={tree.num_nodes}")
        for node in tree.nodes():
            if isinstance(node, Split):
                lines.append(f"N {node.feature} {node.threshold!r} skip={node.skip}")
            else:
                lines.append("L " + " ".join(str(v) for v in node.counts))
    return "\n".join(lines) + "\n"


def save_ensemble(ensemble: Ensemble, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(format_ensemble(ensemble), encoding="utf-8")
    os.replace(tmp, path)
    return path


def _check_preorder(nodes, first_line, path):
    """Verify the skip fields describe exactly one complete binary tree."""
    k = len(nodes)
    # end[i]: index just past the subtree rooted at i; -1 if it runs off the end
    end = [-1] * (k + 1)
    for i in range(k - 1, -1, -1):
        node = nodes[i]
        if isinstance(node, Leaf):
            end[i] = i + 1
            continue
        left_end = end[i + 1] if i + 1 < k else -1
        if left_end < 0 or left_end >= k or end[left_end] < 0:
            raise ParseError("tree ends before all children are listed", first_line + i, path)
        if left_end - (i + 1) != node.skip:
            raise ParseError(f"skip={node.skip} does not match the left subtree size", first_line + i, path)
        end[i] = end[left_end]
    if end[0] != k:
        raise ParseError(f"node count {k} does not form a single tree", first_line, path)


def parse_ensemble(text: str, path=None) -> Ensemble:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", 1, path)
    head = _HEADER.match(lines[0])
    if not head:
        raise ParseError("bad header", 1, path)
    version, t, d, c = head.group(1), *map(int, head.groups()[1:])
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {version}", 1, path)
    if d < 1 or c < 2:
        raise ParseError("header needs features >= 1 and classes >= 2", 1, path)

    trees = []
    ln = 1  # index into lines; line numbers are ln + 1
    for _ in range(t):
        if ln >= len(lines):
            raise ParseError(f"truncated: expected {t} trees, found {len(trees)}", ln + 1, path)
        tm = _TREE.match(lines[ln])
        if not tm:
            raise ParseError("expected TREE record", ln + 1, path)
        _, block_id, seed, k = map(int, tm.groups())
        if k < 1:
            raise ParseError("tree needs at least one node", ln + 1, path)
        first = ln + 2
        nodes = []
        for j in range(k):
            row = ln + 1 + j
            if row >= len(lines):
                raise ParseError("truncated tree", row + 1, path)
            parts = lines[row].split(" ")
            try:
                if parts[0] == "N":
                    if len(parts) != 4 or not parts[3].startswith("skip="):
                        raise ParseError("internal node needs: N <feature> <threshold> skip=<n>", row + 1, path)
                    f = int(parts[1])
                    if not 0 <= f < d:
                        raise ParseError(f"feature index {f} out of range", row + 1, path)
                    nodes.append(Split(f, float(parts[2]), int(parts[3][5:])))
                elif parts[0] == "L":
                    if len(parts) != c + 1:
                        raise ParseError(f"leaf needs {c} class counts, got {len(parts) - 1}", row + 1, path)
                    counts = tuple(int(v) for v in parts[1:])
                    if min(counts) < 0 or sum(counts) < 1:
                        raise ParseError("leaf counts must be non-negative with a positive sum", row + 1, path)
                    nodes.append(Leaf(counts))
                else:
                    raise ParseError(f"unknown node kind {parts[0]!r}", row + 1, path)
            except ValueError as exc:
                if isinstance(exc, ParseError):
                    raise
                raise ParseError(f"malformed node: {exc}", row + 1, path) from None
        _check_preorder(nodes, first, path)
        trees.append(DecisionTree.from_nodes(nodes, d, c, block_id, seed))
        ln += 1 + k
    if ln != len(lines):
        raise ParseError("trailing data after last tree", ln + 1, path)
    return Ensemble(trees, d, c)


def load_ensemble(path) -> Ensemble:
    path = Path(path)
    return parse_ensemble(path.read_text(encoding="utf-8"), path)


def merge_partitions(paths: Sequence) -> Ensemble:
    """Concatenate partition files in the given order."""
    if not paths:
        raise ValidationError("no partition files given")
    parts = [load_ensemble(p) for p in paths]
    d, c = parts[0].num_features, parts[0].num_classes
    for p, e in zip(paths, parts):
        if (e.num_features, e.num_classes) != (d, c):
            raise ValidationError(f"{p}: features={e.num_features} classes={e.num_classes}, expected {d}/{c}")
    return Ensemble([t for e in parts for t in e.trees], d, c)


# --- training ---------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    block_paths: tuple
    sampler: str = "ivoting"
    trees_per_block: int = 100
    bite_size: int | None = None
    partitions: int = 1
    seed: int = 0
    workers: int = 1
    min_leaf_size: int = 10
    attrs_per_node: int | None = None
    num_classes: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "block_paths", tuple(Path(p) for p in self.block_paths))
        if not self.block_paths:
            raise ValidationError("no block files")
        if self.sampler not in SAMPLERS:
            raise ValidationError(f"unknown sampler {self.sampler!r}; expected one of {sorted(SAMPLERS)}")
        if self.trees_per_block < 1:
            raise ValidationError("trees_per_block must be >= 1")
        if self.partitions < 1:
            raise ValidationError("partitions must be >= 1")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")


@dataclass
class MapOutput:
    block_id: int
    trees: list
    keys: np.ndarray
    num_features: int
    num_classes: int
    seconds: float


@dataclass
class TrainResult:
    paths: list
    block_seconds: dict = field(default_factory=dict)
    total_trees: int = 0
    partition_sizes: list = field(default_factory=list)


def block_seed(base_seed: int, block_id: int) -> int:
    return base_seed ^ block_id


def map_block(cfg: TrainConfig, block_id: int) -> MapOutput:
    """Map step: learn a local ensemble and draw a partition key per tree."""
    from .ivoting import default_bite_size

    path = cfg.block_paths[block_id]
    block = load_block(path, cfg.num_classes, block_id)
    seed = block_seed(cfg.seed, block_id)
    bite = cfg.bite_size if cfg.bite_size is not None else default_bite_size(len(block))
    params = IVoteParams(cfg.trees_per_block, bite, cfg.min_leaf_size, cfg.attrs_per_node, seed)
    start = time.perf_counter()
    ensemble = SAMPLERS[cfg.sampler](block, params)
    seconds = time.perf_counter() - start
    # keys come from the block's own seeded stream, after training
    keys = np.random.default_rng([seed, 2]).integers(1, cfg.partitions + 1, size=len(ensemble))
    return MapOutput(block_id, ensemble.trees, keys, block.num_features, block.num_classes, seconds)


def _run_map(args):
    cfg, block_id = args
    try:
        return map_block(cfg, block_id)
    except Exception as exc:  # re-raised with the block named
        raise JobError(f"block {cfg.block_paths[block_id]} failed: {exc}") from exc


def _pad_classes(tree: DecisionTree, c: int) -> DecisionTree:
    if tree.num_classes == c:
        return tree
    counts = np.zeros((tree.num_nodes, c), dtype=np.int64)
    counts[:, :tree.num_classes] = tree.counts
    return DecisionTree(tree.feature, tree.threshold, tree.left, tree.right, counts,
                        tree.num_features, tree.block_id, tree.seed)


def reduce_partitions(outputs: Sequence[MapOutput], p: int) -> list[Ensemble]:
    """Group trees by key; order is block order, then tree order."""
    d = {o.num_features for o in outputs}
    if len(d) != 1:
        raise JobError(f"blocks disagree on feature count: {sorted(d)}")
    d = d.pop()
    c = max(o.num_classes for o in outputs)
    buckets = [[] for _ in range(p)]
    for out in sorted(outputs, key=lambda o: o.block_id):
        for tree, key in zip(out.trees, out.keys.tolist()):
            buckets[key - 1].append(_pad_classes(tree, c))
    return [Ensemble(trees, d, c) for trees in buckets]


def train_distributed(cfg: TrainConfig, out_dir) -> TrainResult:
    """Train every block (up to ``cfg.workers`` at a time) and write ``p``
    partition files ``part-<r>.ensemble`` into ``out_dir``."""
    out_dir = Path(out_dir)
    for path in cfg.block_paths:
        if not path.is_file():
            raise JobError(f"block {path} does not exist")
    jobs = [(cfg, i) for i in range(len(cfg.block_paths))]
    if cfg.workers == 1 or len(jobs) == 1:
        outputs = [_run_map(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            outputs = list(pool.map(_run_map, jobs))
    for o in outputs:
        log.info("block %d: %d trees in %.2fs", o.block_id, len(o.trees), o.seconds)

    partitions = reduce_partitions(outputs, cfg.partitions)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        for r, ens in enumerate(partitions, start=1):
            written.append(save_ensemble(ens, out_dir / f"part-{r}.ensemble"))
    except Exception:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return TrainResult(
        written,
        {o.block_id: o.seconds for o in outputs},
        sum(len(o.trees) for o in outputs),
        [len(e) for e in partitions],
    )
