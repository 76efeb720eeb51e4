"""Labeled blocks: CSV loading, random repartitioning and synthetic data."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ParseError, ValidationError

LABEL_COLUMN = "label"


class Example(NamedTuple):
    features: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class Block:
    """An immutable partition of labeled examples.

    ``X`` is an ``(n, d)`` float64 matrix and ``y`` holds integer class indices
    in ``[0, num_classes)``.
    """

    X: np.ndarray
    y: np.ndarray
    num_classes: int
    block_id: int = 0
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValidationError(f"shape mismatch: X{X.shape} vs y{y.shape}")
        if X.shape[0] == 0:
            raise ValidationError("empty block")
        if X.shape[1] < 1:
            raise ValidationError("block needs at least one feature")
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValidationError(f"labels must lie in [0, {self.num_classes})")
        if self.block_id < 0:
            raise ValidationError("block_id must be non-negative")
        names = tuple(self.feature_names) or tuple(f"f{i}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValidationError("feature_names length does not match feature count")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", names)

    def __len__(self):
        return self.y.shape[0]

    @property
    def num_features(self) -> int:
        return self.X.shape[1]

    @property
    def examples(self) -> Iterator[Example]:
        for row, label in zip(self.X, self.y):
            yield Example(row, int(label))

    def take(self, indices, block_id=None) -> "Block":
        indices = np.asarray(indices)
        return Block(
            self.X[indices],
            self.y[indices],
            self.num_classes,
            self.block_id if block_id is None else block_id,
            self.feature_names,
        )

    def split(self, n_first: int) -> tuple["Block", "Block"]:
        """Split into the first ``n_first`` rows and the rest."""
        if not 0 < n_first < len(self):
            raise ValidationError(f"split point {n_first} outside (0, {len(self)})")
        return self.take(np.arange(n_first)), self.take(np.arange(n_first, len(self)))

    def __eq__(self, other):
        if not isinstance(other, Block):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.feature_names == other.feature_names
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )

    __hash__ = None


def _parse_label(text: str, line: int, path) -> int:
    try:
        value = int(text)
    except ValueError:
        try:
            as_float = float(text)
        except ValueError:
            raise ParseError(f"label {text!r} is not an integer", line, path) from None
        if not as_float.is_integer():
            raise ParseError(f"label {text!r} is not an integer", line, path)
        value = int(as_float)
    if value < 0:
        raise ParseError(f"label {value} is negative", line, path)
    return value


def _read_rows(path):
    """Yield ``(line_number, fields)`` with the header first."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for fields in reader:
            if not fields:
                continue
            yield reader.line_num, fields


def load_block(path, num_classes: int | None = None, block_id: int = 0) -> Block:
    """Parse a CSV file with a ``label`` column into a :class:`Block`."""
    rows = _read_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise ParseError("missing header", 1, path) from None
    header = [h.strip() for h in header]
    if LABEL_COLUMN not in header:
        raise ParseError(f"no {LABEL_COLUMN!r} column in header", 1, path)
    label_pos = header.index(LABEL_COLUMN)
    names = tuple(h for i, h in enumerate(header) if i != label_pos)
    width = len(header)

    features, labels = [], []
    for line, fields in rows:
        if len(fields) != width:
            raise ParseError(f"expected {width} fields, got {len(fields)}", line, path)
        row = []
        for i, text in enumerate(fields):
            if i == label_pos:
                continue
            try:
                row.append(float(text))
            except ValueError:
                raise ParseError(f"non-numeric feature {text!r} in column {header[i]!r}", line, path) from None
        features.append(row)
        labels.append(_parse_label(fields[label_pos].strip(), line, path))

    if not labels:
        raise ParseError("empty block", path=path)
    if not names:
        raise ParseError("no feature columns", 1, path)
    y = np.asarray(labels, dtype=np.int64)
    c = int(y.max()) + 1 if num_classes is None else num_classes
    if y.max() >= c:
        raise ParseError(f"label {int(y.max())} exceeds configured class count {c}", path=path)
    return Block(np.asarray(features, dtype=np.float64), y, max(c, 2), block_id, names)


def write_block(block: Block, path) -> Path:
    """Write ``block`` as CSV; floats use shortest round-trip formatting."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*block.feature_names, LABEL_COLUMN])
        for row, label in zip(block.X.tolist(), block.y.tolist()):
            writer.writerow([*map(repr, row), label])
    return path


def shuffle_split(input_path, num_blocks: int, seed: int, out_dir) -> list[Path]:
    """Assign each row of ``input_path`` to one of ``num_blocks`` CSV files.

    The target block of every row is drawn uniformly from a generator seeded
    with ``seed``; rows keep their original text and relative order.
    """
    if num_blocks < 1:
        raise ValidationError(f"num_blocks must be >= 1, got {num_blocks}")
    load_block(input_path)  # validates the whole file before anything is written

    rows = list(_read_rows(input_path))
    header, body = rows[0][1], [fields for _, fields in rows[1:]]
    rng = np.random.default_rng(seed)
    targets = rng.integers(0, num_blocks, size=len(body))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory {out_dir} is not writable")
    paths = [out_dir / f"block-{i:04d}.csv" for i in range(num_blocks)]
    handles = [open(p, "w", newline="", encoding="utf-8") for p in paths]
    try:
        writers = [csv.writer(h, lineterminator="\n") for h in handles]
        for w in writers:
            w.writerow(header)
        for fields, t in zip(body, targets.tolist()):
            writers[t].writerow(fields)
    finally:
        for h in handles:
            h.close()
    return paths


@dataclass(frozen=True)
class SynthSpec:
    n: int
    d: int
    c: int = 2
    class_separation: float = 1.0
    noise_rate: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("n must be >= 1")
        if self.d < 1:
            raise ValidationError("d must be >= 1")
        if self.c < 2:
            raise ValidationError("c must be >= 2")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ValidationError("noise_rate must lie in [0, 1)")
        if not np.isfinite(self.class_separation) or self.class_separation < 0:
            raise ValidationError("class_separation must be a finite non-negative number")


def synth_generate(spec: SynthSpec, seed: int) -> Block:
    """Gaussian mixture classification data.

    Class ``k`` is centered at ``k * class_separation * s`` where ``s`` is a
    seeded random sign vector, so centers of distinct classes differ by at
    least ``class_separation`` in every coordinate. Features get unit-variance
    Gaussian noise; each label is then replaced by a different, uniformly
    chosen class with probability ``noise_rate``.
    """
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=spec.d)
    centers = np.arange(spec.c)[:, None] * spec.class_separation * signs[None, :]
    y = rng.integers(0, spec.c, size=spec.n)
    X = centers[y] + rng.standard_normal((spec.n, spec.d))
    flip = rng.random(spec.n) < spec.noise_rate
    shift = rng.integers(1, spec.c, size=spec.n)
    y = np.where(flip, (y + shift) % spec.c, y)
    return Block(X, y, spec.c)


def concat_blocks(blocks: Sequence[Block], block_id: int = 0) -> Block:
    if not blocks:
        raise ValidationError("nothing to concatenate")
    c = max(b.num_classes for b in blocks)
    return Block(
        np.vstack([b.X for b in blocks]),
        np.concatenate([b.y for b in blocks]),
        c,
        block_id,
        blocks[0].feature_names,
    )
