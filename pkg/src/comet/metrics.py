"""Test-set evaluation: accuracy, votes used, disagreement and the bite-size sweep."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Block
from .errors import ValidationError
from .ivoting import IVoteParams, ivote
from .lazy import LazyEvaluator
from .stopping import StoppingTable


@dataclass
class EvalReport:
    accuracy: float
    mean_votes: float
    seconds: float
    confusion: np.ndarray
    predictions: np.ndarray
    votes_used: np.ndarray

    @property
    def size(self) -> int:
        return int(self.confusion.sum())

    def summary(self) -> str:
        return (f"accuracy={self.accuracy:.4f} mean_votes={self.mean_votes:.2f} "
                f"examples={self.size} seconds={self.seconds:.3f}")


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    idx = np.asarray(y_true) * num_classes + np.asarray(y_pred)
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def evaluate(ensemble, test_block: Block, mode: str = "full",
             table: StoppingTable | None = None, seed: int = 0) -> EvalReport:
    """Predict every test example with the full ensemble or lazily.

    ``mode="lazy"`` needs ``table``; the ensemble order is permuted once from
    ``seed`` and one start index is drawn per example.
    """
    if len(test_block) == 0:
        raise ValidationError("empty test block")
    if test_block.num_features != ensemble.num_features:
        raise ValidationError(f"test block has {test_block.num_features} features, "
                              f"ensemble expects {ensemble.num_features}")
    c = max(ensemble.num_classes, test_block.num_classes)
    start = time.perf_counter()
    if mode == "full":
        preds = ensemble.predict(test_block.X)
        used = np.full(len(test_block), len(ensemble), dtype=np.int64)
    elif mode == "lazy":
        if table is None:
            raise ValidationError("lazy mode needs a stopping table")
        lazy = LazyEvaluator(ensemble, table, seed)
        results = [lazy(x) for x in test_block.X]
        preds = np.array([r.prediction for r in results], dtype=np.int64)
        used = np.array([r.votes_used for r in results], dtype=np.int64)
    else:
        raise ValidationError(f"unknown mode {mode!r}")
    seconds = time.perf_counter() - start
    return EvalReport(
        float(np.mean(preds == test_block.y)),
        float(used.mean()),
        seconds,
        confusion_matrix(test_block.y, preds, c),
        preds,
        used,
    )


def disagreement_rate(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.size == 0:
        raise ValidationError("prediction vectors must be non-empty and equally long")
    return float(np.mean(a != b))


def bite_size_sweep(block: Block, test_block: Block, sizes: Sequence[int], m: int,
                    seed: int, min_leaf_size: int = 10) -> list[tuple[int, float]]:
    """Train one IVoting ensemble per bite size; report held-out accuracy."""
    if not sizes:
        raise ValidationError("no bite sizes given")
    rows = []
    for b in sizes:
        ens = ivote(block, IVoteParams(m, int(b), min_leaf_size, seed=seed))
        rows.append((int(b), float(np.mean(ens.predict(test_block.X) == test_block.y))))
    return rows


def write_rows_csv(rows, header: Sequence[str], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path
