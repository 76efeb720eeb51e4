"""Lazy ensemble evaluation: query trees one at a time until the stopping table
says the partial vote already decides the full-ensemble majority."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import ValidationError
from .stopping import Rule, StoppingTable, cached_table
from .tree import Ensemble


@dataclass
class VoteTally:
    counts: np.ndarray
    votes_cast: int = 0

    @classmethod
    def empty(cls, num_classes: int) -> "VoteTally":
        return cls(np.zeros(num_classes, dtype=np.int64), 0)

    def add(self, cls_index: int) -> None:
        self.counts[cls_index] += 1
        self.votes_cast += 1

    def leader(self) -> int:
        return int(np.argmax(self.counts))

    def top_two(self) -> tuple[int, int]:
        """Leading and runner-up vote counts."""
        if self.counts.shape[0] == 2:
            a, b = int(self.counts[0]), int(self.counts[1])
            return (a, b) if a >= b else (b, a)
        top = np.sort(self.counts)[::-1]
        return int(top[0]), int(top[1])


@dataclass(frozen=True)
class LazyResult:
    prediction: int
    votes_used: int
    stopped_early: bool


def _validate(ensemble: Ensemble, x, table: StoppingTable | None):
    if len(ensemble) == 0:
        raise ValidationError("empty ensemble")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != ensemble.num_features:
        raise ValidationError(f"expected a vector of {ensemble.num_features} features, got shape {x.shape}")
    if table is not None and table.m != len(ensemble):
        raise ValidationError(f"table built for m={table.m} but ensemble has {len(ensemble)} trees")
    return x


def lazy_evaluate(ensemble: Ensemble, x, table: StoppingTable, start_index: int = 0) -> LazyResult:
    """Vote trees in ensemble order from ``start_index`` (wrapping) until the
    table permits stopping or every tree has voted."""
    x = _validate(ensemble, x, table)
    trees = ensemble.trees
    m = len(trees)
    tally = VoteTally.empty(ensemble.num_classes)
    start = int(start_index) % m
    n_min = table.n_min
    for i in range(m):
        tally.add(trees[(start + i) % m].predict_one(x))
        n = i + 1
        if n < n_min or n == m:
            continue
        v_lead, v_run = tally.top_two()
        if table.should_stop(v_lead, v_run, n):
            return LazyResult(tally.leader(), n, True)
    return LazyResult(tally.leader(), m, False)


def full_evaluate(ensemble: Ensemble, x) -> int:
    """Majority over every tree; ties go to the lowest class index."""
    x = _validate(ensemble, x, None)
    tally = VoteTally.empty(ensemble.num_classes)
    for t in ensemble.trees:
        tally.add(t.predict_one(x))
    return tally.leader()


class LazyEvaluator:
    """Permutes the ensemble once, then spends one random number per prediction
    (the start index into that permutation)."""

    def __init__(self, ensemble: Ensemble, table: StoppingTable, seed: int = 0):
        if table.m != len(ensemble):
            raise ValidationError(f"table built for m={table.m} but ensemble has {len(ensemble)} trees")
        self.ensemble = ensemble.permuted(seed)
        self.table = table
        self.rng = np.random.default_rng([seed, 1])

    def __call__(self, x) -> LazyResult:
        start = int(self.rng.integers(len(self.ensemble)))
        return lazy_evaluate(self.ensemble, x, self.table, start)


Stage = Literal["subcommittee", "full"]


def committee_evaluate(partitions: Sequence[Ensemble], x, table_sub: StoppingTable,
                       seed=None) -> tuple[int, Stage]:
    """Two-stage evaluation over ensemble partitions.

    A randomly chosen partition votes lazily; if it does not stop early, every
    tree of every partition votes once and the full majority is returned.
    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if not partitions:
        raise ValidationError("need at least one partition")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chosen = partitions[int(rng.integers(len(partitions)))]
    if table_sub.m != len(chosen):
        raise ValidationError(f"table built for m={table_sub.m} but partition has {len(chosen)} trees")
    result = lazy_evaluate(chosen, x, table_sub, int(rng.integers(len(chosen))))
    if result.stopped_early:
        return result.prediction, "subcommittee"
    return full_evaluate(merge_all(partitions), x), "full"


def merge_all(partitions: Sequence[Ensemble]) -> Ensemble:
    merged = partitions[0]
    for p in partitions[1:]:
        merged = merged + p
    return merged


class CommitteeEvaluator:
    """Committee evaluation with one stopping table per distinct partition size.

    Random reducer keys give partitions of unequal size, so a single table
    cannot serve them all.
    """

    def __init__(self, partitions: Sequence[Ensemble], rule: Rule | str, alpha: float, seed: int = 0):
        self.partitions = [p for p in partitions if len(p) > 0]
        if not self.partitions:
            raise ValidationError("all partitions are empty")
        self.rule = Rule.parse(rule)
        self.alpha = alpha
        self.num_classes = self.partitions[0].num_classes
        self.full = merge_all(self.partitions)
        self.rng = np.random.default_rng(seed)

    def __call__(self, x) -> tuple[LazyResult, Stage]:
        chosen = self.partitions[int(self.rng.integers(len(self.partitions)))]
        table = cached_table(self.rule, self.alpha, len(chosen), self.num_classes)
        result = lazy_evaluate(chosen, x, table, int(self.rng.integers(len(chosen))))
        if result.stopped_early:
            return result, "subcommittee"
        return LazyResult(full_evaluate(self.full, x), len(chosen) + len(self.full), False), "full"
