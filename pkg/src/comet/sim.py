"""Monte-Carlo comparison of lazy evaluation rules on simulated ensembles.

Each trial draws the ensemble's positive-vote share ``p ~ U[0, 1]``; the true
label is 1 iff ``p >= 0.5``. Members vote Bernoulli(p) one at a time until the
stopping table fires. The full-ensemble prediction is taken from the same
realization: the lazy prefix plus the remaining ``m - n`` votes, which are
Binomial(m - n, p) given the prefix.
"""

from __future__ import annotations

import csv
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ValidationError
from .stopping import Rule, StoppingTable, cached_table

# Trials per independently seeded chunk. Fixed so results do not depend on the worker count.
CHUNK_TRIALS = 50_000
# Upper bound on (active trials x votes) drawn per vectorized step.
STEP_BUDGET = 4_000_000
SWEEP_COLUMNS = ("rule", "m", "alpha", "frac_evaluated", "rel_error", "lazy_acc", "full_acc")


@dataclass(frozen=True)
class SimConfig:
    m: int
    alpha: float
    rule: Rule
    trials: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rule", Rule.parse(self.rule))
        if self.m < 1:
            raise ValidationError("m must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError("alpha must lie in (0, 1)")
        if self.trials < 1:
            raise ValidationError("trials must be >= 1")


@dataclass
class SimReport:
    config: SimConfig
    trials: int
    mean_fraction: float
    lazy_acc: float
    full_acc: float
    rel_error: float
    disagreement: float
    histogram: np.ndarray = field(repr=False)

    @property
    def mean_votes(self) -> float:
        return self.mean_fraction * self.config.m

    def row(self) -> dict:
        return {
            "rule": self.config.rule.value,
            "m": self.config.m,
            "alpha": self.config.alpha,
            "frac_evaluated": self.mean_fraction,
            "rel_error": self.rel_error,
            "lazy_acc": self.lazy_acc,
            "full_acc": self.full_acc,
        }


def relative_error(lazy_acc: float, full_acc: float) -> float:
    """Relative increase in error from lazy evaluation: ``1 - lazy/full``."""
    if full_acc <= 0:
        raise ValidationError("relative error is undefined when full accuracy is 0")
    return 1.0 - lazy_acc / full_acc


def _stop_lookup(table: StoppingTable) -> np.ndarray:
    """Per-n leading-count threshold with n_min and exhaustion folded in."""
    k = np.asarray(table.k_min, dtype=np.int64).copy()
    k[: table.n_min] = table.m + 1
    k[table.m] = 0  # all members voted
    return k


def simulate_votes(p: np.ndarray, table: StoppingTable, rng: np.random.Generator):
    """Run lazy voting for every share in ``p``.

    Returns ``(ones, votes_used)``: positive votes seen and votes consumed
    when each trial stopped.
    """
    m = table.m
    trials = p.shape[0]
    if table.n_min >= m:
        return rng.binomial(m, p), np.full(trials, m, dtype=np.int64)
    k_min = _stop_lookup(table)
    ones = np.zeros(trials, dtype=np.int64)
    used = np.zeros(trials, dtype=np.int64)
    active = np.arange(trials)
    done = 0
    step = max(min(table.n_min, m), 16)
    while active.size:
        k = min(step, m - done, max(16, STEP_BUDGET // active.size))
        draws = rng.random((active.size, k)) < p[active, None]
        cum = ones[active, None] + np.cumsum(draws, axis=1)
        n = np.arange(done + 1, done + k + 1)
        lead = np.maximum(cum, n - cum)
        stop = lead >= k_min[n]
        hit = stop.any(axis=1)
        first = np.argmax(stop, axis=1)
        rows = active[hit]
        ones[rows] = cum[hit, first[hit]]
        used[rows] = done + 1 + first[hit]
        keep = ~hit
        ones[active[keep]] = cum[keep, -1]
        active = active[keep]
        done += k
        step *= 2
    return ones, used


def _simulate_chunk(args):
    cfg, seed_seq, count = args
    rng = np.random.default_rng(seed_seq)
    table = cached_table(cfg.rule, cfg.alpha, cfg.m)
    p = rng.random(count)
    truth = (p >= 0.5).astype(np.int64)
    ones, used = simulate_votes(p, table, rng)
    full_ones = ones + rng.binomial(cfg.m - used, p)
    # ties go to class 0, the lowest index
    lazy = (ones > used - ones).astype(np.int64)
    full = (2 * full_ones > cfg.m).astype(np.int64)
    return (
        int((lazy == truth).sum()),
        int((full == truth).sum()),
        int((lazy != full).sum()),
        int(used.sum()),
        np.bincount(used, minlength=cfg.m + 1),
    )


def simulate(cfg: SimConfig, workers: int = 1) -> SimReport:
    """Estimate savings and relative error of ``cfg.rule`` over ``cfg.trials`` trials."""
    n_chunks = -(-cfg.trials // CHUNK_TRIALS)
    seeds = np.random.SeedSequence(cfg.seed).spawn(n_chunks)
    sizes = [CHUNK_TRIALS] * (n_chunks - 1) + [cfg.trials - CHUNK_TRIALS * (n_chunks - 1)]
    jobs = [(cfg, s, k) for s, k in zip(seeds, sizes)]
    cached_table(cfg.rule, cfg.alpha, cfg.m)
    if workers > 1 and n_chunks > 1:
        with ProcessPoolExecutor(max_workers=min(workers, n_chunks)) as pool:
            parts = list(pool.map(_simulate_chunk, jobs))
    else:
        parts = [_simulate_chunk(j) for j in jobs]
    lazy_ok = sum(x[0] for x in parts)
    full_ok = sum(x[1] for x in parts)
    disagree = sum(x[2] for x in parts)
    votes = sum(x[3] for x in parts)
    hist = np.sum([x[4] for x in parts], axis=0)
    lazy_acc = lazy_ok / cfg.trials
    full_acc = full_ok / cfg.trials
    return SimReport(
        cfg,
        cfg.trials,
        votes / (cfg.trials * cfg.m),
        lazy_acc,
        full_acc,
        relative_error(lazy_acc, full_acc),
        disagree / cfg.trials,
        hist,
    )


def sweep(rules: Iterable, m_values: Iterable[int], alphas: Iterable[float], trials: int,
          seed: int, workers: int = 1) -> list[SimReport]:
    """One report per (rule, m, alpha), in that nesting order."""
    reports = []
    for rule, m, alpha in itertools.product(list(rules), list(m_values), list(alphas)):
        reports.append(simulate(SimConfig(m, alpha, rule, trials, seed), workers))
    return reports


SWEEP_PRESET = (
    # savings against ensemble size at alpha = 1e-4
    {"m_values": (100, 500, 1000, 5000, 10000), "alphas": (1e-4,)},
    # savings and relative error against alpha at m = 10,000
    {"m_values": (10000,), "alphas": (1e-2, 1e-3, 1e-4)},
)


def write_sweep_csv(reports: Iterable[SimReport], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.row())
    return path


def write_histogram_csv(report: SimReport, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["votes_used", "count"])
        for votes, count in enumerate(report.histogram.tolist()):
            if count:
                w.writerow([votes, count])
    return path
