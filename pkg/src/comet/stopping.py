"""Early-stopping rules for lazy ensemble evaluation.

Gaussian rules (G1, G2 and their finite-population-corrected variants) stop
once a normal-approximation confidence bound on the leading class's vote share
clears one half. The Bayesian rule (MLEE) stops once the Beta-Binomial
posterior predictive probability that the leading class keeps a strict
majority reaches ``1 - alpha``. Both are precomputed into a
:class:`StoppingTable` of minimum leading-class counts per number of votes.
"""

from __future__ import annotations

import csv
import enum
import functools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .errors import UnsupportedError, ValidationError

# Fraction of the ensemble beyond which the finite population correction applies.
FPC_FRACTION = 0.05


class Rule(str, enum.Enum):
    G1 = "G1"
    G2 = "G2"
    G1_FPC = "G1-FPC"
    G2_FPC = "G2-FPC"
    MLEE = "MLEE"
    FULL = "FULL"

    @classmethod
    def parse(cls, text) -> "Rule":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).upper().replace("_", "-"))
        except ValueError:
            names = ", ".join(r.value.lower() for r in cls)
            raise ValidationError(f"unknown rule {text!r}; expected one of {names}") from None

    @property
    def is_gaussian(self) -> bool:
        return self in (Rule.G1, Rule.G2, Rule.G1_FPC, Rule.G2_FPC)

    @property
    def one_tailed(self) -> bool:
        return self in (Rule.G1, Rule.G1_FPC)

    @property
    def fpc(self) -> bool:
        return self in (Rule.G1_FPC, Rule.G2_FPC)


LAZY_RULES = (Rule.G1, Rule.G2, Rule.G1_FPC, Rule.G2_FPC, Rule.MLEE)


# Acklam's rational approximation to the inverse normal CDF, polished with one
# Halley step against erfc.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def normal_quantile(p: float) -> float:
    """Inverse of the standard normal CDF."""
    if not 0.0 < p < 1.0:
        raise ValidationError(f"quantile level must lie in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    # Halley refinement; evaluate the error in the tail that is better conditioned
    if x < 0:
        e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    else:
        e = (1.0 - p) - 0.5 * math.erfc(x / math.sqrt(2.0))
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def critical_value(alpha: float, one_tailed: bool) -> float:
    """``z_alpha`` (one tail) or ``z_{alpha/2}`` (two tails)."""
    tail = alpha if one_tailed else alpha / 2.0
    return -normal_quantile(tail)


def min_votes(alpha: float) -> int:
    """Votes required before a Gaussian rule may stop."""
    _check_alpha(alpha)
    if alpha >= 1e-2:
        return 15
    if alpha >= 1e-3:
        return 30
    return 45


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")


@dataclass(frozen=True)
class StopConfig:
    rule: Rule
    alpha: float
    ensemble_size: int

    def __post_init__(self):
        object.__setattr__(self, "rule", Rule.parse(self.rule))
        _check_alpha(self.alpha)
        if self.ensemble_size < 1:
            raise ValidationError(f"ensemble size must be >= 1, got {self.ensemble_size}")

    @property
    def n_min(self) -> int:
        if self.rule.is_gaussian:
            return min_votes(self.alpha)
        if self.rule is Rule.MLEE:
            return 1
        return self.ensemble_size


# --- Gaussian rules ---------------------------------------------------------

def _glee_lower_bound(v_lead, v_run, m, z, fpc):
    """``p_hat - rho * delta``; works elementwise on arrays."""
    n = v_lead + v_run
    p_hat = v_lead / n
    delta = z * np.sqrt(p_hat * (1.0 - p_hat)) / np.sqrt(n)
    if fpc:
        # m == 1 implies n == m, which callers resolve before getting here
        rho = np.where(n > FPC_FRACTION * m, np.sqrt(np.maximum(m - n, 0) / max(m - 1, 1)), 1.0)
    else:
        rho = 1.0
    return p_hat - rho * delta


def _check_counts(v_lead, v_run, m):
    if v_lead < 0 or v_run < 0:
        raise ValidationError("vote counts must be non-negative")
    if v_lead + v_run > m:
        raise ValidationError(f"{v_lead + v_run} votes exceed ensemble size {m}")
    if v_lead < v_run:
        raise ValidationError("v_lead must be >= v_run (leading class first)")


def glee_should_stop(v_lead: int, v_run: int, m: int, cfg: StopConfig) -> bool:
    """Direct evaluation of a Gaussian stopping rule."""
    _check_counts(v_lead, v_run, m)
    if not cfg.rule.is_gaussian:
        raise ValidationError(f"{cfg.rule.value} is not a Gaussian rule")
    n = v_lead + v_run
    if n >= m:
        return True
    if n < min_votes(cfg.alpha):
        return False
    z = critical_value(cfg.alpha, cfg.rule.one_tailed)
    return bool(_glee_lower_bound(float(v_lead), float(v_run), m, z, cfg.rule.fpc) > 0.5)


# --- Bayesian rule -------------------------------------------------------------

@njit(cache=True)
def _bb_log_norm(r, a, b):
    return (math.lgamma(r + 1.0) - math.lgamma(a + b + r)
            + math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b))


@njit(cache=True)
def _bb_log_term(j, r, a, b):
    return (math.lgamma(a + j) + math.lgamma(b + r - j)
            - math.lgamma(j + 1.0) - math.lgamma(r - j + 1.0))


@njit(cache=True)
def _win_prob(v_lead, v_run, m):
    r = m - v_lead - v_run
    # smallest number of further lead votes giving a strict majority of m
    need = m // 2 + 1 - v_lead
    if need <= 0:
        return 1.0
    if need > r:
        return 0.0
    a = v_lead + 1.0
    b = v_run + 1.0
    log_norm = _bb_log_norm(r, a, b)
    total = 0.0
    for j in range(r, need - 1, -1):
        total += math.exp(log_norm + _bb_log_term(j, r, a, b))
    return min(total, 1.0)


@njit(cache=True)
def _bb_pmf(r, a, b):
    log_norm = _bb_log_norm(r, a, b)
    out = np.empty(r + 1)
    for j in range(r + 1):
        out[j] = math.exp(log_norm + _bb_log_term(j, r, a, b))
    return out


@njit(cache=True)
def _mlee_thresholds(m, alpha, n_min):
    never = m + 1
    k_min = np.full(m + 1, never, dtype=np.int64)
    target = 1.0 - alpha
    guess = 0
    for n in range(max(n_min, 1), m):
        lo = (n + 1) // 2
        g = min(max(guess, lo), n)
        if _win_prob(g, n - g, m) >= target:
            while g - 1 >= lo and _win_prob(g - 1, n - g + 1, m) >= target:
                g -= 1
            k_min[n] = g
            guess = g
        else:
            while g < n and not _win_prob(g + 1, n - g - 1, m) >= target:
                g += 1
            if g < n:
                k_min[n] = g + 1
                guess = g + 1
            else:
                guess = n + 1
    k_min[m] = (m + 1) // 2
    return k_min


def _check_binary(num_classes):
    if num_classes > 2:
        raise UnsupportedError("MLEE supports binary classification only")


def beta_binomial_pmf(r: int, a: float, b: float) -> np.ndarray:
    """Beta-Binomial probabilities for ``0..r`` successes, via log-gamma."""
    if r < 0 or a <= 0 or b <= 0:
        raise ValidationError("need r >= 0 and positive shape parameters")
    return _bb_pmf(int(r), float(a), float(b))


def mlee_prob_leading_wins(v_lead: int, v_run: int, m: int, num_classes: int = 2) -> float:
    """Posterior predictive probability that the leading class ends with a
    strict majority of all ``m`` votes, under a uniform prior on its share."""
    _check_binary(num_classes)
    if v_lead < 0 or v_run < 0:
        raise ValidationError("vote counts must be non-negative")
    if v_lead + v_run > m:
        raise ValidationError(f"{v_lead + v_run} votes exceed ensemble size {m}")
    return float(_win_prob(int(v_lead), int(v_run), int(m)))


def mlee_should_stop(v_lead: int, v_run: int, m: int, alpha: float, num_classes: int = 2) -> bool:
    _check_binary(num_classes)
    _check_counts(v_lead, v_run, m)
    _check_alpha(alpha)
    n = v_lead + v_run
    if n >= m:
        return True
    if n < 1:
        return False
    return bool(_win_prob(int(v_lead), int(v_run), int(m)) >= 1.0 - alpha)


def should_stop(v_lead: int, v_run: int, cfg: StopConfig, num_classes: int = 2) -> bool:
    """Direct (table-free) stopping decision for any rule."""
    m = cfg.ensemble_size
    if cfg.rule.is_gaussian:
        return glee_should_stop(v_lead, v_run, m, cfg)
    if cfg.rule is Rule.MLEE:
        return mlee_should_stop(v_lead, v_run, m, cfg.alpha, num_classes)
    _check_counts(v_lead, v_run, m)
    return v_lead + v_run >= m


# --- Threshold tables -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StoppingTable:
    """``k_min[n]`` is the fewest leading-class votes that permit stopping after
    ``n`` votes; ``m + 1`` marks "never". Entries below ``n_min`` are "never"."""

    rule: Rule
    alpha: float
    m: int
    n_min: int
    k_min: np.ndarray

    @property
    def never(self) -> int:
        return self.m + 1

    def should_stop(self, v_lead: int, v_run: int, votes_cast: int | None = None) -> bool:
        """Table lookup. ``votes_cast`` counts every vote (multiclass); the
        Gaussian test itself only sees the leading and runner-up tallies."""
        n = v_lead + v_run
        if (n if votes_cast is None else votes_cast) >= self.m:
            return True
        if n < self.n_min:
            return False
        return v_lead >= self.k_min[n]

    def rows(self):
        """``(n, k_min)`` pairs for ``n`` from ``n_min`` (or ``m`` if smaller) to ``m``."""
        for n in range(min(self.n_min, self.m), self.m + 1):
            k = int(self.k_min[n])
            yield n, (k if k <= self.m else None)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "k_min"])
            for n, k in self.rows():
                w.writerow([n, "never" if k is None else k])
        return path


def _glee_closed_form(cfg: StopConfig) -> np.ndarray:
    """Gaussian thresholds for every n by inverting the bound.

    With ``c = rho * z / sqrt(n)`` the condition ``p - c*sqrt(p(1-p)) > 1/2``
    is equivalent to ``p > 1/2 + c / (2*sqrt(1 + c^2))``; the candidate from
    that closed form is then nudged against the direct predicate so floating
    point round-off cannot shift a boundary.
    """
    m, rule = cfg.ensemble_size, cfg.rule
    n_min = cfg.n_min
    never = m + 1
    k_min = np.full(m + 1, never, dtype=np.int64)
    k_min[m] = (m + 1) // 2
    if n_min >= m:
        return k_min
    z = critical_value(cfg.alpha, rule.one_tailed)
    n = np.arange(n_min, m, dtype=np.float64)
    if rule.fpc:
        rho = np.where(n > FPC_FRACTION * m, np.sqrt((m - n) / max(m - 1, 1)), 1.0)
    else:
        rho = np.ones_like(n)
    c = rho * z / np.sqrt(n)
    share = 0.5 + c / (2.0 * np.sqrt(1.0 + c * c))
    k = np.floor(n * share).astype(np.int64) + 1
    lo = (n.astype(np.int64) + 1) // 2
    k = np.clip(k, lo, n.astype(np.int64) + 1)

    def stops(v):
        v = np.minimum(v, n)  # v == n + 1 is out of range; masked by callers
        return _glee_lower_bound(v, n - v, m, z, rule.fpc) > 0.5

    for _ in range(4):
        in_range = k <= n
        up = in_range & ~stops(k)
        k = np.where(up, k + 1, k)
        down = (k - 1 >= lo) & stops(k - 1) & (k - 1 <= n)
        k = np.where(down, k - 1, k)
        if not (up.any() or down.any()):
            break
    k = np.where(k <= n, k, never)
    k_min[n_min:m] = k
    return k_min


def _bisect_table(cfg: StopConfig, num_classes: int) -> np.ndarray:
    """Per-n binary search over the direct rule; relies on monotonicity in v_lead."""
    m = cfg.ensemble_size
    k_min = np.full(m + 1, m + 1, dtype=np.int64)
    for n in range(min(cfg.n_min, m), m + 1):
        lo, hi = (n + 1) // 2, n + 1
        while lo < hi:
            mid = (lo + hi) // 2
            if should_stop(mid, n - mid, cfg, num_classes):
                hi = mid
            else:
                lo = mid + 1
        k_min[n] = lo if lo <= n else m + 1
    return k_min


def build_table(cfg: StopConfig, num_classes: int = 2, method: str = "fast") -> StoppingTable:
    """Precompute the stopping thresholds for ``cfg``.

    ``method="fast"`` uses the closed form (Gaussian, O(m)) or the incremental
    O(m^2) Beta-Binomial scan (MLEE); ``method="bisect"`` binary-searches the
    direct rule for every n and exists to cross-check the fast path.
    """
    rule, m = cfg.rule, cfg.ensemble_size
    if rule is Rule.MLEE:
        _check_binary(num_classes)
    if method == "bisect":
        k_min = _bisect_table(cfg, num_classes)
    elif method != "fast":
        raise ValidationError(f"unknown table method {method!r}")
    elif rule.is_gaussian:
        k_min = _glee_closed_form(cfg)
    elif rule is Rule.MLEE:
        k_min = _mlee_thresholds(m, cfg.alpha, cfg.n_min)
    else:
        k_min = np.full(m + 1, m + 1, dtype=np.int64)
        k_min[m] = (m + 1) // 2
    k_min.flags.writeable = False
    return StoppingTable(rule, cfg.alpha, m, min(cfg.n_min, m), k_min)


@functools.lru_cache(maxsize=64)
def cached_table(rule: Rule, alpha: float, m: int, num_classes: int = 2) -> StoppingTable:
    return build_table(StopConfig(rule, alpha, m), num_classes)
