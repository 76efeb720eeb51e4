import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special, stats

from comet.errors import UnsupportedError, ValidationError
from comet.stopping import (LAZY_RULES, Rule, StopConfig, beta_binomial_pmf, build_table,
                            cached_table, critical_value, glee_should_stop, min_votes,
                            mlee_prob_leading_wins, mlee_should_stop, normal_quantile, should_stop)

GAUSSIAN = (Rule.G1, Rule.G2, Rule.G1_FPC, Rule.G2_FPC)


def test_rule_parse():
    assert Rule.parse("g1-fpc") is Rule.G1_FPC
    assert Rule.parse("G2_FPC") is Rule.G2_FPC
    assert Rule.parse("mlee") is Rule.MLEE
    with pytest.raises(ValueError):
        Rule.parse("g3")


@pytest.mark.parametrize("alpha, n", [(0.05, 15), (1e-2, 15), (0.009, 30), (1e-3, 30), (9e-4, 45), (1e-4, 45)])
def test_min_votes(alpha, n):
    assert min_votes(alpha) == n


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 2.0])
def test_min_votes_invalid(alpha):
    with pytest.raises(ValidationError):
        min_votes(alpha)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-12, 1 - 1e-12))
def test_normal_quantile_vs_scipy(p):
    assert normal_quantile(p) == pytest.approx(stats.norm.ppf(p), abs=1e-9)


def test_critical_values():
    assert critical_value(0.01, True) == pytest.approx(2.3263478740, abs=1e-9)
    assert critical_value(0.01, False) == pytest.approx(2.5758293035, abs=1e-9)


def _glee_oracle(v_lead, v_run, m, alpha, rule):
    n = v_lead + v_run
    z = stats.norm.ppf(1 - (alpha if rule.one_tailed else alpha / 2))
    p = v_lead / n
    rho = math.sqrt((m - n) / (m - 1)) if rule.fpc and n > 0.05 * m else 1.0
    return p - rho * z * math.sqrt(p * (1 - p)) / math.sqrt(n)


def test_glee_worked_examples():
    cfg = StopConfig(Rule.G1_FPC, 0.01, 1000)
    assert _glee_oracle(29, 1, 1000, 0.01, Rule.G1_FPC) == pytest.approx(0.89043, abs=1e-5)
    assert glee_should_stop(29, 1, 1000, cfg)
    assert _glee_oracle(16, 14, 1000, 0.01, Rule.G1_FPC) == pytest.approx(0.32144, abs=1e-5)
    assert not glee_should_stop(16, 14, 1000, cfg)


def test_glee_exhaustion_any_rule():
    for rule in GAUSSIAN:
        assert glee_should_stop(50, 50, 100, StopConfig(rule, 0.01, 100))


def test_glee_fpc_applied():
    rho = math.sqrt(80 / 99)
    assert rho == pytest.approx(0.89893, abs=1e-5)
    # a case that the correction flips from continue to stop
    cfg_fpc = StopConfig(Rule.G1_FPC, 0.01, 100)
    cfg = StopConfig(Rule.G1, 0.01, 100)
    n = 60
    flips = [v for v in range(30, n + 1) if glee_should_stop(v, n - v, 100, cfg_fpc)
             != glee_should_stop(v, n - v, 100, cfg)]
    assert flips
    for v in flips:
        assert _glee_oracle(v, n - v, 100, 0.01, Rule.G1_FPC) > 0.5 >= _glee_oracle(v, n - v, 100, 0.01, Rule.G1)


def test_glee_below_n_min():
    assert not glee_should_stop(14, 0, 1000, StopConfig(Rule.G1, 0.01, 1000))
    assert glee_should_stop(15, 0, 1000, StopConfig(Rule.G1, 0.01, 1000))


def test_glee_invalid_counts():
    cfg = StopConfig(Rule.G1, 0.01, 10)
    with pytest.raises(ValidationError):
        glee_should_stop(8, 5, 10, cfg)


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 400), st.data(), st.sampled_from(GAUSSIAN), st.sampled_from([1e-2, 1e-3, 1e-4]))
def test_glee_matches_oracle(m, data, rule, alpha):
    n = data.draw(st.integers(min_votes(alpha), max(min_votes(alpha), m - 1)))
    if n >= m:
        return
    v = data.draw(st.integers((n + 1) // 2, n))
    bound = _glee_oracle(v, n - v, m, alpha, rule)
    if abs(bound - 0.5) < 1e-9:
        return
    assert glee_should_stop(v, n - v, m, StopConfig(rule, alpha, m)) == (bound > 0.5)


def test_mlee_hand_example():
    assert mlee_prob_leading_wins(2, 0, 4) == pytest.approx(0.9, abs=1e-9)
    np.testing.assert_allclose(beta_binomial_pmf(2, 3, 1), [0.1, 0.3, 0.6], atol=1e-12)


def test_mlee_certain_cases():
    assert mlee_prob_leading_wins(6, 0, 10) == 1.0
    assert mlee_prob_leading_wins(5, 3, 8) == 1.0
    assert mlee_prob_leading_wins(4, 4, 8) == 0.0
    for alpha in (0.5, 1e-9):
        assert mlee_should_stop(6, 0, 10, alpha)


def test_mlee_multiclass_unsupported():
    with pytest.raises(UnsupportedError):
        mlee_prob_leading_wins(2, 0, 4, num_classes=3)
    with pytest.raises(UnsupportedError):
        build_table(StopConfig(Rule.MLEE, 0.01, 10), num_classes=3)


def _bb_oracle(r, a, b):
    """Beta-Binomial pmf by numerical integration of Binomial x Beta."""
    out = []
    for j in range(r + 1):
        f = lambda q: stats.binom.pmf(j, r, q) * stats.beta.pdf(q, a, b)
        out.append(integrate.quad(f, 0, 1, epsabs=1e-13, epsrel=1e-12, limit=200)[0])
    return np.array(out)


def test_bb_pmf_random_triples():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        m = int(rng.integers(1, 201))
        n = int(rng.integers(0, m + 1))
        v_lead = int(rng.integers((n + 1) // 2, n + 1))
        v_run = n - v_lead
        r = m - n
        pmf = beta_binomial_pmf(r, v_lead + 1, v_run + 1)
        assert pmf.sum() == pytest.approx(1.0, abs=1e-9)
        if r <= 60:
            np.testing.assert_allclose(pmf, _bb_oracle(r, v_lead + 1, v_run + 1), atol=1e-9)
        exact = np.exp(special.gammaln(r + 1) - special.gammaln(np.arange(r + 1) + 1)
                       - special.gammaln(r - np.arange(r + 1) + 1)
                       + special.betaln(np.arange(r + 1) + v_lead + 1, r - np.arange(r + 1) + v_run + 1)
                       - special.betaln(v_lead + 1, v_run + 1))
        np.testing.assert_allclose(pmf, exact, atol=1e-12)
        assert 0.0 <= mlee_prob_leading_wins(v_lead, v_run, m) <= 1.0


def test_bb_large_m_no_overflow():
    p = mlee_prob_leading_wins(3000, 2900, 100_000)
    assert 0.0 <= p <= 1.0 and math.isfinite(p)


@pytest.mark.parametrize("rule", LAZY_RULES)
@pytest.mark.parametrize("m", [31, 64, 128])
def test_table_matches_direct(rule, m):
    cfg = StopConfig(rule, 0.01, m)
    table = build_table(cfg)
    for n in range(1, m + 1):
        for v in range((n + 1) // 2, n + 1):
            assert table.should_stop(v, n - v) == should_stop(v, n - v, cfg)


@pytest.mark.parametrize("rule", list(LAZY_RULES) + [Rule.FULL])
@pytest.mark.parametrize("alpha", [0.05, 1e-3, 1e-4])
def test_fast_equals_bisect(rule, alpha):
    cfg = StopConfig(rule, alpha, 300)
    np.testing.assert_array_equal(build_table(cfg).k_min, build_table(cfg, method="bisect").k_min)


@pytest.mark.parametrize("rule", LAZY_RULES)
def test_table_invariants(rule):
    m = 2000
    t = build_table(StopConfig(rule, 1e-3, m))
    assert t.k_min[m] <= math.ceil(m / 2) + 1
    for n in range(t.n_min, m):
        k = t.k_min[n]
        if k != t.never:
            assert n / 2 < k <= n
    # ratio is non-increasing between n and 2n well past n_min
    for n in range(200, m // 2, 97):
        if t.k_min[2 * n] != t.never and t.k_min[n] != t.never:
            assert t.k_min[2 * n] / (2 * n) <= t.k_min[n] / n + 1e-12


@settings(max_examples=150, deadline=None)
@given(st.sampled_from(LAZY_RULES), st.integers(2, 300), st.data())
def test_monotone_in_evidence(rule, m, data):
    cfg = StopConfig(rule, 0.01, m)
    n = data.draw(st.integers(1, m))
    v = data.draw(st.integers((n + 1) // 2, n - 1)) if n > 1 else 0
    if n > 1 and should_stop(v, n - v, cfg):
        assert should_stop(v + 1, n - v - 1, cfg)


@pytest.mark.parametrize("rule", GAUSSIAN)
@pytest.mark.parametrize("alpha", [1e-2, 1e-3, 1e-4])
def test_unanimous_stops_at_n_min(rule, alpha):
    t = build_table(StopConfig(rule, alpha, 5000))
    n_min = min_votes(alpha)
    assert t.should_stop(n_min, 0)
    assert not t.should_stop(n_min - 1, 0)
    assert all(t.k_min[n] == t.never for n in range(n_min))


@pytest.mark.parametrize("rule", LAZY_RULES)
def test_even_split_never_stops_early(rule):
    m = 400
    t = build_table(StopConfig(rule, 0.01, m))
    for n in range(2, m, 2):
        assert not t.should_stop(n // 2, n // 2)
    assert t.should_stop(m // 2, m // 2)


def test_table_rows_and_csv(tmp_path):
    m = 100_000
    t = cached_table(Rule.G1, 0.01, m)
    rows = list(t.rows())
    assert len(rows) == m - 15 + 1
    path = t.to_csv(tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "n,k_min"
    assert len(lines) == m - 15 + 2


def test_table_never_sentinel_csv(tmp_path):
    t = build_table(StopConfig(Rule.MLEE, 0.01, 1000))
    lines = t.to_csv(tmp_path / "t.csv").read_text().splitlines()
    assert lines[1] == "1,never"
    # a unanimous Gaussian tally always stops, so no sentinel appears from n_min on
    g = build_table(StopConfig(Rule.G2, 1e-4, 60))
    assert "never" not in g.to_csv(tmp_path / "g.csv").read_text()


def test_table_small_m_below_n_min():
    t = build_table(StopConfig(Rule.G1, 0.01, 10))
    assert t.n_min == 10
    assert not t.should_stop(9, 0)
    assert t.should_stop(5, 5)


def test_multiclass_glee_counts_only_top_two():
    cfg = StopConfig(Rule.G1, 0.01, 1000)
    t = build_table(cfg, num_classes=3)
    # 16 lead vs 0 runner-up after 40 votes cast stops even though 24 went elsewhere
    assert should_stop(16, 0, cfg, num_classes=3)
    assert t.should_stop(16, 0, votes_cast=40)


def test_stop_config_validation():
    with pytest.raises(ValidationError):
        StopConfig(Rule.G1, 0.0, 10)
    with pytest.raises(ValidationError):
        StopConfig(Rule.G1, 0.01, 0)
    assert StopConfig(Rule.MLEE, 0.01, 10).n_min == 1
    assert StopConfig(Rule.FULL, 0.01, 10).n_min == 10
