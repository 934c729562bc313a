import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcclab.analytic import (
    C_RTO,
    ModelDomainError,
    SeriesMode,
    ca_series,
    e_dss,
    e_xss,
    ew_quadratic,
    ew_residual,
    expected_cycle,
    mc_cycle_oracle,
    mc_rto_cycle_oracle,
    mc_truncated_geometric,
    p_irto,
    solve_ew,
    throughput_no_rto,
    throughput_rto,
    wca,
)

# positive roots found by 200-step bisection in exact rational arithmetic
BISECTION_ROOTS = {
    (0.01, 1): 101.91722628444893,
    (0.01, 2): 51.07768003385682,
    (0.05, 1): 21.919994821335667,
    (1e-4, 1): 10001.916671993476,
    (0.001, 2): 501.07526777494166,
}


@pytest.mark.parametrize("key", sorted(BISECTION_ROOTS))
def test_solve_ew_matches_bisection(key):
    p, b = key
    assert solve_ew(p, b) == pytest.approx(BISECTION_ROOTS[key], rel=1e-12)


@given(p=st.floats(1e-4, 0.05), b=st.sampled_from([1, 2]))
def test_solve_ew_residual(p, b):
    e_w = solve_ew(p, b)
    const = abs(ew_quadratic(p, b)[2])
    assert e_w > 0
    assert abs(ew_residual(e_w, p, b)) < 1e-9 * max(1.0, const)


def test_window_limit_is_one_over_b():
    # leading balance: (b p / 2) W^2 + (b - 1/2) W - 1/p = 0 gives p W -> 1/b
    for b in (1, 2, 3):
        assert 1e-6 * solve_ew(1e-6, b) == pytest.approx(1.0 / b, rel=1e-4)


@given(p=st.floats(1e-3, 0.05), v=st.floats(0.0, 5.0), dv=st.floats(0.1, 5.0))
def test_variance_lowers_window(p, v, dv):
    assert solve_ew(p, 1, v + dv) < solve_ew(p, 1, v)


def test_solve_ew_domain_errors():
    with pytest.raises(ModelDomainError):
        solve_ew(0.0)
    with pytest.raises(ModelDomainError):
        solve_ew(0.01, 0.5)
    with pytest.raises(ModelDomainError):
        solve_ew(0.01, 1, -1.0)
    with pytest.raises(ModelDomainError):
        # a huge variance pushes the constant term positive
        solve_ew(0.5, 1, 1e6)


def test_expected_cycle_relations():
    assert expected_cycle(0.5, 1, 3.0).e_alpha == 2.0
    cyc = expected_cycle(0.01, 1, 80.0)
    assert cyc.e_beta == 40.0
    cyc = expected_cycle(0.02, 2, 30.0, rtt=0.1)
    assert cyc.e_n == pytest.approx(1 + 0.02 * cyc.e_beta)
    assert cyc.e_x == pytest.approx(1 + 2 * cyc.e_n)
    assert cyc.e_y == pytest.approx(cyc.e_alpha + cyc.e_beta + cyc.e_w)
    assert cyc.e_a == pytest.approx(cyc.e_x * 0.1)


def test_no_rto_throughput_examples():
    pred = throughput_no_rto(0.01, 1, 0.1, 1460)
    assert pred.t_p_asymptotic == pytest.approx(1_460_000.0)
    assert pred.c == 1.0
    half = throughput_no_rto(0.01, 2, 0.1, 1460)
    assert half.t_p_asymptotic == pytest.approx(pred.t_p_asymptotic / 2)
    deep = throughput_no_rto(1e-4, 1, 0.1, 1460)
    assert abs(deep.t_p_exact / deep.t_p_asymptotic - 1) < 0.1


def test_no_rto_exact_approaches_asymptote():
    ratios = [throughput_no_rto(p).t_p_exact / throughput_no_rto(p).t_p_asymptotic for p in (1e-2, 1e-3, 1e-4)]
    assert abs(ratios[2] - 1) < abs(ratios[1] - 1) < abs(ratios[0] - 1)


def test_cycle_oracle_alpha_geometric():
    stats = mc_cycle_oracle(0.5, 1, n_cycles=100_000, seed=1)
    assert stats.e_alpha == pytest.approx(2.0, abs=0.02)


def test_cycle_oracle_rounds_at_high_loss():
    p = 0.3
    model = expected_cycle(p, 1, solve_ew(p, 1))
    stats = mc_cycle_oracle(p, 1, n_cycles=100_000, seed=2)
    assert stats.e_x == pytest.approx(model.e_x, rel=0.05)


def test_cycle_oracle_variance_feedback():
    # plugging the oracle's V[X] back moves E[W] down by a small, finite amount
    p = 0.01
    stats = mc_cycle_oracle(p, 1, n_cycles=20_000, seed=3)
    base = solve_ew(p, 1)
    fed = solve_ew(p, 1, stats.v_x)
    assert 0 < base - fed < 0.05 * base


def test_cycle_oracle_needs_enough_cycles():
    with pytest.raises(ValueError):
        mc_cycle_oracle(0.01, n_cycles=100)


def test_cycle_oracle_is_seeded():
    a = mc_cycle_oracle(0.02, n_cycles=10_000, seed=9)
    b = mc_cycle_oracle(0.02, n_cycles=10_000, seed=9)
    assert a == b


# -- timeout model --------------------------------------------------------


def test_wca_endpoints():
    assert wca(0, 7.0, 0.1) == 7.0
    assert wca(10_000, 7.0, 0.1) == pytest.approx(10.0)
    for n in range(5):
        assert wca(n, 10.0, 0.1) == pytest.approx(10.0)


@given(w_s=st.floats(1.0, 500.0), p=st.floats(0.001, 0.5), n=st.integers(0, 200))
def test_wca_moves_toward_fixed_point(w_s, p, n):
    step = wca(n + 1, w_s, p) - wca(n, w_s, p)
    target = 1.0 / p - w_s
    if abs(target) > 1e-9 * (1 + w_s):
        assert step == 0 or math.copysign(1, step) == math.copysign(1, target)


@pytest.mark.parametrize("mode", list(SeriesMode))
def test_p_irto_first_round(mode):
    assert p_irto(1, 12.0, 0.05, mode) == pytest.approx(0.05 ** 2 * 12.0)


def test_p_irto_literal_tail_tends_to_p():
    assert p_irto(100_000, 5.0, 0.02, SeriesMode.LITERAL) == pytest.approx(0.02, rel=1e-6)


@given(w_s=st.integers(1, 40), p=st.floats(0.05, 0.5))
@settings(max_examples=25, deadline=None)
def test_p_irto_survival_is_a_distribution(w_s, p):
    total = math.fsum(p_irto(k, float(w_s), p, SeriesMode.SURVIVAL) for k in range(1, 300))
    assert total <= 1.0 + 1e-12


def test_ss_sums_small_cases():
    assert e_xss(0.5) == pytest.approx(1.0)
    assert e_dss(0.5) == pytest.approx(0.25)
    assert e_xss(0.999) == pytest.approx(1.0, abs=1e-2)
    assert e_dss(0.999) == pytest.approx(0.0, abs=1e-2)


@pytest.mark.parametrize("p", [0.3, 0.1, 0.01])
def test_ss_sums_match_monte_carlo(p):
    x, d = mc_truncated_geometric(p, 1_000_000, seed=4)
    assert x == pytest.approx(e_xss(p), rel=0.01)
    assert d == pytest.approx(e_dss(p), rel=0.01)


def test_survival_series_is_truncation_stable():
    tight = ca_series(0.3, SeriesMode.SURVIVAL, 1e-10)
    assert not tight.diverged
    longer = ca_series(0.3, SeriesMode.SURVIVAL, 1e-10, k_cap=2 * tight.terms)
    assert abs(longer.e_xca - tight.e_xca) < 1e-10 * max(1.0, tight.e_xca)
    assert abs(longer.e_dca - tight.e_dca) < 1e-10 * max(1.0, tight.e_dca)


def test_literal_series_reports_divergence():
    lit = ca_series(0.1, SeriesMode.LITERAL)
    sur = ca_series(0.1, SeriesMode.SURVIVAL)
    assert lit.diverged and not sur.diverged
    assert lit.terms == 100
    assert lit.e_dca != pytest.approx(sur.e_dca, rel=0.01)


def test_survival_series_matches_rto_oracle():
    x, d = mc_rto_cycle_oracle(0.1, 200_000, seed=5)
    series = ca_series(0.1, SeriesMode.SURVIVAL)
    assert d == pytest.approx(series.e_dca, rel=0.03)
    assert x == pytest.approx(series.e_xca, rel=0.03)


def test_rto_asymptote_value():
    pred = throughput_rto(0.01, 0.1, 1460)
    assert pred.t_rto_asymptotic == pytest.approx(715_400.0)
    assert pred.lim == 100
    assert C_RTO == 0.49


@pytest.mark.parametrize("p", [0.05, 0.01, 0.002])
def test_rto_model_below_no_rto_model(p):
    assert throughput_rto(p).t_rto_asymptotic < throughput_no_rto(p).t_p_asymptotic
    assert throughput_rto(p).t_rto_exact < throughput_no_rto(p).t_p_exact


@pytest.mark.slow
def test_both_models_scale_as_one_over_p():
    ps = np.geomspace(1e-4, 1e-2, 5)
    for fn in (lambda p: throughput_no_rto(p).t_p_exact, lambda p: throughput_rto(p).t_rto_exact):
        slope = np.polyfit(np.log(ps), np.log([fn(p) for p in ps]), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.02)
