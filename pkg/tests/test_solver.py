import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ezddc.model import Shock, make_toy_model
from ezddc.preferences import DomainError, PreferenceSpec, aggregator, aggregator_inverse, utility
from ezddc.solver import (SolveConfig, analytic_margin, bellman_apply, block_bounds, check_uniqueness,
                          compute_bounds, contraction_margin, draw_block, solve)

from oracles import logit_value_function, simulated_fixed_point_se


def random_pairs(rng, lo, hi, n_states, n_pairs):
    """Ordered pairs V >= V' drawn inside [lo, hi]."""
    for _ in range(n_pairs):
        a = rng.uniform(lo, hi, n_states)
        b = rng.uniform(lo, hi, n_states)
        yield np.maximum(a, b), np.minimum(a, b)


def test_separable_gumbel_matches_logit_oracle():
    model = make_toy_model(alpha=0.0, rho=0.0, shocks=Shock.GUMBEL)
    cfg = SolveConfig(n_sim_eps=2500, seed=11)
    rep = solve(model, cfg)
    assert rep.converged
    exact = logit_value_function(model)
    se = simulated_fixed_point_se(model, exact, draw_block(model, 2500, 11))
    assert np.all(np.abs(rep.values - exact) <= 3 * se)


def test_oracle_standard_error_matches_replication_spread():
    model = make_toy_model(alpha=0.0, rho=0.0, shocks=Shock.GUMBEL)
    exact = logit_value_function(model)
    errs = np.array([solve(model, SolveConfig(n_sim_eps=400, seed=s)).values - exact for s in range(40)])
    se = simulated_fixed_point_se(model, exact, draw_block(model, 100_000, 999)) * np.sqrt(100_000 / 400)
    np.testing.assert_allclose(errs.std(axis=0), se, rtol=0.35)


def test_constant_value_without_heterogeneity():
    model = make_toy_model(alpha=0.2, rho=0.6).with_payoff(theta_d=0.0, theta_x=0.0, rc=0.0, sigma=0.0)
    spec = model.prefs
    c = 0.7
    TV = bellman_apply(model, np.full(3, c), draw_block(model, 50, 0))
    expected = aggregator(spec, 0.1 * utility(spec, 0.0) + 0.9 * aggregator_inverse(spec, c))
    np.testing.assert_allclose(TV, expected, rtol=1e-12)


def test_degenerate_bounds_coincide():
    model = make_toy_model(alpha=0.3, rho=0.6).with_payoff(theta_d=0.0, theta_x=0.0, rc=0.0, sigma=0.0)
    b = compute_bounds(model, 1000, 0)
    assert b.v_lower == pytest.approx(aggregator(model.prefs, utility(model.prefs, 0.0)), abs=1e-14)
    assert b.v_star_mc == pytest.approx(b.v_lower, abs=1e-14)
    # iteration from the ceiling 1/alpha reaches the fixed point only to within the tolerance
    cfg = SolveConfig(n_sim_eps=50)
    u = check_uniqueness(model, cfg)
    assert u["unique"] and u["gap"] <= cfg.tol_sup_norm
    np.testing.assert_allclose(u["lower"].values, 0.0, atol=1e-15)


def test_cara_analytic_upper_bound():
    b = compute_bounds(make_toy_model(alpha=0.1457, rho=0.5), 1000, 0)
    assert b.v_star == pytest.approx(1 / 0.1457)
    assert b.method_upper == "analytic"


def test_bounds_bracket_oracle():
    model = make_toy_model(alpha=0.0, rho=0.0, shocks=Shock.GUMBEL)
    b = compute_bounds(model, 100_000, 0)
    exact = logit_value_function(model)
    assert np.all(b.v_lower <= exact) and np.all(exact <= b.v_star)


@pytest.mark.parametrize("alpha,rho", [(0.1023, 0.5555), (0.8, 0.3), (0.4, 0.4), (0.0, 0.5)])
def test_block_bounds_are_preserved(alpha, rho):
    model = make_toy_model(alpha=alpha, rho=rho)
    eps = draw_block(model, 1000, 3)
    hi, lo = block_bounds(model, eps)
    assert np.all(bellman_apply(model, np.full(3, hi), eps) <= hi + 1e-12)
    assert np.all(bellman_apply(model, np.full(3, lo), eps) >= lo - 1e-12)


@pytest.mark.parametrize("alpha,rho", [(0.1023, 0.5555), (0.8, 0.3), (0.5, 0.5)])
def test_monotone_operator(alpha, rho):
    model = make_toy_model(alpha=alpha, rho=rho)
    eps = draw_block(model, 500, 1)
    hi, lo = block_bounds(model, eps)
    rng = np.random.default_rng(5)
    for V, W in random_pairs(rng, lo, hi, 3, 50):
        assert np.all(bellman_apply(model, V, eps) >= bellman_apply(model, W, eps))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 2 ** 32 - 1))
def test_monotone_operator_random_preferences(alpha, rho, seed):
    model = make_toy_model(alpha=alpha, rho=rho)
    eps = draw_block(model, 200, seed)
    hi, lo = block_bounds(model, eps)
    rng = np.random.default_rng(seed)
    for V, W in random_pairs(rng, lo, hi, 3, 5):
        assert np.all(bellman_apply(model, V, eps) >= bellman_apply(model, W, eps) - 1e-13)


@pytest.mark.parametrize("alpha,rho", [(0.3, 0.3), (0.1023, 0.5555)])
def test_lipschitz_within_analytic_bound(alpha, rho):
    model = make_toy_model(alpha=alpha, rho=rho)
    eps = draw_block(model, 1000, 2)
    hi, lo = block_bounds(model, eps)
    bound = analytic_margin(model.prefs)
    rng = np.random.default_rng(9)
    for V, W in random_pairs(rng, lo, hi, 3, 50):
        gap = np.max(np.abs(V - W))
        ratio = np.max(np.abs(bellman_apply(model, V, eps) - bellman_apply(model, W, eps))) / gap
        assert ratio <= bound + 1e-6


def test_dual_start_agreement():
    cfg = SolveConfig(n_sim_eps=1000, tol_sup_norm=1e-9)
    for a, r in [(0.5, 0.5), (0.1023, 0.5555), (0.8, 0.3)]:
        u = check_uniqueness(make_toy_model(alpha=a, rho=r), cfg)
        assert u["converged"] and u["unique"]
        assert u["gap"] <= 10 * cfg.tol_sup_norm


def test_start_at_fixed_point_stops_at_once():
    model = make_toy_model(alpha=0.1023, rho=0.5555)
    cfg = SolveConfig(n_sim_eps=500)
    rep = solve(model, cfg)
    again = solve(model, dataclasses.replace(cfg, start=rep.values))
    assert again.converged and again.iterations <= 2
    assert again.start == "custom"


def test_non_convergence_is_reported():
    rep = solve(make_toy_model(), SolveConfig(n_sim_eps=200, max_iters=3))
    assert not rep.converged and rep.iterations == 3


def test_solve_is_deterministic():
    model = make_toy_model(alpha=0.2, rho=0.7)
    a = solve(model, SolveConfig(n_sim_eps=300, seed=4))
    b = solve(model, SolveConfig(n_sim_eps=300, seed=4))
    c = solve(model, SolveConfig(n_sim_eps=300, seed=5))
    assert np.array_equal(a.values, b.values)
    assert a.draw_fingerprint == b.draw_fingerprint != c.draw_fingerprint
    assert not np.array_equal(a.values, c.values)


def test_solution_lies_inside_bounds():
    for a, r in [(0.1023, 0.5555), (0.8, 0.3), (0.0, 0.0)]:
        rep = solve(make_toy_model(alpha=a, rho=r), SolveConfig(n_sim_eps=500))
        vf = rep.fixed_point
        assert np.all(vf.v_lower <= vf.values) and np.all(vf.values <= vf.v_upper)


def test_out_of_domain_value_names_state():
    model = make_toy_model(alpha=0.8, rho=0.3)
    with pytest.raises(DomainError, match="state 1"):
        bellman_apply(model, np.array([0.0, 5.0, 0.0]), draw_block(model, 10, 0))


def test_analytic_margin_values():
    assert analytic_margin(PreferenceSpec.cara(0.3, 0.3, 0.9)) == pytest.approx(0.9)
    assert analytic_margin(PreferenceSpec.cara(0.1023, 0.5555, 0.9)) == pytest.approx(0.9 ** (0.1023 / 0.5555))
    assert analytic_margin(PreferenceSpec.cara(0.1023, 0.5555, 0.9)) == pytest.approx(0.9808, abs=1e-4)
    assert analytic_margin(PreferenceSpec.crra(0.8, 0.5, 0.9)) == pytest.approx(0.9 ** 0.4)
    assert analytic_margin(PreferenceSpec.cara(0.8, 0.3, 0.9)) is None


def test_numeric_margin_consistent_with_analytic():
    out = contraction_margin(make_toy_model(alpha=0.1023, rho=0.5555), n_mc=5000)
    assert out["m_analytic"] == pytest.approx(0.9 ** (0.1023 / 0.5555))
    assert out["m_numeric"] <= out["m_analytic"] + 1e-9
    sep = contraction_margin(make_toy_model(alpha=0.4, rho=0.4), n_mc=2000)
    assert sep["m_numeric"] == pytest.approx(0.9)
