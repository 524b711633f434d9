import doctest
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import backpar.truncation as trunc
from backpar.evolve import Trajectory
from backpar.sources import clip, ginzburg_landau, linear, nonlocal_F0
from backpar.spectral import DomainSpec, Sobolev, build_basis
from backpar.stochastic import NoiseConfig, observe_final
from backpar.truncation import (FixedPointError, MildSolveConfig, ceil_count, choose_N_illposed,
                                choose_params_truncation, error_report, solve_backward_truncated,
                                solve_mild, sobolev_envelope, truncation_envelope)

BASIS = build_basis(DomainSpec(1, n=64), 16)


def test_docstring_examples():
    assert doctest.testmod(trunc).failed == 0


def test_parameter_rule_values():
    p = choose_params_truncation(1e-4, 1.0, 1.0, 1.0, 1, 0.5, 0.5)
    assert p.N == 100 and abs(p.alpha - 0.5 * math.log(100)) < 1e-12
    # e^{-2 t alpha} = N^{-2 a t / (k T)} = delta^{2 (b a + b/2) a t / (k T)}
    assert p.rate_exponent == pytest.approx(0.5)
    assert p.predicted_order(1.0) == pytest.approx(math.exp(-p.alpha))


def test_parameter_rule_rejects_out_of_range():
    with pytest.raises(ValueError, match="exponent a"):
        choose_params_truncation(1e-2, 1.0, 1.0, 1.0, 1, 2.5, 0.5)
    with pytest.raises(ValueError, match="exponent b"):
        choose_params_truncation(1e-2, 1.0, 1.0, 1.0, 1, 0.5, 1.0)
    with pytest.raises(ValueError, match="delta"):
        choose_params_truncation(1.5, 1.0, 1.0, 1.0, 1, 0.5, 0.5)


def test_ceil_count_absorbs_rounding():
    assert ceil_count(100.00000000000001) == 100
    assert ceil_count(100.5) == 101
    assert ceil_count(0.2) == 1


def test_illposed_mode_count():
    c = choose_N_illposed(math.exp(-1), 0.5)
    assert c.N == 1 and abs(c.raw - 1.0) < 1e-15
    # with the unrounded count the blow-up reference collapses to (2/5) delta
    assert c.predicted_blowup(math.exp(-1), 0.5) == pytest.approx(0.4 * math.exp(-1), rel=1e-12)


def test_noiseless_linear_reconstruction_is_exact():
    G = np.array([0.3, -0.2, 0.1, 0.05])
    res = solve_mild(G, BASIS, None, 10.0, 1.0, MildSolveConfig(nodes=11))
    lam = res.trajectory.basis.eigenvalues
    assert res.trajectory.basis.size == 3  # lambda <= 10
    np.testing.assert_allclose(res.trajectory.coeffs_at(0.4), np.exp(lam * 0.6) * G[:3], rtol=1e-14)


def test_mild_solver_linear_source_second_order():
    r, T, alpha = 0.8, 1.0, 5.0
    G = np.array([0.4, 0.1])
    exact = G * np.exp((np.array([1.0, 4.0]) - r) * T)
    errs = []
    for nodes in (21, 41, 81):
        res = solve_mild(G, BASIS, linear(r), alpha, T, MildSolveConfig(nodes=nodes, tol=1e-14))
        errs.append(np.max(np.abs(res.trajectory.coeffs[0] - exact)))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_F0_contraction_ratio():
    T = 1.0
    rng = np.random.default_rng(1)
    cfg = MildSolveConfig(nodes=101)
    for _ in range(5):
        res = solve_mild(0.1 * rng.standard_normal(4), BASIS, nonlocal_F0(T), 16.0, T, cfg,
                         initial_iterate=rng.standard_normal((101, 4)))
        assert res.contraction <= 0.5 + 1e-9
        assert res.residual < 1e-10 * max(1.0, np.abs(res.trajectory.coeffs).max())


@settings(max_examples=20, deadline=None)
@given(st.floats(1.0, 20.0), st.integers(0, 10_000))
def test_mild_solution_satisfies_final_condition(alpha, seed):
    rng = np.random.default_rng(seed)
    G = 0.1 * rng.standard_normal(8)
    res = solve_mild(G, BASIS, clip(ginzburg_landau(), 0.5), alpha, 0.5, MildSolveConfig(nodes=41))
    J = res.trajectory.basis.size
    np.testing.assert_allclose(res.trajectory.coeffs[-1], G[:J], atol=1e-15)


def test_iteration_budget_exhaustion_raises():
    with pytest.raises(FixedPointError) as exc:
        solve_mild(np.array([1.0]), BASIS, linear(5.0), 2.0, 1.0, MildSolveConfig(nodes=21, max_iter=2))
    assert exc.value.reason == "max_iter"


def test_threshold_below_first_eigenvalue_gives_zero():
    res = solve_mild(np.ones(3), BASIS, None, 0.5, 1.0, MildSolveConfig(nodes=5))
    assert np.all(res.trajectory.coeffs == 0)


def test_backward_truncated_from_observation():
    from backpar.spectral import SpectralField
    g = SpectralField.from_modes(BASIS, {1: 0.5})
    p = choose_params_truncation(1e-3, 1.0, 1.0, 1.0, 1, 0.5, 0.5)
    obs = observe_final(g, NoiseConfig(1e-3, p.N, 0, 0))
    res = solve_backward_truncated(obs, None, p)
    assert res.alpha == p.alpha and res.trajectory.basis.size == int(math.sqrt(p.alpha))


def test_error_report_pads_and_weights():
    b1 = build_basis(DomainSpec(1, n=32), 2)
    b2 = build_basis(DomainSpec(1, n=32), 3)
    times = np.array([0.0, 1.0])
    a = Trajectory(times, np.array([[1.0, 0.0], [1.0, 0.0]]), b1)
    b = Trajectory(times, np.array([[1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]), b2)
    rep = error_report(a, b, t_list=[0.0, 1.0])
    assert rep == {0.0: 1.0, 1.0: 1.0}
    rep = error_report(a, b, Sobolev(1), t_list=[0.0, 1.0])
    assert rep[0.0] == pytest.approx(3.0) and rep[1.0] == pytest.approx(2.0)


def test_envelope_forms():
    p = choose_params_truncation(1e-3, 1.0, 1.0, 1.0, 1, 0.5, 0.5)
    lam_N = float(p.N ** 2)
    s = truncation_envelope(p, 0.5, 1.0, 1.0, 1.0, lam_N)
    pr = truncation_envelope(p, 0.5, 1.0, 1.0, 1.0, lam_N, form="gronwall")
    assert 0 < s <= pr
    with pytest.raises(ValueError):
        truncation_envelope(p, 0.5, 1.0, 1.0, 1.0, lam_N, form="other")
    huge = choose_params_truncation(1e-3, 1e-3, 1.0, 1.0, 1, 0.5, 0.5)
    assert truncation_envelope(huge, 0.0, 1.0, 1.0, 1.0, lam_N) == math.inf
    assert sobolev_envelope(p, 0.5, 1.0, 1.0, 1.0, 1.0, lam_N) > 0


def test_envelope_decreases_in_time():
    p = choose_params_truncation(1e-3, 1.0, 1.0, 1.0, 1, 0.5, 0.5)
    vals = [truncation_envelope(p, t, 1.0, 1.0, 1.0, float(p.N ** 2)) for t in (0.25, 0.5, 0.75)]
    assert vals[0] > vals[1] > vals[2]
