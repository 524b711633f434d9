import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from backpar.sources import (clip, cube_root, eval_source, fisher_kpp, ginzburg_landau, linear,
                             lipschitz_bound, nonlocal_F0, source_coefficients, spectral_F0,
                             time_reversed, verify_structural, zero)
from backpar.spectral import DomainSpec, SpectralField, analyze, build_basis, synthesize


def test_pointwise_values():
    assert eval_source(ginzburg_landau(), None, 0.0, 2.0) == -6.0
    assert eval_source(fisher_kpp(2.0, 1.0), None, 0.0, 3.0) == 15.0
    assert eval_source(cube_root(), None, 0.0, -8.0) == -2.0
    assert eval_source(linear(-0.5), None, 0.0, 4.0) == -2.0
    assert eval_source(zero(), None, 0.0, 4.0) == 0.0


def test_fisher_kpp_position_dependent():
    x = np.array([[0.0, 1.0, 2.0]])
    F = fisher_kpp(gamma=lambda x: x[0], mu=1.0)
    np.testing.assert_allclose(eval_source(F, x, 0.0, np.array([1.0, 1.0, 1.0])), [-1, 0, 1])


def test_non_finite_argument_rejected():
    with pytest.raises(ValueError, match="finite"):
        eval_source(ginzburg_landau(), None, 0.0, np.array([1.0, np.nan]))


def test_gl_lipschitz_closed_form():
    est = lipschitz_bound(ginzburg_landau(), 2.0)
    assert est.value == 13.0 and est.method == "closed-form"


def test_clipped_source_is_lipschitz_on_random_pairs():
    R = 1.5
    F = clip(ginzburg_landau(), R)
    rng = np.random.default_rng(0)
    u, v = rng.uniform(-5, 5, (2, 100_000))
    lhs = np.abs(eval_source(F, None, 0, u) - eval_source(F, None, 0, v))
    assert np.all(lhs <= F.K_R * np.abs(u - v) * (1 + 1e-12))
    assert F.K_R == 1 + 3 * R * R
    # frozen outside the band
    assert eval_source(F, None, 0, 10.0) == eval_source(F, None, 0, R)


def test_cube_root_lipschitz_estimate_diverges():
    est = lipschitz_bound(cube_root(), 1.0)
    assert est.method == "numeric" and est.diverging


def test_numeric_lipschitz_for_smooth_source():
    F = fisher_kpp(1.0, 0.0)
    F = type(F)(name="sq", func=F.func, kind=type(F.kind)(None))
    est = lipschitz_bound(F, 2.0)
    assert abs(est.value - 4.0) < 1e-3 and not est.diverging


def test_cube_root_structural_constants_hold():
    rep = verify_structural(cube_root(), 10.0, 4 / 3, 1.0, 0.0, 1.0, 0.0)
    assert rep.passed, rep.summary()


def test_gl_fails_structural_growth_globally():
    rep = verify_structural(ginzburg_landau(), 10.0, 2.0, 0.5, 1.0, 10.0, 1.0)
    assert not rep.passed
    assert any(name == "growth" for name, _ in rep.violations)


def test_degenerate_constants_flagged():
    rep = verify_structural(zero(), 1.0, 1.0, 0.0, 0.0, 1.0, 0.0)
    assert rep.degenerate and not rep.passed


def test_cube_root_stepper_matches_away_from_zero():
    u = np.array([1e-3, 0.5, -2.0, 40.0])
    F = cube_root()
    np.testing.assert_allclose(eval_source(F, None, 0, u, for_stepper=True), np.cbrt(u), rtol=1e-9)


def test_spectral_F0_multiplier():
    T = 0.5
    b = build_basis(DomainSpec(1, n=16), 3)
    out = spectral_F0(SpectralField(np.ones(3), b), T)
    np.testing.assert_allclose(out.coeffs, np.exp(-T * np.array([1, 4, 9])) / (2 * T))
    coeffs = source_coefficients(nonlocal_F0(T), np.ones(3), b, 0.0)
    np.testing.assert_allclose(coeffs, out.coeffs)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_F0_is_half_contraction(a, c):
    T = 1.0
    b = build_basis(DomainSpec(1, n=16), 4)
    fa, fc = SpectralField(np.array(a), b), SpectralField(np.array(c), b)
    lhs = np.linalg.norm(spectral_F0(fa, T).coeffs - spectral_F0(fc, T).coeffs)
    assert lhs <= np.linalg.norm(fa.coeffs - fc.coeffs) / (2 * T) + 1e-15


def test_source_coefficients_match_direct_projection():
    b = build_basis(DomainSpec(1, n=128), 8)
    c = np.array([0.7, -0.2, 0.1, 0, 0, 0, 0, 0])
    u = synthesize(SpectralField(c, b))
    direct = analyze(type(u)(u.values - u.values ** 3, u.domain), b).coeffs
    np.testing.assert_allclose(source_coefficients(ginzburg_landau(), c, b, 0.0), direct, atol=1e-14)
    batched = source_coefficients(ginzburg_landau(), np.stack([c, 2 * c]), b, 0.0)
    np.testing.assert_allclose(batched[0], direct, atol=1e-14)


def test_time_reversal_flips_sign_and_time():
    F = type(zero())(name="tdep", func=lambda x, t, u: t * u, kind=linear().kind, autonomous=False)
    S = time_reversed(F, 2.0)
    assert eval_source(S, None, 0.5, 3.0) == -(1.5 * 3.0)
