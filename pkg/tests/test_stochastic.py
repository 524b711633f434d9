import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from backpar.spectral import DomainSpec, SpectralField, build_basis
from backpar.stochastic import (NoiseConfig, brownian_path, mise_bound, observe_final,
                                perturb_coefficient, substream)


@pytest.fixture
def g():
    b = build_basis(DomainSpec(1, n=64), 16)
    return SpectralField.from_modes(b, {1: 1.0, 3: 0.5})


def test_observation_is_deterministic_per_trial(g):
    a = observe_final(g, NoiseConfig(0.1, 8, seed=3, trial=5)).coeffs
    b = observe_final(g, NoiseConfig(0.1, 8, seed=3, trial=5)).coeffs
    c = observe_final(g, NoiseConfig(0.1, 8, seed=3, trial=6)).coeffs
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_common_random_numbers_across_delta(g):
    e1 = observe_final(g, NoiseConfig(0.1, 8, 1, 0)).coeffs - g.padded(8)
    e2 = observe_final(g, NoiseConfig(0.01, 8, 1, 0)).coeffs - g.padded(8)
    np.testing.assert_allclose(e1, 10 * e2, rtol=1e-12, atol=1e-17)


def test_observation_extends_basis(g):
    obs = observe_final(g, NoiseConfig(0.01, 40, 0, 0))
    assert obs.basis.size == 40 and len(obs.coeffs) == 40
    assert obs.basis.eigenvalues[39] == 1600


def test_noise_moments(g):
    N, delta, trials = 16, 0.01, 1000
    xi = np.array([(observe_final(g, NoiseConfig(delta, N, 0, i)).coeffs - g.padded(N)) / delta
                   for i in range(trials)])
    # mean 0 and unit variance per component, no cross-correlation
    assert np.all(np.abs(xi.mean(axis=0)) < 4 / math.sqrt(trials))
    assert np.all(np.abs(xi.var(axis=0) - 1) < 5 * math.sqrt(2 / trials))
    corr = np.corrcoef(xi.T)[np.triu_indices(N, 1)]
    assert np.max(np.abs(corr)) < 5 / math.sqrt(trials)


def test_mise_bound_value():
    # delta^2 N + lam_N^-2 ||g||^2 with N=16, lam_N=256, ||g||_{H^2}^2 = 1 + 0.25*81
    g2 = math.sqrt(1 + 0.25 * 81)
    val = mise_bound(0.01, 16, 1.0, g2, 256.0)
    assert abs(val - 0.0016 - 21.25 / 65536) < 1e-15
    assert abs(val - 0.001924249267578125) < 1e-15


def test_mise_bound_unit_norm_example():
    assert abs(mise_bound(0.01, 16, 1.0, 1.0, 256.0) - (0.0016 + 256.0 ** -2)) < 1e-16
    assert round(mise_bound(0.01, 16, 1.0, 1.0, 256.0), 7) == 0.0016153


def test_mise_bound_rejects_negative():
    with pytest.raises(ValueError, match="delta"):
        mise_bound(-0.1, 4, 1.0, 1.0, 16.0)


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(0.1, 0)
    with pytest.raises(ValueError):
        NoiseConfig(-0.1, 4)


def test_brownian_increments():
    T, K, trials = 2.0, 50, 2000
    ends = np.array([brownian_path(T, K, 9, i).values[-1] for i in range(trials)])
    assert abs(ends.mean()) < 4 * math.sqrt(T / trials)
    assert abs(ends.var() / T - 1) < 5 * math.sqrt(2 / trials)
    p = brownian_path(T, K, 9, 0)
    assert p.values[0] == 0.0 and p(T) == p.values[-1]
    assert p.sup_abs() == float(np.max(np.abs(p.values)))


def test_brownian_and_observation_streams_are_independent():
    a = substream(5, 0, 1).standard_normal(4)
    b = substream(5, 1, 1).standard_normal(4)
    assert not np.allclose(a, b)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-4, 0.5), st.integers(0, 100))
def test_perturbed_coefficient_bounds(delta, trial):
    x = np.linspace(0.1, 3.0, 20)[None, :]
    psi = brownian_path(1.0, 40, 0, trial)
    pc = perturb_coefficient(lambda x, t: 1.0 + 0.1 * np.sin(x[0]), delta, psi, x, M=3.0)
    lo, hi = pc.a_bounds
    for t in psi.times[::5]:
        v = pc(x, float(t))
        assert v.min() >= lo - 1e-14 and v.max() <= hi + 1e-14
    np.testing.assert_allclose(pc.b(x, 0.5), 3.0 - pc(x, 0.5))
    assert pc.valid == (lo > 0 and hi < 3.0)


def test_perturbed_coefficient_invalid_reason():
    x = np.linspace(0.1, 3.0, 5)[None, :]
    psi = brownian_path(1.0, 10, 0, 0)
    pc = perturb_coefficient(lambda x, t: np.full(x.shape[1:], 1.0), 0.0, psi, x, M=1.0)
    assert not pc.valid and "M=1" in pc.reason()
