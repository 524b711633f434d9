"""Quick invariant checks shared by ``backpar validate`` and the test-suite."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .evolve import EvolutionProblem, propagate_exact, solve_forward
from .sources import clip, cube_root, ginzburg_landau, nonlocal_F0, verify_structural
from .spectral import (DomainSpec, Gevrey, SpectralField, analyze, apply_P_beta, apply_Q_beta,
                       build_basis, norm, synthesize)
from .stochastic import NoiseConfig, observe_final
from .truncation import MildSolveConfig, solve_mild


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def operator_bounds(samples: int = 1000, seed: int = 0) -> Check:
    """Q and P multiplier bounds on random fields with random admissible parameters."""
    rng = np.random.default_rng(seed)
    basis = build_basis(DomainSpec(1, n=64), 24)
    bad = 0
    for _ in range(samples):
        T = rng.uniform(0.2, 2.0)
        M = rng.uniform(0.2, 2.0)
        beta = rng.uniform(1e-4, 1.0) * -math.expm1(-M * T)
        # decaying coefficients keep the Gevrey norm finite for most draws
        c = rng.standard_normal(basis.size) * np.exp(-rng.uniform(0, 2) * basis.eigenvalues)
        f = SpectralField(c, basis)
        q = norm(apply_Q_beta(f, beta, M, T))
        p = norm(apply_P_beta(f, beta, M, T))
        fq = beta / T * norm(f, Gevrey(M * T))
        fp = math.log(1 / beta) / T * norm(f)
        bad += q > fq * (1 + 1e-12) or p > fp * (1 + 1e-12)
    return Check("operator bounds", bad == 0, f"{bad} violations in {samples} fields")


def transform_roundtrip(samples: int = 50, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    worst_rt = worst_pars = 0.0
    for d, n, J in ((1, 64, 31), (2, 24, 40)):
        basis = build_basis(DomainSpec(d, n=n), J)
        for _ in range(samples):
            f = SpectralField(rng.standard_normal(J), basis)
            g = synthesize(f)
            worst_rt = max(worst_rt, float(np.max(np.abs(analyze(g, basis).coeffs - f.coeffs))))
            worst_pars = max(worst_pars, abs(g.l2_norm() - norm(f)) / norm(f))
    ok = worst_rt < 1e-12 and worst_pars < 1e-10
    return Check("transform roundtrip", ok, f"roundtrip {worst_rt:.2e}, Parseval {worst_pars:.2e}")


def noise_variance(trials: int = 1000, seed: int = 0) -> Check:
    basis = build_basis(DomainSpec(1, n=64), 16)
    g = SpectralField.from_modes(basis, {1: 1.0, 3: 0.5})
    delta, N = 0.01, 16
    errs = np.array([np.sum((observe_final(g, NoiseConfig(delta, N, seed, i)).coeffs - g.padded(N)) ** 2)
                     for i in range(trials)])
    mean, se = errs.mean(), errs.std(ddof=1) / math.sqrt(trials)
    ok = abs(mean - delta ** 2 * N) <= 3 * se
    return Check("noisy data variance", ok, f"mean {mean:.4e} vs {delta ** 2 * N:.4e} (se {se:.1e})")


def contraction(starts: int = 20, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    T = 1.0
    basis = build_basis(DomainSpec(1, n=64), 8)
    cfg = MildSolveConfig(nodes=101)
    worst = 0.0
    for _ in range(starts):
        G = 0.1 * rng.standard_normal(4)
        res = solve_mild(G, basis, nonlocal_F0(T), 16.0, T, cfg,
                         initial_iterate=rng.standard_normal((cfg.nodes, 4)))
        worst = max(worst, res.contraction)
    return Check("F0 contraction", worst <= 0.55, f"largest ratio {worst:.3f}")


def heat_order() -> Check:
    def err(n, K):
        b = build_basis(DomainSpec(1, n=n), 1)
        tr = solve_forward(EvolutionProblem(b, SpectralField.unit(b, 1), 1.0, K, scheme="fd"))
        return abs(tr.final.coeffs[0] - propagate_exact(SpectralField.unit(b, 1), 1.0).coeffs[0])

    dt = [err(127, K) for K in (25, 50, 100)]
    h = [err(n, 4000) for n in (7, 15)]
    r_dt = min(dt[0] / dt[1], dt[1] / dt[2])
    r_h = h[0] / h[1]
    return Check("heat solver order", r_dt >= 1.8 and r_h >= 3.5,
                 f"dt ratio {r_dt:.2f}, h ratio {r_h:.2f}")


def structural_sources() -> Check:
    cr = verify_structural(cube_root(), 10.0, 4 / 3, 1.0, 0.0, 1.0, 0.0)
    R = 1.0
    gl = verify_structural(clip(ginzburg_landau(), R), R, 2.0, 0.0, 0.0, 10.0, max(0.0, 3 * R * R - 1))
    ok = cr.passed and gl.margins["monotonicity"] >= -1e-12
    return Check("structural conditions", ok,
                 f"cube root {'pass' if cr.passed else 'fail'}, clipped GL monotonicity margin "
                 f"{gl.margins['monotonicity']:.2e}")


SUITES = (operator_bounds, transform_roundtrip, noise_variance, contraction, heat_order,
          structural_sources)


def run_all() -> list[Check]:
    return [suite() for suite in SUITES]
