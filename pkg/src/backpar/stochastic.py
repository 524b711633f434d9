"""Noisy final-time observations and Brownian perturbation of the diffusion coefficient.

All randomness flows through :func:`substream`, which derives an independent
PCG64 generator from ``(seed, purpose, trial)``.  The key does not involve the
noise level, so one trial index sees the same standard-normal draws at every
delta (common random numbers), which keeps Monte Carlo comparisons across
delta low-variance.  Adding trials never changes earlier ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .spectral import SpectralField, EigenBasis

__all__ = [
    "OBSERVATION", "BROWNIAN", "substream",
    "NoiseConfig", "NoisyObservation", "observe_final", "mise_bound",
    "BrownianPath", "brownian_path", "PerturbedCoefficient", "perturb_coefficient",
]

OBSERVATION = 0
BROWNIAN = 1


def substream(seed: int, purpose: int, trial: int = 0) -> np.random.Generator:
    """Independent generator for one (purpose, trial) pair of a global seed."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(purpose), int(trial)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class NoiseConfig:
    delta: float
    N: int
    seed: int = 0
    trial: int = 0

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError(f"noise amplitude must be >= 0, got {self.delta}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"observation count must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))


@dataclass(frozen=True)
class NoisyObservation:
    data: SpectralField
    config: NoiseConfig

    @property
    def coeffs(self) -> np.ndarray:
        return self.data.coeffs

    @property
    def basis(self) -> EigenBasis:
        return self.data.basis


def observe_final(g: SpectralField, cfg: NoiseConfig) -> NoisyObservation:
    """Return ``<g, phi_j> + delta xi_j`` for ``j <= N`` with seeded i.i.d. normal ``xi``.

    ``g`` is zero-padded when it carries fewer than ``N`` modes; the basis is
    extended if ``N`` exceeds its size.
    """
    basis = g.basis if g.basis.size >= cfg.N else g.basis.with_modes(cfg.N)
    xi = substream(cfg.seed, OBSERVATION, cfg.trial).standard_normal(cfg.N)
    coeffs = g.padded(cfg.N) + cfg.delta * xi
    return NoisyObservation(SpectralField(coeffs, basis), cfg)


def mise_bound(delta: float, N: int, gamma: float, g_norm_h2gamma: float, lam_N: float) -> float:
    """Variance plus truncation bias: ``delta^2 N + lam_N^{-2 gamma} ||g||^2_{H^{2 gamma}}``."""
    for name, v in (("delta", delta), ("N", N), ("gamma", gamma),
                    ("g_norm_h2gamma", g_norm_h2gamma), ("lam_N", lam_N)):
        if not v >= 0:
            raise ValueError(f"{name} must be nonnegative, got {v}")
    return delta ** 2 * N + lam_N ** (-2.0 * gamma) * g_norm_h2gamma ** 2


@dataclass(frozen=True, eq=False)
class BrownianPath:
    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        """Piecewise-linear interpolation between grid nodes."""
        return np.interp(t, self.times, self.values)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def sup_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def brownian_path(T: float, K: int, seed: int, trial: int = 0) -> BrownianPath:
    """Standard Brownian motion sampled on ``K`` uniform steps of ``[0, T]``."""
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T}")
    if K < 1:
        raise ValueError(f"step count must be >= 1, got {K}")
    times = np.linspace(0.0, T, K + 1)
    steps = substream(seed, BROWNIAN, trial).standard_normal(K) * np.sqrt(np.diff(times))
    values = np.concatenate(([0.0], np.cumsum(steps)))
    times.setflags(write=False)
    values.setflags(write=False)
    return BrownianPath(times, values)


Coefficient = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True, eq=False)
class PerturbedCoefficient:
    """``a_delta(x, t) = a(x, t) + delta psi(t)`` together with ``b_delta = M - a_delta``.

    ``a_bounds`` and ``b_bounds`` are the extremes over the sampling grid used
    to validate the trial; ``valid`` is False when ``a_delta`` leaves
    ``(0, M)`` anywhere, in which case the trial must be discarded.
    """

    a: Coefficient
    delta: float
    psi: BrownianPath | None
    M: float
    a_bounds: tuple[float, float]

    def __call__(self, x, t):
        base = np.asarray(self.a(x, t), dtype=float)
        if self.psi is None or self.delta == 0:
            return base
        return base + self.delta * float(self.psi(t))

    def b(self, x, t):
        return self.M - self(x, t)

    @property
    def b_bounds(self) -> tuple[float, float]:
        return self.M - self.a_bounds[1], self.M - self.a_bounds[0]

    @property
    def valid(self) -> bool:
        lo, hi = self.a_bounds
        return lo > 0 and hi < self.M

    def reason(self) -> str:
        lo, hi = self.a_bounds
        if lo <= 0:
            return f"perturbed coefficient reaches {lo:.4g} <= 0"
        if hi >= self.M:
            return f"perturbed coefficient reaches {hi:.4g} >= M={self.M:.4g}"
        return ""


def perturb_coefficient(a: Coefficient, delta: float, psi: BrownianPath | None,
                        x_samples: np.ndarray, M: float | None = None,
                        M_factor: float = 2.0) -> PerturbedCoefficient:
    """Attach Brownian coefficient noise to ``a`` and record its bounds.

    Bounds are taken over ``x_samples`` (shape ``(d, ...)``) and the nodes of
    ``psi``.  When ``M`` is omitted it defaults to ``M_factor * sup a_delta``.
    """
    times = psi.times if psi is not None else np.array([0.0])
    shift = delta * psi.values if psi is not None else np.zeros(1)
    lo, hi = math.inf, -math.inf
    for t, s in zip(times, shift):
        vals = np.asarray(a(x_samples, float(t)), dtype=float) + s
        lo = min(lo, float(np.min(vals)))
        hi = max(hi, float(np.max(vals)))
    if M is None:
        M = M_factor * hi
        if not M > 0:
            raise ValueError("cannot derive M from a nonpositive coefficient")
    return PerturbedCoefficient(a, float(delta), psi, float(M), (lo, hi))
