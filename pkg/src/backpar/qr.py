"""Quasi-reversibility reconstruction for locally Lipschitz and monotone-type sources.

The backward problem ``u_t + div(a grad u) = F`` is replaced by a well-posed
one whose time reversal ``v(t) = u(T - t)`` solves the forward problem

    v_t - div(b grad v) = -F(x, T - t, v) + D v,    v(0) = G,

with ``b = M - a`` and ``D`` the positive multiplier
``(1/T) ln(1 / (beta + e^{-M T lambda_j}))`` (that is, minus the ``P_beta``
multiplier), bounded by ``(1/T) ln(1/beta)``.  With ``beta = 0`` and constant
``a`` the scheme reproduces exact backward diffusion; ``beta > 0`` caps the
amplification of each mode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .evolve import EvolutionProblem, Trajectory, solve_forward
from .sources import (ClippedSource, SourceSpec, clip, lipschitz_bound, time_reversed,
                      verify_structural)
from .spectral import EigenBasis, SpectralField, beta_admissibility_bound, p_beta_multiplier
from .stochastic import NoisyObservation, PerturbedCoefficient
from .truncation import ceil_count

__all__ = [
    "QRParams", "QRSolution", "choose_params_qr", "clip_radius", "assemble_reversed",
    "solve_qr", "qr_envelope", "compare_case2_case3", "linear_qr_factor",
    "EnvelopeComparison",
]


@dataclass(frozen=True)
class QRParams:
    """Rule-derived quasi-reversibility parameters.

    ``N = ceil((1/delta)^{m(1/2 - c)})``, ``beta = N^{-c}``.  For the clipped
    source, ``R`` is the largest radius with
    ``K(R) <= (1/(kT)) ln(m(1/2 - c) ln(1/delta))`` and ``K_R = K(R)``.
    """

    delta: float
    c: float
    m: float
    gamma: float
    d: int
    k: float
    T: float
    M: float
    N: int
    N_raw: float
    beta: float
    R: float | None = None
    K_R: float | None = None
    gamma_bar: float | None = None

    @property
    def rate_exponent(self) -> float:
        """``2 m c (1/2 - c) / T``: the squared error at ``t`` scales like ``delta^{exponent t}`` up to logs."""
        return 2.0 * self.m * self.c * (0.5 - self.c) / self.T

    def predicted_order(self, t: float) -> float:
        """``delta^{m c (1/2 - c) t/T} ln(1/delta)``, the predicted order of the error."""
        return self.delta ** (self.m * self.c * (0.5 - self.c) * t / self.T) * math.log(1.0 / self.delta)

    @property
    def D_max(self) -> float:
        return math.log(1.0 / self.beta) / self.T


def clip_radius(source: SourceSpec, K_max: float, R_hi: float = 1e6) -> tuple[float, float]:
    """Largest ``R`` with ``K(R) <= K_max`` and the resulting ``K(R)``.

    Uses the closed-form inverse for ``K(R) = 1 + 3R^2`` and bisection for
    other monotone ``K``.  Raises ``ValueError`` when even ``R -> 0`` violates
    the bound.
    """
    if source.name == "ginzburg-landau":
        if K_max <= 1.0:
            raise ValueError(f"radius rule needs K(R) <= {K_max:.4g}, but K(0+) = 1")
        R = math.sqrt((K_max - 1.0) / 3.0)
        return R, 1.0 + 3.0 * R * R

    def K(R):
        return lipschitz_bound(source, R).value

    lo, hi = 1e-12, R_hi
    if K(lo) > K_max:
        raise ValueError(f"radius rule needs K(R) <= {K_max:.4g}, but K(0+) = {K(lo):.4g}")
    if K(hi) <= K_max:
        return hi, K(hi)
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if K(mid) <= K_max:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1 + 1e-12:
            break
    return lo, K(lo)


def choose_params_qr(delta: float, c: float, m: float, gamma: float, d: int, k: float,
                     T: float, M: float, lam1: float | None = None,
                     source: SourceSpec | None = None, mode: str | None = None) -> QRParams:
    """Apply the quasi-reversibility parameter rule.

    Parameters
    ----------
    lam1 : float, optional
        First eigenvalue; defaults to ``d`` (the value on ``(0, pi)^d``).
    source, mode : optional
        With ``mode="clipped"`` the clip radius ``R`` and ``K_R`` are derived
        from ``source``; with ``mode="structural"`` the declared
        ``gamma_bar`` is copied from it.

    Raises
    ------
    ValueError
        On out-of-range exponents, or when ``beta`` is not admissible
        (the message reports the bound ``1 - e^{-M T lambda_1}``).
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    c_max = min(0.5, 2.0 * gamma / d)
    if not 0 < c < c_max:
        raise ValueError(f"exponent c={c} must lie in (0, {c_max:g})")
    if not 0 < m < 1:
        raise ValueError(f"exponent m={m} must lie in (0, 1)")
    if not (T > 0 and M > 0 and k > 0):
        raise ValueError(f"T, M and k must be positive, got T={T}, M={M}, k={k}")
    lam1 = float(d) if lam1 is None else lam1
    expo = m * (0.5 - c)
    N_raw = (1.0 / delta) ** expo
    N = ceil_count(N_raw)
    beta = N ** (-c)
    bound = beta_admissibility_bound(lam1, M, T)
    if not beta < bound:
        raise ValueError(f"beta={beta:.6g} is not admissible: need beta < 1 - exp(-M T lambda_1) "
                         f"= {bound:.6g}; increase M*T or c")
    R = K_R = gbar = None
    if mode == "clipped":
        if source is None:
            raise ValueError("clipped mode needs a source")
        K_max = math.log(expo * math.log(1.0 / delta)) / (k * T)
        R, K_R = clip_radius(source, K_max)
    elif mode == "structural":
        if source is None or source.structural is None:
            raise ValueError("structural mode needs a source with declared structural constants")
        gbar = source.structural.gamma_bar
    elif mode is not None:
        raise ValueError(f"unknown mode {mode!r}; expected clipped or structural")
    return QRParams(delta, c, m, gamma, d, k, T, M, N, N_raw, beta, R, K_R, gbar)


def linear_qr_factor(lam: np.ndarray, a: float, beta: float, M: float, T: float, t: float) -> np.ndarray:
    """Exact per-mode map ``G_j -> u_j(t)`` for ``F = 0`` and constant ``a``.

    Equals ``[e^{a lambda T} / (1 + beta e^{M T lambda})]^{(T-t)/T}``.
    """
    lam = np.asarray(lam, dtype=float)
    log_f = a * lam * T - np.logaddexp(0.0, math.log(beta) + M * T * lam)
    return np.exp(log_f * (T - t) / T)


@dataclass(frozen=True, eq=False)
class QRSolution:
    trajectory: Trajectory
    params: QRParams
    mode: str
    source_name: str
    b_bounds: tuple[float, float]
    diagnostics: dict = field(default_factory=dict)


def _coefficient(a) -> tuple[callable, tuple[float, float], float]:
    """Normalise ``a`` to (callable, bounds, M-or-None)."""
    if isinstance(a, PerturbedCoefficient):
        if not a.valid:
            raise ValueError(f"invalid coefficient-noise trial: {a.reason()}")
        return a, a.a_bounds, a.M
    value = float(a)
    return (lambda x, t: np.full(np.shape(x)[1:], value)), (value, value), None


def assemble_reversed(obs: NoisyObservation, a, params: QRParams, F: SourceSpec | None,
                      basis: EigenBasis, K: int = 200, scheme: str = "auto") -> EvolutionProblem:
    """Build the reversed-time problem on the modes of ``basis``.

    ``a`` is either a constant or a :class:`PerturbedCoefficient`; the
    diffusion is ``c(x, t) = M - a(x, T - t)``.
    """
    a_fn, (a_lo, a_hi), M_a = _coefficient(a)
    M, T = params.M, params.T
    if M_a is not None and abs(M_a - M) > 1e-12 * M:
        raise ValueError(f"coefficient was validated against M={M_a}, parameters use M={M}")
    if not a_hi < M:
        raise ValueError(f"M={M} must exceed sup a = {a_hi}")
    if not a_lo > 0:
        raise ValueError(f"coefficient must stay positive, got inf a = {a_lo}")
    if not basis.compatible(obs.basis):
        raise ValueError("observation and solver basis live on different domains")

    const = a_lo == a_hi and not isinstance(a, PerturbedCoefficient)
    if const:
        diffusion = M - a_lo
    else:
        def diffusion(x, t):
            return M - np.asarray(a_fn(x, T - t), dtype=float)

    D = -p_beta_multiplier(basis.eigenvalues, params.beta, M, T)
    S = time_reversed(F, T) if (F is not None and not F.is_zero) else None
    initial = SpectralField(obs.data.padded(basis.size), basis)
    return EvolutionProblem(basis, initial, T, K, diffusion, (M - a_hi, M - a_lo), D, S, scheme)


def solve_qr(obs: NoisyObservation, a, params: QRParams, F: SourceSpec | None,
             mode: str = "clipped", basis: EigenBasis | None = None, K: int = 200,
             scheme: str = "auto", z_range: float = 10.0) -> QRSolution:
    """Quasi-reversibility reconstruction ``u^delta(t)`` on the time grid.

    ``mode="clipped"`` integrates with ``F_R`` (``R`` from ``params``);
    ``mode="structural"`` uses ``F`` itself after checking its declared
    constants on ``[-z_range, z_range]``.
    """
    if basis is None:
        basis = obs.basis
    diag = {"N": params.N, "beta": params.beta, "M": params.M, "D_max": params.D_max}
    source = F
    if F is not None and not F.is_zero:
        if mode == "clipped":
            if params.R is None:
                raise ValueError("clipped mode needs parameters with a clip radius")
            source = F if isinstance(F, ClippedSource) else clip(F, params.R)
            diag.update(R=params.R, K_R=params.K_R)
        elif mode == "structural":
            s = F.structural
            if s is None:
                raise ValueError(f"{F.name} declares no structural constants")
            rep = verify_structural(F, z_range, s.p, s.C1, s.C1_prime, s.C2, s.gamma_bar)
            if not rep.passed:
                raise ValueError(f"{F.name} fails the structural conditions:\n{rep.summary()}")
            diag.update(gamma_bar=s.gamma_bar)
        else:
            raise ValueError(f"unknown mode {mode!r}; expected clipped or structural")
    prob = assemble_reversed(obs, a, params, source, basis, K, scheme)
    traj = solve_forward(prob).reversed()
    return QRSolution(traj, params, mode, getattr(source, "name", "zero"), prob.c_bounds, diag)


def qr_envelope(params: QRParams, t: float, growth: float, g_norm_h2gamma: float,
                u_wmt_sq: float, u_h1_sq: float, b0: float, lam_N: float) -> float:
    """``beta^{2t/T} e^{(2 growth + 1) T} C(delta)`` with

    ``C = delta^2 N beta^-2 + lam_N^{-2gamma} beta^-2 ||g||^2_{H^{2gamma}}
    + ||u||^2_{C(W_MT)} + delta^2 T^3 / (b0 beta^2) ||u||^2_{L^inf H^1}``.

    ``growth`` is ``K(R)`` for the clipped source or ``gamma_bar`` for the
    monotone one.  Squared norms are passed in; ``u_wmt_sq`` may be ``inf``.
    """
    p = params
    b2 = p.beta ** -2
    C = (p.delta ** 2 * p.N * b2 + lam_N ** (-2 * p.gamma) * b2 * g_norm_h2gamma ** 2
         + u_wmt_sq + p.delta ** 2 * p.T ** 3 / b0 * b2 * u_h1_sq)
    log_val = 2 * t / p.T * math.log(p.beta) + (2 * growth + 1) * p.T + math.log(C) if C > 0 else -math.inf
    if math.isnan(log_val) or log_val > 709.0:
        return math.inf
    return math.exp(log_val)


@dataclass(frozen=True)
class EnvelopeComparison:
    deltas: list[float]
    K_R: list[float]
    gamma_bar: float
    T: float
    ratios: list[float]

    @property
    def monotone(self) -> bool:
        """Ratio strictly increases as delta decreases."""
        order = np.argsort(self.deltas)[::-1]
        r = np.asarray(self.ratios)[order]
        return bool(np.all(np.diff(r) > 0))


def compare_case2_case3(params_list: list[QRParams], gamma_bar: float) -> EnvelopeComparison:
    """Ratio ``e^{2(K(R_delta) - gamma_bar) T}`` of the clipped to the monotone envelope."""
    deltas, Ks, ratios = [], [], []
    for p in params_list:
        if p.K_R is None:
            raise ValueError("comparison needs clipped-mode parameters")
        deltas.append(p.delta)
        Ks.append(p.K_R)
        x = 2.0 * (p.K_R - gamma_bar) * p.T
        ratios.append(math.inf if x > 709.0 else math.exp(x))
    T = params_list[0].T if params_list else math.nan
    return EnvelopeComparison(deltas, Ks, gamma_bar, T, ratios)
