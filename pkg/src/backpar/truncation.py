"""Spectral cut-off regularization of the backward problem (globally Lipschitz sources).

The regularized solution keeps the modes with ``lambda_j <= alpha`` and solves
the mild (Duhamel) form backwards from the noisy final data,

    u_j(t) = e^{(T-t) lambda_j} G_j - int_t^T e^{(s-t) lambda_j} F_j(u)(s) ds,

by Picard iteration over the whole time grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .evolve import Trajectory
from .sources import SourceSpec, source_coefficients
from .spectral import EigenBasis, NormKind, L2, log_norm_squared
from .stochastic import NoisyObservation

__all__ = [
    "TruncationParams", "IllposedChoice", "MildSolveConfig", "MildSolveResult",
    "FixedPointError", "choose_params_truncation", "choose_N_illposed",
    "solve_backward_truncated", "solve_mild", "error_report", "truncation_envelope",
    "sobolev_envelope", "ceil_count",
]


def ceil_count(x: float) -> int:
    """``ceil`` that ignores float noise just above an integer (``10**0.5 * 10**0.5``)."""
    return max(1, int(math.ceil(x * (1.0 - 1e-12))))


@dataclass(frozen=True)
class TruncationParams:
    """Cut-off parameters derived from the noise level.

    ``N = ceil((1/delta)^{b a + b/2})`` observed modes and threshold
    ``alpha = (a / (k T)) ln N`` so that ``e^{k T alpha} = N^a``.
    """

    delta: float
    k: float
    T: float
    gamma: float
    d: int
    a: float
    b: float
    N: int
    alpha: float

    @property
    def rate_exponent(self) -> float:
        """``2 (b a + b/2) a / (k T)``: the squared error at ``t`` scales like ``delta^{exponent t}``."""
        return 2.0 * (self.b * self.a + self.b / 2.0) * self.a / (self.k * self.T)

    def predicted_order(self, t: float) -> float:
        """``e^{-t alpha} = delta^{(b a + b/2) a t / (k T)}``, the order of the error itself."""
        return self.delta ** (0.5 * self.rate_exponent * t)


def choose_params_truncation(delta: float, k: float, T: float, gamma: float, d: int,
                             a: float, b: float) -> TruncationParams:
    """Parameter rule for the cut-off method.

    Examples
    --------
    >>> p = choose_params_truncation(1e-4, 1.0, 1.0, 1.0, 1, 0.5, 0.5)
    >>> p.N, round(p.alpha, 4)
    (100, 2.3026)
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not (k > 0 and T > 0 and gamma > 0):
        raise ValueError(f"k, T and gamma must be positive, got k={k}, T={T}, gamma={gamma}")
    if not 0 < a < 2 * gamma / d:
        raise ValueError(f"exponent a={a} must lie in (0, 2*gamma/d) = (0, {2 * gamma / d:g})")
    if not 0 < b < 1:
        raise ValueError(f"exponent b={b} must lie in (0, 1)")
    N = ceil_count((1.0 / delta) ** (b * a + b / 2.0))
    alpha = a / (k * T) * math.log(N)
    return TruncationParams(delta, k, T, gamma, d, a, b, N, alpha)


@dataclass(frozen=True)
class IllposedChoice:
    raw: float  # sqrt(ln(1/delta) / (2T))
    N: int  # mode count, raw rounded up

    def predicted_data_error(self, delta: float) -> float:
        return delta ** 2 * self.raw

    def predicted_blowup(self, delta: float, T: float) -> float:
        """``(2/5) delta^2 e^{2 T raw^2}``, which equals ``(2/5) delta``."""
        return 0.4 * delta ** 2 * math.exp(2.0 * T * self.raw ** 2)


def choose_N_illposed(delta: float, T: float) -> IllposedChoice:
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    raw = math.sqrt(math.log(1.0 / delta) / (2.0 * T))
    return IllposedChoice(raw, ceil_count(raw))


@dataclass(frozen=True)
class MildSolveConfig:
    nodes: int = 201
    tol: float = 1e-10
    max_iter: int = 200
    grid_n: int = 64  # minimum physical resolution for pseudo-spectral source evaluation

    def __post_init__(self):
        if self.nodes < 2:
            raise ValueError(f"time grid needs at least 2 nodes, got {self.nodes}")
        if not self.tol > 0:
            raise ValueError(f"tolerance must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


class FixedPointError(RuntimeError):
    """``reason`` is ``"divergence"`` or ``"max_iter"``."""

    def __init__(self, message: str, reason: str, ratios: list[float], residual: float):
        super().__init__(message)
        self.reason = reason
        self.ratios = ratios
        self.residual = residual


@dataclass(frozen=True, eq=False)
class MildSolveResult:
    trajectory: Trajectory
    iterations: int
    ratios: list[float]
    residual: float
    relaxation: float
    alpha: float

    @property
    def contraction(self) -> float:
        """Largest measured ratio of successive iterate distances (nan if none recorded)."""
        return max(self.ratios) if self.ratios else math.nan


def solve_mild(data: np.ndarray, domain_basis: EigenBasis, source: SourceSpec | None,
               alpha: float, T: float, cfg: MildSolveConfig = MildSolveConfig(),
               initial_iterate: np.ndarray | None = None) -> MildSolveResult:
    """Picard iteration for the cut-off mild equation.

    Parameters
    ----------
    data : ndarray
        Final-time coefficients; entries past ``len(data)`` count as zero.
    domain_basis : EigenBasis
        Any basis on the target rectangle; a solver basis holding every mode
        with ``lambda_j <= alpha`` is derived from it.
    initial_iterate : ndarray, optional
        Starting trajectory of shape ``(nodes, J_alpha)``; defaults to the
        linear part (source integral omitted).
    """
    if not alpha >= 0:
        raise ValueError(f"threshold must be nonnegative, got {alpha}")
    J = _count_below(domain_basis, alpha)
    if J == 0:
        times = np.linspace(0.0, T, cfg.nodes)
        empty = domain_basis.with_modes(1, min_n=cfg.grid_n)
        traj = Trajectory(times, np.zeros((cfg.nodes, 1)), empty)
        return MildSolveResult(traj, 0, [], 0.0, 1.0, alpha)
    basis = domain_basis.with_modes(J, min_n=cfg.grid_n)
    lam = basis.eigenvalues
    times = np.linspace(0.0, T, cfg.nodes)
    dt = times[1] - times[0]
    G = np.zeros(J)
    m = min(J, len(data))
    G[:m] = data[:m]

    linear = np.exp(np.outer(T - times, lam)) * G
    has_source = source is not None and not source.is_zero
    if not has_source:
        return MildSolveResult(Trajectory(times, linear, basis), 0, [], 0.0, 1.0, alpha)

    E = np.exp(dt * lam)

    def phi(U):
        F = source_coefficients(source, U, basis, times)[:, :J]
        I = np.zeros_like(U)
        for i in range(len(times) - 2, -1, -1):
            I[i] = E * I[i + 1] + 0.5 * dt * (F[i] + E * F[i + 1])
        return linear - I

    start = linear if initial_iterate is None else np.array(initial_iterate, dtype=float)
    if start.shape != linear.shape:
        raise ValueError(f"initial iterate has shape {start.shape}, expected {linear.shape}")
    try:
        return _picard(phi, start, cfg, 1.0, times, basis, alpha)
    except FixedPointError as first:
        if first.reason != "divergence":
            raise
        return _picard(phi, start, cfg, 0.5, times, basis, alpha)


def _count_below(basis: EigenBasis, alpha: float) -> int:
    J = basis.size
    while basis.eigenvalue_of(J) <= alpha:
        J *= 2
    lam = basis.with_modes(J).eigenvalues if J > basis.size else basis.eigenvalues
    return int(np.searchsorted(lam, alpha, side="right"))


def _picard(phi, U, cfg, omega, times, basis, alpha) -> MildSolveResult:
    ratios: list[float] = []
    prev = math.nan
    above_one = 0
    diff = math.inf
    for it in range(1, cfg.max_iter + 1):
        new = phi(U)
        if omega != 1.0:
            new = U + omega * (new - U)
        if not np.all(np.isfinite(new)):
            raise FixedPointError("fixed-point iterate became non-finite", "divergence",
                                  ratios, math.inf)
        diff = float(np.max(np.linalg.norm(new - U, axis=1)))
        scale = float(np.max(np.linalg.norm(new, axis=1)))
        floor = 1e3 * np.finfo(float).eps * max(scale, 1.0)
        if math.isfinite(prev) and prev > floor:
            r = diff / prev
            ratios.append(r)
            above_one = above_one + 1 if r > 1 else 0
            if above_one >= 3:
                raise FixedPointError(
                    f"fixed-point iteration diverging (ratio {r:.3g} > 1 for 3 iterations, "
                    f"relaxation {omega:g})", "divergence", ratios, diff)
        U = new
        prev = diff
        if diff < cfg.tol * max(1.0, scale):
            return MildSolveResult(Trajectory(times, U, basis), it, ratios, diff, omega, alpha)
    raise FixedPointError(f"no convergence after {cfg.max_iter} iterations (residual {diff:.3e})",
                          "max_iter", ratios, diff)


def solve_backward_truncated(obs: NoisyObservation, F: SourceSpec | None,
                             params: TruncationParams,
                             cfg: MildSolveConfig = MildSolveConfig()) -> MildSolveResult:
    """Cut-off reconstruction from a noisy observation; see :func:`solve_mild`."""
    return solve_mild(obs.coeffs, obs.basis, F, params.alpha, params.T, cfg)


# -- error reporting -------------------------------------------------------

def _diff_coeffs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    J = max(len(a), len(b))
    out = np.zeros(J)
    out[: len(a)] += a
    out[: len(b)] -= b
    return out


def error_report(u_hat: Trajectory, u_ref: Trajectory, kind: NormKind = L2(),
                 t_list=None) -> dict[float, float]:
    """Norm of ``u_hat(t) - u_ref(t)`` for each requested ``t``.

    Both trajectories must live on the same rectangle; coefficient vectors of
    different lengths are compared after zero padding.
    """
    if not u_hat.basis.compatible(u_ref.basis):
        raise ValueError("trajectories live on different domains")
    if t_list is None:
        t_list = list(u_ref.times)
    big = u_hat.basis if u_hat.basis.size >= u_ref.basis.size else u_ref.basis
    out = {}
    for t in t_list:
        diff = _diff_coeffs(u_hat.coeffs_at(t), u_ref.coeffs_at(t))
        with np.errstate(over="ignore"):
            out[float(t)] = float(np.exp(0.5 * log_norm_squared(diff, big.eigenvalues, kind)))
    return out


def truncation_envelope(params: TruncationParams, t: float, g_norm_h2gamma: float,
                        A_prime: float, beta_s: float, lam_N: float,
                        form: str = "compact") -> float:
    """Right-hand side of the cut-off MISE estimate.

    ``form="compact"`` uses ``2 e^{2k^2(T-t)} e^{-2t alpha}[...]`` with the
    smoothness constant ``A'`` multiplying ``alpha^{-2 beta_s}``;
    ``form="gronwall"`` keeps every constant of the Gronwall estimate: factor 4 and
    ``e^{2k^2 T(T-t)}`` on the data terms, ``2 e^{2k^2(T-t)}`` on the ``A'`` term.
    Evaluated in log space; returns ``inf`` when it exceeds the float range.
    """
    p = params
    al = p.alpha
    data = [math.log(p.delta ** 2 * p.N) + 2 * p.T * al if p.delta > 0 else -math.inf,
            2 * p.T * al - 2 * p.gamma * math.log(lam_N) + 2 * math.log(g_norm_h2gamma)
            if g_norm_h2gamma > 0 else -math.inf]
    smooth = -2 * beta_s * math.log(al) + math.log(A_prime) if A_prime > 0 else -math.inf
    if form == "compact":
        log_val = math.log(2) + 2 * p.k ** 2 * (p.T - t) - 2 * t * al + np.logaddexp.reduce(data + [smooth])
    elif form == "gronwall":
        a = math.log(4) + 2 * p.k ** 2 * p.T * (p.T - t) - 2 * t * al + np.logaddexp.reduce(data)
        b = math.log(2) + 2 * p.k ** 2 * (p.T - t) - 2 * t * al + smooth
        log_val = np.logaddexp(a, b)
    else:
        raise ValueError(f"unknown envelope form {form!r}")
    return _exp_or_inf(log_val)


def sobolev_envelope(params: TruncationParams, t: float, p_index: float, g_norm_h2gamma: float,
                     A_second: float, r: float, lam_N: float) -> float:
    """``H^p`` counterpart: ``2 e^{2k^2 T(T-t)} e^{-2t alpha} alpha^p [2 delta^2 N e^{2T alpha}
    + 2 e^{2T alpha} lam_N^{-2 gamma} ||g||^2 + A'' e^{-2 r alpha}]``."""
    p = params
    al = p.alpha
    terms = [math.log(2 * p.delta ** 2 * p.N) + 2 * p.T * al if p.delta > 0 else -math.inf,
             math.log(2) + 2 * p.T * al - 2 * p.gamma * math.log(lam_N) + 2 * math.log(g_norm_h2gamma)
             if g_norm_h2gamma > 0 else -math.inf,
             math.log(A_second) - 2 * r * al if A_second > 0 else -math.inf]
    log_val = (math.log(2) + 2 * p.k ** 2 * p.T * (p.T - t) - 2 * t * al + p_index * math.log(al)
               + np.logaddexp.reduce(terms))
    return _exp_or_inf(log_val)


def _exp_or_inf(x: float) -> float:
    return math.inf if x > 709.0 else math.exp(x)
