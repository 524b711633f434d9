"""Time stepping for ``v_t = div(c grad v) + D v + S(x, t, v)`` on a sine basis.

``D`` is a diagonal multiplier on the eigenbasis.  Two schemes are provided:

* ``spectral``: when ``c`` does not depend on ``x`` the linear part is
  diagonal, and each step is exponential Euler,
  ``v+ = e^{L dt} v + dt phi1(L dt) S(v)`` with ``L = -c lambda + D``.
* ``fd``: conservative second-order finite differences on the grid with
  backward Euler for diffusion, the exact factor ``e^{D dt}`` applied in
  coefficient space and ``S`` explicit (Lie splitting).  The state is
  projected back to the retained modes after every step.

``c`` is frozen at the step midpoint; ``S`` is evaluated at the start of the step.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from .spectral import EigenBasis, SpectralField, synthesize_array, analyze_array
from .sources import SourceSpec, source_coefficients

__all__ = [
    "EvolutionProblem", "Trajectory", "SolverError", "DivergenceError",
    "PropagationOverflow", "solve_forward", "propagate_exact", "constant_coefficient",
]

Coefficient = Callable[[np.ndarray, float], np.ndarray]


def constant_coefficient(value: float) -> Coefficient:
    def c(x, t):
        return np.full(np.shape(x)[1:], float(value))
    c.constant = float(value)
    return c


class SolverError(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class DivergenceError(SolverError):
    def __init__(self, message: str, step: int | None = None, norm: float = math.nan):
        super().__init__(message, step)
        self.norm = norm


class PropagationOverflow(FloatingPointError):
    """Raised when an exact propagator factor exceeds the float range.

    ``log_abs`` holds ``log |factor_j c_j|`` for every mode so that callers
    can still report the magnitude.
    """

    def __init__(self, log_abs: np.ndarray):
        super().__init__(f"propagated coefficients overflow (max log-magnitude {np.max(log_abs):.4g})")
        self.log_abs = log_abs


@dataclass(frozen=True, eq=False)
class EvolutionProblem:
    """Linear-plus-source parabolic problem on the modes of ``basis``.

    Parameters
    ----------
    basis : EigenBasis
        Retained modes and the grid used for pointwise work.
    initial : SpectralField
        Initial state; padded or truncated to ``basis.size``.
    T : float
        Horizon.
    K : int
        Number of uniform time steps (default ``T/200`` step size).
    diffusion : float or callable
        ``c(x, t)`` with ``x`` of shape ``(d, ...)``; a float means a constant.
    c_bounds : tuple, optional
        Recorded ``(c_min, c_max)``; ``c_min`` must be positive.
    D : ndarray, optional
        Per-mode multiplier.
    source : SourceSpec, optional
    scheme : {"auto", "spectral", "fd"}
        ``auto`` picks ``spectral`` whenever ``c`` is constant in space at a step.
    blowup : float
        Divergence guard as a multiple of the initial norm.
    """

    basis: EigenBasis
    initial: SpectralField
    T: float
    K: int = 200
    diffusion: float | Coefficient = 1.0
    c_bounds: tuple[float, float] | None = None
    D: np.ndarray | None = None
    source: SourceSpec | None = None
    scheme: str = "auto"
    blowup: float = 1e6

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got {self.T}")
        if self.K < 1:
            raise ValueError(f"step count must be >= 1, got {self.K}")
        if self.scheme not in ("auto", "spectral", "fd"):
            raise ValueError(f"unknown scheme {self.scheme!r}; expected auto, spectral or fd")
        if not callable(self.diffusion):
            object.__setattr__(self, "diffusion", constant_coefficient(self.diffusion))
        if self.c_bounds is not None and not self.c_bounds[0] > 0:
            raise ValueError(f"diffusion lower bound must be positive, got {self.c_bounds[0]}")
        if self.D is not None:
            D = np.asarray(self.D, dtype=float)
            if D.shape != (self.basis.size,):
                raise ValueError(f"multiplier has shape {D.shape}, expected ({self.basis.size},)")
            object.__setattr__(self, "D", D)

    @property
    def dt(self) -> float:
        return self.T / self.K


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    coeffs: np.ndarray  # (K+1, J)
    basis: EigenBasis

    def __len__(self):
        return len(self.times)

    def field(self, i: int) -> SpectralField:
        return SpectralField(self.coeffs[i], self.basis)

    @property
    def final(self) -> SpectralField:
        return self.field(-1)

    def coeffs_at(self, t: float) -> np.ndarray:
        """Coefficients at ``t``, linearly interpolated between nodes."""
        times = self.times
        if not times[0] - 1e-12 <= t <= times[-1] + 1e-12:
            raise ValueError(f"t={t} outside [{times[0]}, {times[-1]}]")
        i = int(np.searchsorted(times, t))
        i = min(max(i, 1), len(times) - 1)
        t0, t1 = times[i - 1], times[i]
        for j, tj in ((i - 1, t0), (i, t1)):
            if abs(t - tj) <= 1e-12 * max(1.0, abs(tj)):
                return self.coeffs[j].copy()
        w = (t - t0) / (t1 - t0)
        return (1 - w) * self.coeffs[i - 1] + w * self.coeffs[i]

    def at(self, t: float) -> SpectralField:
        return SpectralField(self.coeffs_at(t), self.basis)

    def reversed(self) -> "Trajectory":
        """Re-index by ``t -> T - t``."""
        T = self.times[-1]
        return Trajectory(T - self.times[::-1], self.coeffs[::-1].copy(), self.basis)


# -- exact propagator ------------------------------------------------------

def propagate_exact(f: SpectralField, t: float, sign: int = 1) -> SpectralField:
    """Unit-diffusion heat propagator: ``c_j -> e^{-sign lambda_j t} c_j``.

    ``sign=+1`` decays (forward), ``sign=-1`` grows (backward).  Overflow
    raises :class:`PropagationOverflow` carrying log-magnitudes.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    lam = f.basis.eigenvalues[: len(f.coeffs)]
    expo = -sign * lam * t
    with np.errstate(over="ignore"):
        out = np.exp(expo) * f.coeffs
    if not np.all(np.isfinite(out)):
        with np.errstate(divide="ignore"):
            raise PropagationOverflow(expo + np.log(np.abs(f.coeffs)))
    return SpectralField(out, f.basis)


# -- stepping --------------------------------------------------------------

def _phi1(z: np.ndarray) -> np.ndarray:
    out = np.ones_like(z)
    nz = np.abs(z) > 1e-12
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


@functools.lru_cache(maxsize=64)
def _face_coords(domain, axis):
    """Node coordinates with ``axis`` shifted to the faces ``x_{i+1/2}``, i = 0..n."""
    axes = domain.axes()
    h = domain.spacing[axis]
    axes[axis] = (np.arange(domain.n[axis] + 1) + 0.5) * h
    return np.stack(np.meshgrid(*axes, indexing="ij"))


def _fd_operator(domain, c: Coefficient, t: float):
    """Sparse matrix of ``div(c grad .)`` with homogeneous Dirichlet data."""
    shape = domain.shape
    size = int(np.prod(shape))
    idx = np.arange(size).reshape(shape)
    A = sparse.csr_matrix((size, size))
    for axis in range(domain.d):
        h2 = domain.spacing[axis] ** 2
        cf = np.broadcast_to(np.asarray(c(_face_coords(domain, axis), t), dtype=float),
                             tuple(n + (1 if i == axis else 0) for i, n in enumerate(shape)))
        lo = np.take(cf, np.arange(shape[axis]), axis=axis)  # c_{i-1/2}
        hi = np.take(cf, np.arange(1, shape[axis] + 1), axis=axis)  # c_{i+1/2}
        diag = -(lo + hi).ravel() / h2
        rows, cols, vals = [idx.ravel()], [idx.ravel()], [diag]
        a = np.take(idx, np.arange(shape[axis] - 1), axis=axis).ravel()
        b = np.take(idx, np.arange(1, shape[axis]), axis=axis).ravel()
        off = np.take(hi, np.arange(shape[axis] - 1), axis=axis).ravel() / h2
        rows += [a, b]
        cols += [b, a]
        vals += [off, off]
        A = A + sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                  shape=(size, size))
    return A


def _implicit_solve(domain, c, t, dt, values, step):
    """Backward Euler: solve ``(I - dt A) w = values``."""
    try:
        if domain.d == 1:
            n = domain.n[0]
            h2 = domain.spacing[0] ** 2
            cf = np.broadcast_to(np.asarray(c(_face_coords(domain, 0), t), dtype=float), (n + 1,))
            ab = np.empty((2, n))
            ab[1] = 1.0 + dt * (cf[:-1] + cf[1:]) / h2
            ab[0, 1:] = -dt * cf[1:-1] / h2
            ab[0, 0] = 0.0
            w = linalg.solveh_banded(ab, values, lower=False)
        else:
            A = _fd_operator(domain, c, t)
            M = sparse.identity(A.shape[0], format="csc") - dt * A.tocsc()
            w = splinalg.spsolve(M, values.ravel()).reshape(domain.shape)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"implicit diffusion solve failed: {exc}", step) from exc
    if not np.all(np.isfinite(w)):
        raise SolverError("implicit diffusion solve produced non-finite values", step)
    return w


def _spatially_constant(c: Coefficient, domain, t: float):
    const = getattr(c, "constant", None)
    if const is not None:
        return const
    vals = np.asarray(c(domain.grid(), t), dtype=float)
    lo, hi = float(np.min(vals)), float(np.max(vals))
    if hi - lo <= 1e-14 * max(1.0, abs(hi)):
        return hi
    return None


def solve_forward(p: EvolutionProblem) -> Trajectory:
    """Integrate ``p`` on ``K`` uniform steps and return every node.

    Raises
    ------
    DivergenceError
        When the L2 norm exceeds ``blowup`` times the initial norm.
    SolverError
        When a linear solve fails; the step index is attached.
    """
    basis = p.basis
    J = basis.size
    lam = basis.eigenvalues
    D = np.zeros(J) if p.D is None else p.D
    dt = p.dt
    c = p.diffusion
    src = p.source if (p.source is not None and not p.source.is_zero) else None

    out = np.empty((p.K + 1, J))
    v = p.initial.padded(J)
    out[0] = v
    ref = float(np.linalg.norm(v)) or 1.0
    eD = np.exp(D * dt)
    for k in range(p.K):
        t = k * dt
        t_mid = t + 0.5 * dt
        S = source_coefficients(src, v, basis, t) if src is not None else None
        c_const = None if p.scheme == "fd" else _spatially_constant(c, basis.domain, t_mid)
        if c_const is None and p.scheme == "spectral":
            raise ValueError("spectral scheme needs a spatially constant diffusion coefficient")
        if c_const is not None:
            L = -c_const * lam + D
            v = np.exp(L * dt) * v
            if S is not None:
                v = v + dt * _phi1(L * dt) * S
        else:
            if S is not None:
                v = v + dt * S
            v = eD * v
            grid = synthesize_array(v, basis)
            v = analyze_array(_implicit_solve(basis.domain, c, t_mid, dt, grid, k), basis)
        nrm = float(np.linalg.norm(v))
        if not math.isfinite(nrm) or nrm > p.blowup * ref:
            raise DivergenceError(f"state norm {nrm:.3e} exceeds {p.blowup:g} x initial norm",
                                  k + 1, nrm)
        out[k + 1] = v
    times = np.linspace(0.0, p.T, p.K + 1)
    return Trajectory(times, out, basis)
