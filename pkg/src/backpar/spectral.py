"""Dirichlet-Laplacian eigenbasis on rectangles and the diagonal operators built on it.

Every operator used by the regularizers is diagonal in the sine eigenbasis, so
fields are carried as coefficient vectors.  Physical grids only exist to
evaluate pointwise nonlinearities.

On a rectangle ``prod_i (0, L_i)`` the eigenpairs are

.. math::

    \\phi_{j}(x) = \\prod_i \\sqrt{2/L_i} \\sin(j_i \\pi x_i / L_i), \\qquad
    \\lambda_j = \\sum_i (j_i \\pi / L_i)^2

and the uniform interior grid ``x_k = k L / (n + 1)`` makes the type-I
discrete sine transform an exact quadrature for band-limited fields.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import fft

__all__ = [
    "DomainSpec", "EigenBasis", "SpectralField", "GridField",
    "L2", "Sobolev", "Gevrey", "NormKind",
    "build_basis", "synthesize", "analyze", "project_truncate",
    "q_beta_multiplier", "p_beta_multiplier", "apply_Q_beta", "apply_P_beta",
    "beta_admissibility_bound", "norm", "log_norm_squared",
]


@dataclass(frozen=True)
class DomainSpec:
    """Rectangle ``prod (0, L_i)`` sampled on ``n`` interior nodes per axis."""

    d: int = 1
    lengths: tuple[float, ...] | None = None
    n: int | tuple[int, ...] = 64

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        lengths = self.lengths
        if lengths is None:
            lengths = (math.pi,) * self.d
        lengths = tuple(float(v) for v in np.broadcast_to(lengths, (self.d,)))
        if any(not v > 0 for v in lengths):
            raise ValueError(f"interval lengths must be positive, got {lengths}")
        n = tuple(int(v) for v in np.broadcast_to(self.n, (self.d,)))
        if any(v < 2 for v in n):
            raise ValueError(f"grid resolution must be at least 2, got {n}")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "n", n)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / (n + 1) for L, n in zip(self.lengths, self.n))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    def axes(self) -> list[np.ndarray]:
        return [np.arange(1, n + 1) * h for n, h in zip(self.n, self.spacing)]

    def grid(self) -> np.ndarray:
        """Node coordinates, shape ``(d, *shape)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def with_resolution(self, n) -> "DomainSpec":
        return DomainSpec(self.d, self.lengths, n)

    def max_mode_capacity(self) -> tuple[int, ...]:
        # alias-free analysis needs n >= 2 m + 2 on every axis
        return tuple((n - 2) // 2 for n in self.n)


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """The first ``J`` eigenpairs of the Dirichlet Laplacian, ascending in lambda."""

    domain: DomainSpec
    eigenvalues: np.ndarray
    modes: np.ndarray  # (J, d) integer mode tuples

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    @property
    def d(self) -> int:
        return self.domain.d

    def compatible(self, other: "EigenBasis") -> bool:
        """True when both bases describe the same rectangle."""
        return self.domain.d == other.domain.d and np.allclose(
            self.domain.lengths, other.domain.lengths)

    def on_grid(self, n) -> "EigenBasis":
        return build_basis(self.domain.with_resolution(n), self.size)

    def with_modes(self, J: int, n=None, min_n: int | None = None) -> "EigenBasis":
        """Same rectangle with ``J`` modes.

        Without ``n`` the grid keeps its resolution, refined only as far as
        ``J`` modes need (and at least to ``min_n`` when given).
        """
        return _extended_basis(self.domain, J, n, min_n)

    def eigenvalue_of(self, j: int) -> float:
        """lambda_j for a 1-based flat index that may exceed this basis."""
        if j <= self.size:
            return float(self.eigenvalues[j - 1])
        return float(_sorted_modes(self.domain.lengths, j)[0][j - 1])

    def __repr__(self):
        return f"EigenBasis(d={self.d}, J={self.size}, n={self.domain.n})"


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Coefficients ``<v, phi_j>`` for ``j = 1..len(coeffs)`` over ``basis``."""

    coeffs: np.ndarray
    basis: EigenBasis

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 1:
            raise ValueError("coefficient vector must be one-dimensional")
        if len(c) > self.basis.size:
            raise ValueError(f"{len(c)} coefficients exceed basis capacity {self.basis.size}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, basis: EigenBasis) -> "SpectralField":
        return cls(np.zeros(basis.size), basis)

    @classmethod
    def unit(cls, basis: EigenBasis, j: int) -> "SpectralField":
        """The eigenfunction ``phi_j`` (1-based)."""
        c = np.zeros(basis.size)
        c[j - 1] = 1.0
        return cls(c, basis)

    @classmethod
    def from_modes(cls, basis: EigenBasis, amplitudes: dict[int, float]) -> "SpectralField":
        c = np.zeros(basis.size)
        for j, v in amplitudes.items():
            c[j - 1] = v
        return cls(c, basis)

    def padded(self, J: int | None = None) -> np.ndarray:
        J = self.basis.size if J is None else J
        out = np.zeros(J)
        m = min(J, len(self.coeffs))
        out[:m] = self.coeffs[:m]
        return out

    def __add__(self, other: "SpectralField") -> "SpectralField":
        J = max(len(self.coeffs), len(other.coeffs))
        basis = self.basis if self.basis.size >= other.basis.size else other.basis
        return SpectralField(self.padded(J) + other.padded(J), basis)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return self + other * -1.0

    def __mul__(self, s: float) -> "SpectralField":
        return SpectralField(self.coeffs * s, self.basis)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class GridField:
    """Values on the interior grid; zero on the boundary by construction."""

    values: np.ndarray
    domain: DomainSpec

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.domain.shape:
            raise ValueError(f"grid shape {v.shape} does not match domain {self.domain.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "values", v)

    def l2_norm(self) -> float:
        """Discrete L2 norm (interior rectangle rule, exact for band-limited data)."""
        return float(np.sqrt(np.sum(self.values ** 2) * np.prod(self.domain.spacing)))


# -- basis construction ----------------------------------------------------

def _sorted_modes(lengths: Sequence[float], J: int):
    d = len(lengths)
    if d == 1:
        j = np.arange(1, J + 1)
        return (j * math.pi / lengths[0]) ** 2, j[:, None]
    # enlarge the search box until it provably holds the J smallest modes
    m = max(2, int(math.isqrt(J)) + 2)
    while True:
        cands = np.array(list(itertools.product(range(1, m + 1), repeat=d)))
        lam = np.sum((cands * math.pi / np.asarray(lengths)) ** 2, axis=1)
        order = np.lexsort(tuple(cands[:, i] for i in reversed(range(d))) + (lam,))
        lam, cands = lam[order], cands[order]
        if len(lam) >= J:
            edge = min((m + 1) * math.pi / L for L in lengths) ** 2
            if lam[J - 1] < edge:
                return lam[:J], cands[:J]
        m *= 2


def build_basis(spec: DomainSpec, J: int) -> EigenBasis:
    """First ``J`` Dirichlet eigenpairs of ``spec``, sorted ascending.

    Ties (equal eigenvalues in 2-D) are ordered lexicographically by the
    mode tuple.  Raises ``ValueError`` when a retained mode index would alias
    on the grid, i.e. when ``n < 2 * max_mode + 2`` on some axis.
    """
    if J < 1:
        raise ValueError(f"mode count must be >= 1, got {J}")
    lam, modes = _sorted_modes(spec.lengths, J)
    need = 2 * modes.max(axis=0) + 2
    if any(n < int(k) for n, k in zip(spec.n, need)):
        raise ValueError(
            f"grid {spec.n} cannot represent {J} modes without aliasing; "
            f"need n >= {tuple(int(k) for k in need)}")
    lam = lam.astype(float)
    lam.setflags(write=False)
    modes.setflags(write=False)
    return EigenBasis(spec, lam, modes)


def _extended_basis(domain: DomainSpec, J: int, n=None, min_n=None) -> EigenBasis:
    _, modes = _sorted_modes(domain.lengths, J)
    need = tuple(int(v) for v in 2 * modes.max(axis=0) + 2)
    if n is None:
        base = domain.n if min_n is None else (int(min_n),) * domain.d
        n = tuple(max(a, b) for a, b in zip(base, need))
    return build_basis(domain.with_resolution(n), J)


# -- transforms ------------------------------------------------------------

def _dst_scale(domain: DomainSpec) -> float:
    return float(np.prod([math.sqrt(2.0 / L) / 2.0 for L in domain.lengths]))


def _scatter(coeffs: np.ndarray, basis: EigenBasis) -> np.ndarray:
    """Coefficient vectors (..., J) -> mode-indexed arrays (..., *grid shape)."""
    lead = coeffs.shape[:-1]
    out = np.zeros(lead + basis.domain.shape)
    idx = tuple(basis.modes[: coeffs.shape[-1], i] - 1 for i in range(basis.d))
    out[(Ellipsis,) + idx] = coeffs
    return out


def _gather(arr: np.ndarray, basis: EigenBasis, J: int) -> np.ndarray:
    idx = tuple(basis.modes[:J, i] - 1 for i in range(basis.d))
    return arr[(Ellipsis,) + idx]


def synthesize_array(coeffs: np.ndarray, basis: EigenBasis) -> np.ndarray:
    """Vectorised synthesis: leading axes of ``coeffs`` are batch axes."""
    d = basis.d
    axes = tuple(range(-d, 0))
    a = _scatter(np.asarray(coeffs, dtype=float), basis)
    return fft.dstn(a, type=1, axes=axes) * _dst_scale(basis.domain)


def analyze_array(values: np.ndarray, basis: EigenBasis, J: int | None = None) -> np.ndarray:
    """Vectorised analysis onto the first ``J`` modes of ``basis``."""
    J = basis.size if J is None else J
    d = basis.d
    axes = tuple(range(-d, 0))
    a = fft.dstn(np.asarray(values, dtype=float), type=1, axes=axes)
    a *= _dst_scale(basis.domain) * float(np.prod(basis.domain.spacing))
    return _gather(a, basis, J)


def synthesize(f: SpectralField) -> GridField:
    """Evaluate ``sum_j c_j phi_j`` at the grid nodes of ``f.basis``."""
    return GridField(synthesize_array(f.coeffs, f.basis), f.basis.domain)


def analyze(g: GridField, basis: EigenBasis) -> SpectralField:
    """Discrete sine quadrature of ``<g, phi_j>`` for every mode of ``basis``."""
    if g.domain.shape != basis.domain.shape:
        raise ValueError("grid field does not live on the basis grid")
    return SpectralField(analyze_array(g.values, basis), basis)


# -- diagonal operators -----------------------------------------------------

def project_truncate(f: SpectralField, alpha: float) -> SpectralField:
    """Keep modes with ``lambda_j <= alpha`` and zero the rest."""
    if alpha < 0:
        raise ValueError(f"threshold must be nonnegative, got {alpha}")
    lam = f.basis.eigenvalues[: len(f.coeffs)]
    return SpectralField(np.where(lam <= alpha, f.coeffs, 0.0), f.basis)


def q_beta_multiplier(lam: np.ndarray, beta: float, M: float, T: float) -> np.ndarray:
    """``(1/T) ln(1 + beta e^{M T lambda})`` evaluated without overflow."""
    _check_qp_args(beta, M, T)
    return np.logaddexp(0.0, math.log(beta) + M * T * np.asarray(lam, dtype=float)) / T


def p_beta_multiplier(lam: np.ndarray, beta: float, M: float, T: float) -> np.ndarray:
    """``(1/T) ln(beta + e^{-M T lambda})``, i.e. ``-M lambda`` plus the Q multiplier."""
    _check_qp_args(beta, M, T)
    return np.logaddexp(math.log(beta), -M * T * np.asarray(lam, dtype=float)) / T


def beta_admissibility_bound(lam1: float, M: float, T: float) -> float:
    """Upper limit ``1 - e^{-M T lambda_1}`` for beta."""
    return -math.expm1(-M * T * lam1)


def _check_qp_args(beta, M, T):
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if not (M > 0 and T > 0):
        raise ValueError(f"M and T must be positive, got M={M}, T={T}")


def apply_Q_beta(f: SpectralField, beta: float, M: float, T: float) -> SpectralField:
    lam = f.basis.eigenvalues[: len(f.coeffs)]
    return SpectralField(q_beta_multiplier(lam, beta, M, T) * f.coeffs, f.basis)


def apply_P_beta(f: SpectralField, beta: float, M: float, T: float) -> SpectralField:
    """Apply ``M Delta + Q_beta``; beta must satisfy ``beta < 1 - e^{-M T lambda_1}``."""
    bound = beta_admissibility_bound(float(f.basis.eigenvalues[0]), M, T)
    if not 0 < beta < bound:
        raise ValueError(f"beta={beta} is not admissible: need 0 < beta < {bound:.6g}")
    lam = f.basis.eigenvalues[: len(f.coeffs)]
    return SpectralField(p_beta_multiplier(lam, beta, M, T) * f.coeffs, f.basis)


# -- norms -----------------------------------------------------------------

@dataclass(frozen=True)
class L2:
    def log_weights(self, lam):
        return np.zeros_like(lam)


@dataclass(frozen=True)
class Sobolev:
    p: float

    def __post_init__(self):
        if not self.p >= 0:
            raise ValueError(f"Sobolev index must be >= 0, got {self.p}")

    def log_weights(self, lam):
        return self.p * np.log(lam)


@dataclass(frozen=True)
class Gevrey:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"Gevrey index must be > 0, got {self.sigma}")

    def log_weights(self, lam):
        return 2.0 * self.sigma * lam


NormKind = L2 | Sobolev | Gevrey


def log_norm_squared(coeffs: np.ndarray, lam: np.ndarray, kind: NormKind = L2()) -> float:
    """``log sum_j w_j c_j^2``; ``-inf`` for the zero field."""
    c = np.asarray(coeffs, dtype=float)
    lam = np.asarray(lam, dtype=float)[: c.shape[-1]]
    nz = c != 0
    if not np.any(nz):
        return -math.inf
    terms = kind.log_weights(lam[nz]) + 2.0 * np.log(np.abs(c[nz]))
    return float(np.logaddexp.reduce(terms))


def norm(f: SpectralField, kind: NormKind = L2()) -> float:
    """``sqrt(sum_j w_j c_j^2)`` with weights 1, ``lambda^p`` or ``e^{2 sigma lambda}``.

    Weighted sums are accumulated in log space; a norm too large for a float
    comes back as ``inf``.
    """
    lam = f.basis.eigenvalues
    if isinstance(kind, L2):
        return float(np.sqrt(np.sum(f.coeffs ** 2)))
    with np.errstate(over="ignore"):
        return float(np.exp(0.5 * log_norm_squared(f.coeffs, lam, kind)))
