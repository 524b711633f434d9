"""Nonlinear sources F(x, t, u) with the structural metadata the regularizers rely on.

A :class:`SourceSpec` couples a vectorised evaluator with a tag describing
which estimate applies to it: a global Lipschitz constant, a local Lipschitz
function ``K(R)``, monotone-type growth constants, or a nonlocal spectral
multiplier.  Pointwise sources are applied pseudo-spectrally by
:func:`source_coefficients`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .spectral import EigenBasis, SpectralField, synthesize_array, analyze_array

__all__ = [
    "GloballyLipschitz", "LocallyLipschitz", "Structural", "NonlocalSpectral",
    "SourceSpec", "ClippedSource", "LipschitzEstimate", "StructuralReport",
    "zero", "linear", "ginzburg_landau", "fisher_kpp", "cube_root", "nonlocal_F0",
    "eval_source", "clip", "lipschitz_bound", "spectral_F0", "verify_structural",
    "source_coefficients", "time_reversed",
]

Evaluator = Callable[[np.ndarray | None, float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GloballyLipschitz:
    k: float


@dataclass(frozen=True)
class LocallyLipschitz:
    K: Callable[[float], float] | None = None  # closed-form K(R) when known


@dataclass(frozen=True)
class Structural:
    """Constants in ``zF >= C1|z|^p - C1'``, ``|F| <= C2(1+|z|^{p-1})`` and
    ``(z1-z2)(F(z1)-F(z2)) >= -gamma_bar (z1-z2)^2``."""

    p: float
    C1: float
    C1_prime: float
    C2: float
    gamma_bar: float


@dataclass(frozen=True)
class NonlocalSpectral:
    multiplier: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False, kw_only=True)
class SourceSpec:
    """A source term.

    ``func`` is vectorised in ``u``; ``x`` is either ``None`` (the source does
    not depend on position) or node coordinates broadcastable against ``u``.
    ``stepper_func``, when set, replaces ``func`` inside time steppers only.
    """

    name: str
    func: Evaluator | None
    kind: GloballyLipschitz | LocallyLipschitz | NonlocalSpectral | None = None
    structural: Structural | None = None
    stepper_func: Evaluator | None = None
    autonomous: bool = True
    x_dependent: bool = False

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"

    @property
    def is_nonlocal(self) -> bool:
        return isinstance(self.kind, NonlocalSpectral)

    def __call__(self, x, t, u):
        return eval_source(self, x, t, u)


@dataclass(frozen=True, eq=False, kw_only=True)
class ClippedSource(SourceSpec):
    """``F_R(u) = F(clip(u, -R, R))``, globally Lipschitz with constant ``K_R``."""

    base: SourceSpec
    R: float
    K_R: float


# -- registered sources ----------------------------------------------------

def zero() -> SourceSpec:
    return SourceSpec(name="zero", func=lambda x, t, u: np.zeros_like(u, dtype=float),
                      kind=GloballyLipschitz(0.0))


def linear(rate: float = 1.0) -> SourceSpec:
    """``F(u) = rate * u``."""
    return SourceSpec(name="linear", func=lambda x, t, u: rate * np.asarray(u, dtype=float),
                      kind=GloballyLipschitz(abs(rate)))


def ginzburg_landau() -> SourceSpec:
    """``F(u) = u - u^3`` with ``K(R) = 1 + 3R^2``."""
    return SourceSpec(name="ginzburg-landau", func=lambda x, t, u: u - u ** 3,
                      kind=LocallyLipschitz(lambda R: 1.0 + 3.0 * R * R))


def fisher_kpp(gamma=1.0, mu=1.0) -> SourceSpec:
    """``F(x, u) = gamma(x) u^2 - mu(x) u``.

    ``gamma`` and ``mu`` may be scalars, grid arrays or callables of the node
    coordinates.  No structural constants are claimed: for ``gamma > 0`` the
    sign condition fails at large ``u``.
    """
    callable_coef = callable(gamma) or callable(mu)
    g_sup = _sup_abs(gamma)
    m_sup = _sup_abs(mu)

    def func(x, t, u):
        return _coef(gamma, x) * u * u - _coef(mu, x) * u

    K = None if (g_sup is None or m_sup is None) else (lambda R: 2.0 * g_sup * R + m_sup)
    x_dep = callable_coef or np.ndim(gamma) > 0 or np.ndim(mu) > 0
    return SourceSpec(name="fisher-kpp", func=func, kind=LocallyLipschitz(K),
                      x_dependent=x_dep)


def _coef(c, x):
    if callable(c):
        if x is None:
            raise ValueError("position-dependent coefficient needs node coordinates")
        return np.asarray(c(x), dtype=float)
    return np.asarray(c, dtype=float)


def _sup_abs(c):
    if callable(c):
        return None
    return float(np.max(np.abs(c)))


CUBE_ROOT_EPS = 1e-8


def cube_root(eps: float = CUBE_ROOT_EPS) -> SourceSpec:
    """Real odd cube root; monotone, so ``gamma_bar = 0``.

    Time steppers use ``u / (eps^2 + u^2)^{1/3}``, which is smooth at the
    origin and agrees with the cube root to relative order ``(eps/u)^2``.
    """
    def smoothed(x, t, u):
        return u / np.cbrt(eps * eps + u * u)

    return SourceSpec(name="cube-root", func=lambda x, t, u: np.cbrt(u),
                      kind=LocallyLipschitz(None),
                      structural=Structural(4.0 / 3.0, 1.0, 0.0, 1.0, 0.0),
                      stepper_func=smoothed)


def nonlocal_F0(T: float) -> SourceSpec:
    """Spectral source with multiplier ``e^{-T lambda_j} / (2T)``."""
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    return SourceSpec(name="F0", func=None,
                      kind=NonlocalSpectral(lambda lam: np.exp(-T * lam) / (2.0 * T)))


# -- operations ------------------------------------------------------------

def eval_source(spec: SourceSpec, x, t, u, *, for_stepper: bool = False) -> np.ndarray:
    """Evaluate ``F(x, t, u)`` pointwise; rejects non-finite ``u``."""
    if spec.is_nonlocal:
        raise TypeError(f"{spec.name} is a spectral operator; use source_coefficients")
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("source argument must be finite")
    fn = spec.stepper_func if (for_stepper and spec.stepper_func is not None) else spec.func
    return np.asarray(fn(x, t, u), dtype=float)


def clip(spec: SourceSpec, R: float) -> ClippedSource:
    """Freeze ``spec`` outside ``[-R, R]``; the result is globally Lipschitz."""
    if not R > 0:
        raise ValueError(f"clip radius must be positive, got {R}")
    if spec.is_nonlocal:
        raise TypeError("nonlocal sources cannot be clipped")
    K_R = lipschitz_bound(spec, R).value
    base_fn = spec.func
    base_step = spec.stepper_func

    def func(x, t, u):
        return base_fn(x, t, np.clip(u, -R, R))

    stepper = None
    if base_step is not None:
        def stepper(x, t, u):
            return base_step(x, t, np.clip(u, -R, R))

    return ClippedSource(name=f"{spec.name}|R={R:g}", func=func, kind=GloballyLipschitz(K_R),
                         stepper_func=stepper, autonomous=spec.autonomous,
                         x_dependent=spec.x_dependent, base=spec, R=float(R), K_R=K_R)


@dataclass(frozen=True)
class LipschitzEstimate:
    """``value`` is the constant used downstream.

    For closed forms ``safety`` equals ``value``.  For numeric estimates
    ``value`` is the sampled sup of difference quotients and ``safety`` is
    ten times that; ``diverging`` is set when refining the sample keeps
    increasing the estimate, which signals an unbounded derivative.
    """

    value: float
    method: str
    safety: float
    diverging: bool = False


LIPSCHITZ_SAMPLES = 10_000


def _sampled_lipschitz(spec: SourceSpec, R: float, n: int) -> float:
    u = np.linspace(-R, R, n)
    F = eval_source(spec, None, 0.0, u)
    # for sorted nodes the sup over all pairs is attained by neighbours
    return float(np.max(np.abs(np.diff(F)) / np.diff(u)))


def lipschitz_bound(spec: SourceSpec, R: float) -> LipschitzEstimate:
    """Lipschitz constant of ``u -> F(x, t, u)`` on ``[-R, R]``."""
    if not R > 0:
        raise ValueError(f"radius must be positive, got {R}")
    kind = spec.kind
    if isinstance(kind, GloballyLipschitz):
        return LipschitzEstimate(float(kind.k), "closed-form", float(kind.k))
    if isinstance(kind, LocallyLipschitz) and kind.K is not None:
        K = float(kind.K(R))
        return LipschitzEstimate(K, "closed-form", K)
    if spec.is_nonlocal:
        raise TypeError("nonlocal sources have no pointwise Lipschitz constant")
    if spec.x_dependent or not spec.autonomous:
        raise ValueError(f"{spec.name}: numeric estimate needs an autonomous, position-free source")
    coarse = _sampled_lipschitz(spec, R, LIPSCHITZ_SAMPLES)
    fine = _sampled_lipschitz(spec, R, 10 * LIPSCHITZ_SAMPLES)
    diverging = fine > 1.5 * coarse
    return LipschitzEstimate(fine, "numeric", 10.0 * fine, diverging)


def spectral_F0(v: SpectralField, T: float) -> SpectralField:
    """Apply the multiplier ``e^{-T lambda_j} / (2T)`` to every coefficient."""
    if v.basis.d != 1:
        raise ValueError("F0 is defined on one-dimensional bases")
    lam = v.basis.eigenvalues[: len(v.coeffs)]
    return SpectralField(np.exp(-T * lam) / (2.0 * T) * v.coeffs, v.basis)


@dataclass(frozen=True)
class StructuralReport:
    passed: bool
    margins: dict[str, float]
    violations: list[tuple[str, tuple[float, ...]]]
    degenerate: bool
    notes: list[str] = field(default_factory=list)

    def summary(self) -> str:
        lines = [f"structural check: {'pass' if self.passed else 'FAIL'}"]
        for k, v in self.margins.items():
            lines.append(f"  {k}: worst margin {v:.3e}")
        for name, w in self.violations:
            lines.append(f"  violated {name} at z={w}")
        lines.extend(f"  note: {n}" for n in self.notes)
        return "\n".join(lines)


def verify_structural(spec: SourceSpec, z_range: float, p: float, C1: float, C1_prime: float,
                      C2: float, gamma_bar: float, n: int = 2001, n_pairs: int = 401) -> StructuralReport:
    """Check the sign, growth and one-sided monotonicity conditions on ``[-z_range, z_range]``.

    Margins are ``lhs - rhs`` (nonnegative when the inequality holds); a
    relative tolerance of 1e-12 absorbs rounding in equality cases.  The
    report flags degenerate constants (``p <= 1`` or ``C1 <= 0``), which
    make the sign condition vacuous.
    """
    z = np.linspace(-z_range, z_range, n)
    F = eval_source(spec, None, 0.0, z)
    az = np.abs(z)
    tol = 1e-12

    def check(name, lhs, rhs, witnesses):
        margin = lhs - rhs
        scale = tol * (1.0 + np.abs(lhs) + np.abs(rhs))
        bad = margin < -scale
        worst = float(np.min(margin))
        viol = []
        if np.any(bad):
            i = int(np.argmin(np.where(bad, margin, np.inf)))
            viol.append((name, tuple(float(w[i]) for w in witnesses)))
        return worst, viol

    margins, violations = {}, []
    m, v = check("sign", z * F, C1 * az ** p - C1_prime, (z,))
    margins["sign"] = m
    violations += v
    m, v = check("growth", C2 * (1.0 + az ** (p - 1.0)), np.abs(F), (z,))
    margins["growth"] = m
    violations += v

    zp = np.linspace(-z_range, z_range, n_pairs)
    Fp = eval_source(spec, None, 0.0, zp)
    dz = zp[:, None] - zp[None, :]
    dF = Fp[:, None] - Fp[None, :]
    z1 = np.broadcast_to(zp[:, None], dz.shape).ravel()
    z2 = np.broadcast_to(zp[None, :], dz.shape).ravel()
    m, v = check("monotonicity", (dz * dF).ravel(), (-gamma_bar * dz * dz).ravel(), (z1, z2))
    margins["monotonicity"] = m
    violations += v

    notes = []
    degenerate = p <= 1 or C1 <= 0
    if degenerate:
        notes.append(f"degenerate constants p={p}, C1={C1}: the sign condition needs p > 1 and C1 > 0")
    return StructuralReport(not violations and not degenerate, margins, violations, degenerate, notes)


def source_coefficients(spec: SourceSpec, coeffs: np.ndarray, basis: EigenBasis,
                        t: float | np.ndarray, *, for_stepper: bool = True) -> np.ndarray:
    """Spectral coefficients of ``F(x, t, u)`` for ``u = sum_j coeffs_j phi_j``.

    ``coeffs`` may carry leading batch axes; when ``t`` is an array its
    entries pair with the first batch axis.  Pointwise sources are evaluated
    on the grid of ``basis`` and analysed back onto all of its modes.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    J = coeffs.shape[-1]
    if spec.is_zero:
        return np.zeros(coeffs.shape[:-1] + (basis.size,))
    if spec.is_nonlocal:
        out = np.zeros(coeffs.shape[:-1] + (basis.size,))
        out[..., :J] = spec.kind.multiplier(basis.eigenvalues[:J]) * coeffs
        return out
    u = synthesize_array(coeffs, basis)
    x = basis.domain.grid() if spec.x_dependent else None
    if np.ndim(t) == 0 or spec.autonomous:
        t0 = float(np.ravel(t)[0]) if np.ndim(t) else float(t)
        F = eval_source(spec, x, t0, u, for_stepper=for_stepper)
    else:
        F = np.stack([eval_source(spec, x, float(ti), ui, for_stepper=for_stepper)
                      for ti, ui in zip(t, u)])
    return analyze_array(F, basis)


def time_reversed(spec: SourceSpec, T: float, sign: float = -1.0) -> SourceSpec:
    """``S(x, t, v) = sign * F(x, T - t, v)``, the source of the reversed-time problem."""
    if spec.is_nonlocal:
        mult = spec.kind.multiplier
        return SourceSpec(name=f"reversed({spec.name})", func=None,
                          kind=NonlocalSpectral(lambda lam: sign * mult(lam)))
    fn, step = spec.func, spec.stepper_func

    def func(x, t, v):
        return sign * fn(x, T - t, v)

    stepper = None
    if step is not None:
        def stepper(x, t, v):
            return sign * step(x, T - t, v)

    return SourceSpec(name=f"reversed({spec.name})", func=func, kind=spec.kind,
                      structural=spec.structural, stepper_func=stepper,
                      autonomous=spec.autonomous, x_dependent=spec.x_dependent)
