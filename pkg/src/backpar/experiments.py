"""Monte Carlo MISE estimation, rate fitting and the ill-posedness demonstration.

A :class:`ManufacturedCase` supplies ground truth: a finite-mode initial state
is pushed forward with :func:`backpar.evolve.solve_forward` on a fine grid,
and its final state ``g`` is what the inversion methods observe with noise.
"""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .evolve import DivergenceError, EvolutionProblem, SolverError, Trajectory, solve_forward
from .qr import choose_params_qr, qr_envelope, solve_qr
from .sources import SourceSpec, clip, nonlocal_F0
from .spectral import (DomainSpec, EigenBasis, SpectralField, Sobolev,
                       build_basis, log_norm_squared)
from .stochastic import (NoiseConfig, brownian_path, mise_bound, observe_final,
                         perturb_coefficient, substream, OBSERVATION)
from .truncation import (FixedPointError, MildSolveConfig,
                         ceil_count, choose_N_illposed, choose_params_truncation,
                         solve_mild, truncation_envelope)

__all__ = [
    "METHODS", "ManufacturedCase", "manufacture", "MethodSettings", "MISERow", "MISEReport",
    "run_mise", "fit_rate", "RateFit", "emit_report", "parse_report", "CSV_HEADER",
    "IllposedRow", "illposed_demo", "emit_illposed", "resolve_threads",
]

METHODS = ("truncation", "qr-clipped", "qr-structural", "naive-backward", "observe-only")
CSV_HEADER = ["method", "delta", "t", "trials", "mise_mean", "mise_stderr",
              "envelope", "slope", "slope_ci"]
NOISE_FLOOR = 1e-12  # relative size below which reference coefficients count as discretization noise


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``BACKPAR_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("BACKPAR_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    return threads


# -- manufactured solutions ------------------------------------------------

@dataclass(frozen=True, eq=False)
class ManufacturedCase:
    """Reference trajectory and the smoothness constants the error bounds need.

    Sums over modes skip reference coefficients below ``NOISE_FLOOR`` times
    the largest one; at that size they are discretization residue, and their
    exponential weights would otherwise swamp every constant.
    """

    name: str
    u0: SpectralField
    a: float | Callable
    source: SourceSpec
    T: float
    reference: Trajectory
    gamma: float = 1.0

    @property
    def basis(self) -> EigenBasis:
        return self.reference.basis

    @property
    def g(self) -> SpectralField:
        return self.reference.final

    @property
    def a_constant(self) -> float | None:
        return None if callable(self.a) else float(self.a)

    def _significant(self) -> np.ndarray:
        c = self.reference.coeffs
        return np.where(np.abs(c) > NOISE_FLOOR * np.max(np.abs(c)), c, 0.0)

    def _sup_log(self, log_weight: Callable[[np.ndarray, float], np.ndarray]) -> float:
        lam = self.basis.eigenvalues
        best = -math.inf
        for t, c in zip(self.reference.times, self._significant()):
            nz = c != 0
            if np.any(nz):
                val = float(np.logaddexp.reduce(log_weight(lam[nz], t) + 2 * np.log(np.abs(c[nz]))))
                best = max(best, val)
        return best

    def g_norm_h2gamma(self, gamma: float | None = None) -> float:
        gamma = self.gamma if gamma is None else gamma
        c = self._significant()[-1]
        return float(np.exp(0.5 * log_norm_squared(c, self.basis.eigenvalues, Sobolev(2 * gamma))))

    def A_prime(self, beta_s: float = 1.0) -> float:
        """``sup_t sum_j lambda_j^{2 beta_s} e^{2 t lambda_j} u_j(t)^2``."""
        return _exp_or_inf(self._sup_log(lambda lam, t: 2 * beta_s * np.log(lam) + 2 * t * lam))

    def A_second(self, r: float = 1.0) -> float:
        """``sup_t sum_j e^{2(t + r) lambda_j} u_j(t)^2``."""
        return _exp_or_inf(self._sup_log(lambda lam, t: 2 * (t + r) * lam))

    def u_wmt_sq(self, M: float) -> float:
        """``||u||^2_{C([0,T]; W_{MT})}`` with weights ``e^{2 M T lambda_j}``."""
        return _exp_or_inf(self._sup_log(lambda lam, t: 2 * M * self.T * lam))

    def u_h1_sq(self) -> float:
        """``||u||^2_{L^inf(0,T; H^1_0)}`` with weights ``lambda_j``."""
        return _exp_or_inf(self._sup_log(lambda lam, t: np.log(lam)))

    def sup_abs(self) -> float:
        """Largest grid value of ``|u|`` along the reference trajectory."""
        from .spectral import synthesize_array
        return float(np.max(np.abs(synthesize_array(self.reference.coeffs, self.basis))))


def _exp_or_inf(x: float) -> float:
    if x == -math.inf:
        return 0.0
    return math.inf if x > 709.0 else math.exp(x)


def manufacture(name: str, u0_modes: Sequence[float], source: SourceSpec, T: float = 1.0,
                a: float | Callable = 1.0, d: int = 1, modes: int = 32, n: int = 128,
                steps: int = 4000, gamma: float = 1.0) -> ManufacturedCase:
    """Forward-solve ``u_t = div(a grad u) + F(u)`` from ``u0 = sum_j u0_modes[j] phi_j``.

    The reference grid (``modes``, ``n``, ``steps``) should be at least twice
    as fine as any inversion that is compared against it.
    """
    if len(u0_modes) > modes:
        raise ValueError("initial state has more modes than the reference basis")
    basis = build_basis(DomainSpec(d, n=n), modes)
    u0 = SpectralField(np.asarray(u0_modes, dtype=float), basis)
    prob = EvolutionProblem(basis, u0, T, steps, a, source=source)
    return ManufacturedCase(name, u0, a, source, T, solve_forward(prob), gamma)


# -- settings --------------------------------------------------------------

@dataclass(frozen=True)
class MethodSettings:
    """Inputs of every parameter rule plus solver resolution.

    ``trunc_R`` is the clip radius applied to the source for the cut-off
    method; its Lipschitz constant is used as ``k`` unless ``trunc_k`` is set.
    ``naive_exponent`` sets the mode count ``ceil((1/delta)^nu)`` of the
    unregularized baseline, which inverts every observed mode.
    """

    # cut-off rule
    trunc_a: float = 1.5
    trunc_b: float = 0.5
    trunc_R: float = 0.6
    trunc_k: float | None = None
    beta_s: float = 1.0
    # quasi-reversibility rule
    qr_c: float = 0.25
    qr_m: float = 0.9
    qr_k: float = 0.02
    qr_M: float | None = None
    coefficient_noise: bool = True
    structural_range: float = 10.0
    # baseline
    naive_exponent: float = 0.25
    # resolution
    mild_nodes: int = 201
    qr_steps: int = 200
    solver_modes: int = 16
    solver_n: int = 64


# -- report ----------------------------------------------------------------

@dataclass(frozen=True)
class MISERow:
    method: str
    delta: float
    t: float
    trials: int
    mise_mean: float
    mise_stderr: float
    envelope: float
    slope: float
    slope_ci: float

    def as_strings(self) -> list[str]:
        return [self.method] + [repr(float(v)) if isinstance(v, float) else str(v)
                                for v in (self.delta, self.t, self.trials, self.mise_mean,
                                          self.mise_stderr, self.envelope, self.slope,
                                          self.slope_ci)]


@dataclass
class MISEReport:
    rows: list[MISERow] = field(default_factory=list)
    failures: dict[tuple[str, float], list[str]] = field(default_factory=dict)
    attempted: dict[tuple[str, float], int] = field(default_factory=dict)
    params: dict[tuple[str, float], dict] = field(default_factory=dict)
    header: dict[str, str] = field(default_factory=dict)

    def flagged(self) -> list[tuple[str, float]]:
        """(method, delta) groups where more than 10% of trials failed."""
        return [k for k, n in self.attempted.items() if len(self.failures.get(k, [])) > 0.1 * n]

    def select(self, method: str, t: float | None = None) -> list[MISERow]:
        return [r for r in self.rows if r.method == method and (t is None or abs(r.t - t) < 1e-12)]

    def extend(self, other: "MISEReport") -> None:
        self.rows += other.rows
        self.failures.update(other.failures)
        self.attempted.update(other.attempted)
        self.params.update(other.params)
        methods = [m for m in (self.header.get("method"), other.header.get("method")) if m]
        self.header.update(other.header)
        if methods:
            self.header["method"] = ", ".join(dict.fromkeys(", ".join(methods).split(", ")))


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    slope_stderr: float
    slope_ci: float  # half-width of the 95% interval


def fit_rate(points: Sequence[tuple[float, float]]) -> RateFit:
    """Least squares of ``ln mise`` on ``ln delta``.

    Examples
    --------
    >>> round(fit_rate([(1e-1, 1e-2), (1e-2, 1e-4), (1e-3, 1e-6)]).slope, 12)
    2.0
    """
    if len(points) < 3:
        raise ValueError(f"rate fit needs at least 3 points, got {len(points)}")
    d = np.array([p[0] for p in points], dtype=float)
    m = np.array([p[1] for p in points], dtype=float)
    if np.any(d <= 0) or np.any(m <= 0) or not np.all(np.isfinite(m)):
        raise ValueError("rate fit needs positive finite values")
    x, y = np.log(d), np.log(m)
    res = stats.linregress(x, y)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - res.intercept - res.slope * x) ** 2))
    r2 = 1.0 if ss_tot <= 1e-300 or ss_res <= 1e-24 * max(ss_tot, 1.0) else 1.0 - ss_res / ss_tot
    dof = len(points) - 2
    ci = float(stats.t.ppf(0.975, dof) * res.stderr) if dof > 0 else math.inf
    return RateFit(float(res.slope), float(res.intercept), r2, float(res.stderr), ci)


def emit_report(report: MISEReport, path: str | os.PathLike) -> tuple[Path, Path]:
    """Write the CSV and a plain-text summary next to it (``.txt``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in report.rows:
        w.writerow(r.as_strings())
    path.write_text(buf.getvalue())
    summary = path.with_suffix(".txt")
    summary.write_text(_summary_text(report))
    return path, summary


def parse_report(path: str | os.PathLike) -> list[MISERow]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {rows[0] if rows else None}")
    out = []
    for r in rows[1:]:
        if len(r) != len(CSV_HEADER):
            raise ValueError(f"{path}: row has {len(r)} columns, expected {len(CSV_HEADER)}")
        out.append(MISERow(r[0], float(r[1]), float(r[2]), int(r[3]), *map(float, r[4:])))
    return out


def _summary_text(report: MISEReport) -> str:
    lines = [f"# {k}: {v}" for k, v in report.header.items()]
    lines.append("")
    lines.append(f"{'method':<15}{'delta':>10}{'t':>8}{'trials':>8}{'MISE':>13}{'stderr':>11}"
                 f"{'envelope':>12}{'slope':>9}{'ci':>9}")
    for r in report.rows:
        lines.append(f"{r.method:<15}{r.delta:>10.2e}{r.t:>8.3f}{r.trials:>8d}{r.mise_mean:>13.4e}"
                     f"{r.mise_stderr:>11.2e}{r.envelope:>12.3e}{r.slope:>9.4f}{r.slope_ci:>9.4f}")
    for key, p in report.params.items():
        lines.append(f"params {key[0]} delta={key[1]:g}: " + ", ".join(f"{k}={v:.6g}" if isinstance(v, float)
                                                                        else f"{k}={v}" for k, v in p.items()))
    flagged = report.flagged()
    for key in flagged:
        fails = report.failures[key]
        lines.append(f"FLAGGED {key[0]} delta={key[1]:g}: {len(fails)}/{report.attempted[key]} trials failed")
        lines.extend(f"  - {msg}" for msg in fails)
    return "\n".join(lines) + "\n"


# -- Monte Carlo -----------------------------------------------------------

class _Method:
    """One inversion method at one noise level."""

    def __init__(self, case: ManufacturedCase, method: str, delta: float, s: MethodSettings):
        self.case, self.method, self.delta, self.s = case, method, delta, s
        T = case.T
        d = case.basis.d
        self.params: dict = {}
        if method in ("truncation", "observe-only"):
            R = s.trunc_R
            self.source = clip(case.source, R)
            k = s.trunc_k if s.trunc_k is not None else max(self.source.K_R, 1e-12)
            self.tp = choose_params_truncation(delta, k, T, case.gamma, d, s.trunc_a, s.trunc_b)
            self.N = self.tp.N
            self.params = {"N": self.tp.N, "alpha": self.tp.alpha, "k": k, "R": R}
        elif method in ("qr-clipped", "qr-structural"):
            mode = "clipped" if method == "qr-clipped" else "structural"
            a_sup = self._a_sup()
            M = s.qr_M if s.qr_M is not None else 2.0 * a_sup
            self.qp = choose_params_qr(delta, s.qr_c, s.qr_m, case.gamma, d, s.qr_k, T, M,
                                       lam1=float(case.basis.eigenvalues[0]),
                                       source=case.source, mode=mode)
            self.mode = mode
            self.N = self.qp.N
            self.params = {"N": self.qp.N, "beta": self.qp.beta, "M": M}
            if mode == "clipped":
                self.params.update(R=self.qp.R, K_R=self.qp.K_R)
            else:
                self.params.update(gamma_bar=self.qp.gamma_bar)
            J = max(self.N, s.solver_modes)
            self.solver_basis = case.basis.with_modes(J, n=None, min_n=s.solver_n)
        elif method == "naive-backward":
            self.N = ceil_count((1.0 / delta) ** s.naive_exponent)
            self.source = clip(case.source, s.trunc_R)
            self.alpha = case.basis.eigenvalue_of(self.N)
            self.params = {"N": self.N, "alpha": self.alpha}
        else:
            raise ValueError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")

    def _a_sup(self) -> float:
        a = self.case.a
        if callable(a):
            return float(np.max(a(self.case.basis.domain.grid(), 0.0)))
        return float(a)

    def run(self, trial: int, seed: int, t_list: Sequence[float]) -> list[float]:
        case, s = self.case, self.s
        obs = observe_final(case.g, NoiseConfig(self.delta, self.N, seed, trial))
        if self.method == "observe-only":
            err = float(np.sum((obs.coeffs - case.g.padded(self.N)) ** 2))
            if case.basis.size > self.N:
                err += float(np.sum(case.g.coeffs[self.N:] ** 2))
            return [err for _ in t_list]
        if self.method == "truncation":
            traj = solve_mild(obs.coeffs, obs.basis, self.source, self.tp.alpha, case.T,
                              MildSolveConfig(nodes=s.mild_nodes, grid_n=s.solver_n)).trajectory
        elif self.method == "naive-backward":
            traj = solve_mild(obs.coeffs, obs.basis, self.source, self.alpha, case.T,
                              MildSolveConfig(nodes=s.mild_nodes, grid_n=s.solver_n)).trajectory
        else:
            a = case.a
            if s.coefficient_noise:
                a_fn = a if callable(a) else (lambda x, t, v=float(a): np.full(np.shape(x)[1:], v))
                psi = brownian_path(case.T, s.qr_steps, seed, trial)
                a = perturb_coefficient(a_fn, self.delta, psi, case.basis.domain.grid(), M=self.qp.M)
            traj = solve_qr(obs, a, self.qp, case.source, self.mode, self.solver_basis,
                            K=s.qr_steps, z_range=s.structural_range).trajectory
        out = []
        for t in t_list:
            diff = _pad_diff(traj.coeffs_at(t), case.reference.coeffs_at(t))
            out.append(float(np.dot(diff, diff)))
        return out

    def envelope(self, t: float) -> float:
        case = self.case
        if self.method == "observe-only":
            lam_N = case.basis.eigenvalue_of(self.N)
            return mise_bound(self.delta, self.N, case.gamma, case.g_norm_h2gamma(), lam_N)
        if self.method == "truncation":
            lam_N = case.basis.eigenvalue_of(self.N)
            return truncation_envelope(self.tp, t, case.g_norm_h2gamma(), case.A_prime(self.s.beta_s),
                                       self.s.beta_s, lam_N)
        if self.method in ("qr-clipped", "qr-structural"):
            p = self.qp
            growth = p.K_R if self.mode == "clipped" else p.gamma_bar
            lam_N = case.basis.eigenvalue_of(self.N)
            a_sup = self._a_sup()
            b0 = p.M - a_sup
            if self.s.coefficient_noise:
                b0 = p.M - a_sup - self.delta * 4.0 * math.sqrt(case.T)  # 4-sigma Brownian excursion
            if not b0 > 0:
                return math.inf
            return qr_envelope(p, t, growth, case.g_norm_h2gamma(), case.u_wmt_sq(p.M),
                               case.u_h1_sq(), b0, lam_N)
        return math.nan


def _pad_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    J = max(len(a), len(b))
    out = np.zeros(J)
    out[: len(a)] += a
    out[: len(b)] -= b
    return out


_EXPECTED_FAILURES = (FixedPointError, SolverError, DivergenceError, ValueError, FloatingPointError)


def run_mise(case: ManufacturedCase, method: str, deltas: Sequence[float],
             t_list: Sequence[float], trials: int, seed: int,
             settings: MethodSettings = MethodSettings(), threads: int | None = None) -> MISEReport:
    """Monte Carlo estimate of ``E||u_hat(t) - u(t)||^2`` per noise level and time.

    Trial ``i`` at every noise level draws from the substreams keyed by
    ``(seed, purpose, i)``, so the same standard-normal draws are reused
    across ``deltas``.  Results are stored by trial index and reduced in
    that order, which keeps the output independent of ``threads``.
    Failed trials (divergence, invalid coefficient noise) are excluded from
    the mean and itemized; more than 10% failures flags the group.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    threads = resolve_threads(threads)
    report = MISEReport()
    report.header.update(method=method, case=case.name, trials=str(trials), seed=str(seed),
                         deltas=" ".join(repr(float(d)) for d in deltas),
                         t_list=" ".join(repr(float(t)) for t in t_list),
                         settings=", ".join(f"{k}={v}" for k, v in asdict(settings).items()))
    per_delta = []
    for delta in deltas:
        m = _Method(case, method, float(delta), settings)
        key = (method, float(delta))
        report.params[key] = m.params

        def one(i, m=m):
            try:
                return m.run(i, seed, t_list)
            except _EXPECTED_FAILURES as exc:
                return f"trial {i}: {type(exc).__name__}: {exc}"

        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                results = list(ex.map(one, range(trials)))
        else:
            results = [one(i) for i in range(trials)]
        ok = [r for r in results if not isinstance(r, str)]
        fails = [r for r in results if isinstance(r, str)]
        report.attempted[key] = trials
        if fails:
            report.failures[key] = fails
        errs = np.array(ok, dtype=float).reshape(len(ok), len(t_list))
        per_delta.append((float(delta), m, errs))

    for j, t in enumerate(t_list):
        means = []
        for delta, m, errs in per_delta:
            col = errs[:, j]
            n = len(col)
            mean = float(np.mean(col)) if n else math.nan
            se = float(np.std(col, ddof=1) / math.sqrt(n)) if n > 1 else (0.0 if n == 1 else math.nan)
            means.append((delta, mean, se, n, m.envelope(float(t))))
        pts = [(d_, mu) for d_, mu, _, _, _ in means if mu > 0 and math.isfinite(mu)]
        if len(pts) >= 3 and len({p[0] for p in pts}) >= 2:
            fit = fit_rate(pts)
            slope, ci = fit.slope, fit.slope_ci
        else:
            slope, ci = math.nan, math.nan
        for delta, mean, se, n, env in means:
            report.rows.append(MISERow(method, delta, float(t), n, mean, se, env, slope, ci))
    report.rows.sort(key=lambda r: (-r.delta, r.t))
    return report


# -- ill-posedness demonstration ------------------------------------------

@dataclass(frozen=True)
class IllposedRow:
    delta: float
    N_raw: float
    N: int
    trials: int
    data_mean: float
    data_stderr: float
    data_pred: float  # delta^2 N with the integer mode count
    data_pred_raw: float  # delta^2 sqrt(ln(1/delta)/(2T))
    energy_mean: float
    energy_stderr: float
    energy_target: float  # (2/5)/delta
    energy_bound: float  # (2/5) delta^2 e^{2 T N^2}
    contraction: float
    note: str = ""


def illposed_demo(T: float, deltas: Sequence[float], trials: int, seed: int,
                  cfg: MildSolveConfig = MildSolveConfig(), threads: int | None = None) -> list[IllposedRow]:
    """Pure-noise data ``G_j = delta xi_j`` inverted with the nonlocal source F0.

    For each ``delta`` the mode count is ``N(delta) = ceil(sqrt(ln(1/delta)/(2T)))``.
    Reports the data energy ``E||G||^2`` and the reconstruction energy
    ``E sup_t ||V(t)||^2`` with both reference values: the target ``(2/5)/delta``
    and ``(2/5) delta^2 e^{2 T N^2}``, which the construction actually bounds.
    """
    threads = resolve_threads(threads)
    basis = build_basis(DomainSpec(1, n=64), 8)
    F0 = nonlocal_F0(T)
    rows = []
    for delta in deltas:
        delta = float(delta)
        if delta >= 1.0:
            rows.append(IllposedRow(delta, 0.0, 0, 0, *(math.nan,) * 9, note="skipped: ln(1/delta) <= 0"))
            continue
        choice = choose_N_illposed(delta, T)
        N = choice.N
        lamN = float(N * N)

        def one(i):
            G = delta * substream(seed, OBSERVATION, i).standard_normal(N)
            res = solve_mild(G, basis, F0, lamN, T, cfg)
            energy = float(np.max(np.sum(res.trajectory.coeffs ** 2, axis=1)))
            return float(np.dot(G, G)), energy, res.contraction

        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                out = list(ex.map(one, range(trials)))
        else:
            out = [one(i) for i in range(trials)]
        arr = np.array(out)
        n = len(arr)
        data, energy = arr[:, 0], arr[:, 1]
        ratios = arr[:, 2][np.isfinite(arr[:, 2])]
        rows.append(IllposedRow(
            delta, choice.raw, N, n,
            float(np.mean(data)), float(np.std(data, ddof=1) / math.sqrt(n)),
            delta ** 2 * N, choice.predicted_data_error(delta),
            float(np.mean(energy)), float(np.std(energy, ddof=1) / math.sqrt(n)),
            0.4 / delta, 0.4 * delta ** 2 * math.exp(2.0 * T * N * N),
            float(np.max(ratios)) if len(ratios) else math.nan))
    return rows


ILLPOSED_HEADER = ["delta", "N_raw", "N", "trials", "data_mean", "data_stderr", "data_pred",
                   "data_pred_raw", "energy_mean", "energy_stderr", "energy_target",
                   "energy_bound", "contraction", "note"]


def emit_illposed(rows: Sequence[IllposedRow], path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ILLPOSED_HEADER)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else str(v) for v in asdict(r).values()])
    path.write_text(buf.getvalue())
    return path
