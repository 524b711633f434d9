"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria run at their stated sizes and tolerances.  A criterion that the
implementation cannot meet is reported as FAIL and the test fails.
"""
import math
import time

import numpy as np
import pytest

from backpar.evolve import EvolutionProblem, solve_forward
from backpar.experiments import MethodSettings, emit_report, illposed_demo, manufacture, run_mise
from backpar.qr import compare_case2_case3
from backpar.sources import cube_root, ginzburg_landau, nonlocal_F0
from backpar.spectral import (DomainSpec, Gevrey, Sobolev, SpectralField, analyze, apply_P_beta,
                              apply_Q_beta, beta_admissibility_bound, build_basis, norm, synthesize)
from backpar.stochastic import NoiseConfig, mise_bound, observe_final
from backpar.truncation import MildSolveConfig, solve_mild

T = 1.0
DELTAS = [1e-2, 1e-3, 1e-4]
TRIALS = 200
SEED = 20240601
SETTINGS = MethodSettings(qr_M=1.5, qr_m=0.95)


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


@pytest.fixture(scope="module")
def gl_case():
    return manufacture("gl3", [0.5, 0.1, 0.025], ginzburg_landau(), T=T)


@pytest.fixture(scope="module")
def cube_case():
    return manufacture("cube-root3", [2.0, 0.2, 0.05], cube_root(), T=T)


def _timed_mise(case, method):
    with Timer() as tm:
        rep = run_mise(case, method, DELTAS, [T / 2], TRIALS, SEED, SETTINGS)
    return rep, tm.elapsed


@pytest.fixture(scope="module")
def truncation_run(gl_case):
    return _timed_mise(gl_case, "truncation")


@pytest.fixture(scope="module")
def qr_clipped_run(gl_case):
    return _timed_mise(gl_case, "qr-clipped")


@pytest.fixture(scope="module")
def qr_structural_run(cube_case):
    return _timed_mise(cube_case, "qr-structural")


def test_criterion_01_operator_bounds(record_criterion):
    rng = np.random.default_rng(SEED)
    basis = build_basis(DomainSpec(1, n=64), 24)
    bad = 0
    with Timer() as tm:
        for _ in range(1000):
            Ti, M = rng.uniform(0.2, 2.0, 2)
            beta = rng.uniform(1e-4, 1.0) * beta_admissibility_bound(1.0, M, Ti)
            f = SpectralField(rng.standard_normal(24) * np.exp(-rng.uniform(0, 2) * basis.eigenvalues), basis)
            q_ok = norm(apply_Q_beta(f, beta, M, Ti)) <= beta / Ti * norm(f, Gevrey(M * Ti)) * (1 + 1e-12)
            p_ok = norm(apply_P_beta(f, beta, M, Ti)) <= math.log(1 / beta) / Ti * norm(f) * (1 + 1e-12)
            bad += not (q_ok and p_ok)
    ok = bad == 0 and tm.elapsed < 5
    assert record_criterion(1, ok, f"{bad} violations in 1000 fields, {tm.elapsed:.2f} s")


def test_criterion_02_roundtrip(record_criterion):
    rng = np.random.default_rng(SEED)
    worst_rt = worst_pars = 0.0
    with Timer() as tm:
        for d, n, J in ((1, 128, 63), (2, 32, 100)):
            basis = build_basis(DomainSpec(d, n=n), J)
            for _ in range(100):
                f = SpectralField(rng.standard_normal(J), basis)
                g = synthesize(f)
                worst_rt = max(worst_rt, float(np.max(np.abs(analyze(g, basis).coeffs - f.coeffs))))
                worst_pars = max(worst_pars, abs(g.l2_norm() - norm(f)) / norm(f))
    ok = worst_rt <= 1e-12 and worst_pars <= 1e-10 and tm.elapsed < 5
    assert record_criterion(2, ok, f"roundtrip {worst_rt:.1e}, Parseval {worst_pars:.1e}, {tm.elapsed:.2f} s")


def test_criterion_03_noisy_data(record_criterion):
    delta, N, gamma, trials = 0.01, 16, 1.0, 1000
    with Timer() as tm:
        basis = build_basis(DomainSpec(1, n=64), N)
        g = SpectralField.from_modes(basis, {1: 1.0, 3: 0.5})
        errs = np.array([np.sum((observe_final(g, NoiseConfig(delta, N, SEED, i)).coeffs - g.coeffs) ** 2)
                         for i in range(trials)])
    mean, se = errs.mean(), errs.std(ddof=1) / math.sqrt(trials)
    bound = mise_bound(delta, N, gamma, norm(g, Sobolev(2 * gamma)), float(basis.eigenvalues[N - 1]))
    ok = abs(mean - delta ** 2 * N) <= 3 * se and mean <= bound and tm.elapsed < 10
    assert record_criterion(3, ok, f"mean {mean:.4e} vs {delta ** 2 * N:.4e} (3se {3 * se:.1e}), "
                                   f"bound {bound:.4e}, {tm.elapsed:.2f} s")


def test_criterion_04_illposedness(record_criterion):
    deltas = [1e-1, 1e-2, 1e-3]
    with Timer() as tm:
        rows = illposed_demo(T, deltas, 1000, SEED)
    data_ok = all(abs(r.data_mean - r.data_pred_raw) <= 3 * r.data_stderr for r in rows)
    energy_ok = all(r.energy_mean + 2 * r.energy_stderr >= r.energy_target for r in rows)
    data = [r.data_mean for r in rows]
    energy = [r.energy_mean for r in rows]
    data_down = all(b < a for a, b in zip(data, data[1:]))
    energy_up = all(b > a for a, b in zip(energy, energy[1:]))
    ok = data_ok and energy_ok and data_down and energy_up and tm.elapsed < 120
    parts = [f"d={r.delta:g}: N={r.N} E|G|^2={r.data_mean:.3e} (raw-count ref {r.data_pred_raw:.3e}, "
             f"integer-count ref {r.data_pred:.3e}), E sup|V|^2={r.energy_mean:.3e} "
             f"(ref (2/5)/d={r.energy_target:.3g}, (2/5)d^2e^(2TN^2)={r.energy_bound:.3e})" for r in rows]
    detail = (f"data match {data_ok}, energy >= ref {energy_ok}, data trend down {data_down}, "
              f"energy trend up {energy_up}, {tm.elapsed:.1f} s; " + "; ".join(parts))
    assert record_criterion(4, ok, detail)


def test_criterion_05_contraction(record_criterion):
    rng = np.random.default_rng(SEED)
    basis = build_basis(DomainSpec(1, n=64), 8)
    cfg = MildSolveConfig(nodes=201)
    worst = 0.0
    with Timer() as tm:
        for _ in range(20):
            G = 0.1 * rng.standard_normal(4)
            start = rng.standard_normal((cfg.nodes, 4))
            res = solve_mild(G, basis, nonlocal_F0(T), 16.0, T, cfg, initial_iterate=start)
            worst = max(worst, res.contraction)
    ok = worst <= 0.55 and tm.elapsed < 30
    assert record_criterion(5, ok, f"largest successive-iterate ratio {worst:.4f}, {tm.elapsed:.2f} s")


def _heat_error(n, K):
    b = build_basis(DomainSpec(1, n=n), 1)
    tr = solve_forward(EvolutionProblem(b, SpectralField.unit(b, 1), T, K, scheme="fd"))
    return abs(tr.final.coeffs[0] - math.exp(-T))


def test_criterion_06_forward_order(record_criterion):
    with Timer() as tm:
        e_dt = [_heat_error(255, K) for K in (50, 100, 200, 400)]
        e_h = [_heat_error(n, 20000) for n in (7, 15, 31)]
    r_dt = [float(a / b) for a, b in zip(e_dt, e_dt[1:])]
    r_h = [float(a / b) for a, b in zip(e_h, e_h[1:])]
    ok = min(r_dt) >= 1.8 and min(r_h) >= 3.5 and tm.elapsed < 30
    assert record_criterion(6, ok, f"dt-halving ratios {[round(r, 3) for r in r_dt]}, "
                                   f"h-halving ratios {[round(r, 3) for r in r_h]}, {tm.elapsed:.2f} s")


def _decreasing_with_slack(rows):
    return all(b.mise_mean < a.mise_mean + 2 * math.hypot(a.mise_stderr, b.mise_stderr)
               for a, b in zip(rows, rows[1:]))


def test_criterion_07_truncation(truncation_run, record_criterion):
    rep, elapsed = truncation_run
    rows = sorted(rep.select("truncation", T / 2), key=lambda r: -r.delta)
    dec = _decreasing_with_slack(rows)
    strict = all(b.mise_mean < a.mise_mean for a, b in zip(rows, rows[1:]))
    env = all(r.mise_mean <= 10 * r.envelope for r in rows)
    ok = dec and env and not rep.flagged() and elapsed < 600
    table = ", ".join(f"d={r.delta:g}: {r.mise_mean:.3e}+-{r.mise_stderr:.1e} (env {r.envelope:.2e})"
                      for r in rows)
    assert record_criterion(7, ok, f"decreasing {dec} (point estimates strict {strict}), "
                                   f"under 10x envelope {env}, {elapsed:.1f} s; {table}")


def _slope_check(rep, method):
    rows = sorted(rep.select(method, T / 2), key=lambda r: -r.delta)
    p = rep.params
    m, c = SETTINGS.qr_m, SETTINGS.qr_c
    predicted = 2 * m * c * (0.5 - c) * (T / 2) / T
    slope = rows[0].slope
    in_window = 0.5 * predicted <= slope <= 1.5 * predicted
    env = all(r.mise_mean <= 10 * r.envelope for r in rows)
    table = ", ".join(f"d={r.delta:g}: {r.mise_mean:.4e} (env {r.envelope:.2e}, N={p[(method, r.delta)]['N']})"
                      for r in rows)
    return in_window and env and not rep.flagged(), (
        f"{method} slope {slope:.4f} vs predicted {predicted:.4f} (ratio {slope / predicted:.2f}), "
        f"under 10x envelope {env}; {table}")


def test_criterion_08_qr(qr_clipped_run, qr_structural_run, record_criterion):
    ok_c, det_c = _slope_check(qr_clipped_run[0], "qr-clipped")
    ok_s, det_s = _slope_check(qr_structural_run[0], "qr-structural")
    elapsed = qr_clipped_run[1] + qr_structural_run[1]
    ok = ok_c and ok_s and elapsed < 900
    assert record_criterion(8, ok, f"{det_c} | {det_s} | {elapsed:.1f} s")


def test_criterion_09_case_comparison(gl_case, qr_clipped_run, qr_structural_run, record_criterion):
    from backpar.experiments import _Method
    with Timer() as tm:
        params = [_Method(gl_case, "qr-clipped", d, SETTINGS).qp for d in DELTAS]
        cmp = compare_case2_case3(params, 0.0)
    ok = cmp.monotone and tm.elapsed < 1
    measured = []
    for d in DELTAS:
        mc = qr_clipped_run[0].select("qr-clipped", T / 2)
        ms = qr_structural_run[0].select("qr-structural", T / 2)
        a = next(r for r in mc if r.delta == d)
        b = next(r for r in ms if r.delta == d)
        measured.append(f"d={d:g}: clipped GL {a.mise_mean:.3e}, monotone cube root {b.mise_mean:.3e}")
    ratios = ", ".join(f"d={d:g}: K_R={k:.3f} ratio {r:.3e}" for d, k, r in zip(cmp.deltas, cmp.K_R, cmp.ratios))
    assert record_criterion(9, ok, f"monotone {cmp.monotone}; {ratios}; {tm.elapsed * 1e3:.1f} ms; "
                                   f"measured: " + "; ".join(measured))


def test_criterion_10_determinism(gl_case, truncation_run, tmp_path, record_criterion):
    first, _ = truncation_run
    again, _ = _timed_mise(gl_case, "truncation")
    threaded = run_mise(gl_case, "truncation", DELTAS, [T / 2], TRIALS, SEED, SETTINGS, threads=4)
    blobs = []
    for name, rep in (("a", first), ("b", again), ("c", threaded)):
        path, _ = emit_report(rep, tmp_path / f"{name}.csv")
        blobs.append(path.read_bytes())
    ok = blobs[0] == blobs[1] == blobs[2]
    assert record_criterion(10, ok, f"criterion 7 rerun bit-identical {blobs[0] == blobs[1]}, "
                                    f"4-thread rerun bit-identical {blobs[0] == blobs[2]}, {len(blobs[0])} bytes")
