"""Acceptance criteria 1-8 at desk scale (21x21 grid, 15x15 window, n=225, q=20).

Each test prints one PASS/FAIL line; the lines are repeated in the pytest
terminal summary. Run standalone with ``python3 tests/test_acceptance.py``.
"""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from dmdc_bounds import (DiffusionConfig, FieldState, build_system, estimate_full_order, extract_truth,
                         fit_dmdc, generate_prbs, identify_truth, spectral_norm, step, theta_projection_error,
                         truncated_svd, RankDeficientError)
from dmdc_bounds.bounds import (actual_error_trajectory, asymptotic_bound, bound_trajectory, estimate_constants,
                                read_certificate)
from dmdc_bounds.diffusion import identification_data, inner_oracle
from dmdc_bounds.experiment import ExperimentConfig, build_truth, probe_data, run_single, run_sweep
from dmdc_bounds.snapshots import SnapshotSet, read_matrix_csv

from conftest import ACCEPTANCE_LINES

GRID_M = (150, 250, 400)
GRID_S = (8, 14, 20)
HORIZON = 300
# s = 20 sits at sigma_20 / sigma_1 ~ 1e-14 on sinusoid-probe data; the default
# relative rank tolerance (1e-12) rejects it, so the sweep lowers it.
SWEEP_RTOL = 1e-18
SCAN_RTOL = 1e-9


def report(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def sweep_config(output_dir, **kw):
    base = dict(horizon=HORIZON, K_est=HORIZON, rank_rtol=SWEEP_RTOL, output_dir=str(output_dir))
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def desk():
    system = build_system(DiffusionConfig.desk())
    return system, extract_truth(system)


@pytest.fixture(scope="module")
def prbs_data(desk):
    system, _ = desk
    return identification_data(system, system.n + system.q + 50)


@pytest.fixture(scope="module")
def grid(tmp_path_factory):
    out = tmp_path_factory.mktemp("grid")
    t0 = time.perf_counter()
    res = run_sweep(sweep_config(out, sweep_m=GRID_M, sweep_s=GRID_S))
    return res, time.perf_counter() - t0


def test_criterion_1_projection_identity(desk, prbs_data):
    t0 = time.perf_counter()
    _, truth = desk
    theta_norm = spectral_norm(truth.theta)
    gaps = {}
    for s in (5, 12, 20):
        f = truncated_svd(prbs_data.omega, s)
        A_hat, B_hat = estimate_full_order(prbs_data, s, svd_omega=f)
        lhs = spectral_norm(np.hstack([A_hat, B_hat]) - truth.theta)
        gaps[s] = abs(lhs - theta_projection_error(truth, f).eps_s) / theta_norm
    elapsed = time.perf_counter() - t0
    ok = all(g <= 1e-9 for g in gaps.values()) and elapsed < 30
    detail = ", ".join(f"s={s}: {g:.1e}" for s, g in gaps.items())
    assert report(1, ok, f"relative gap {detail} (<= 1e-9), {elapsed:.1f} s (< 30 s)")


def test_criterion_2_exact_recovery(desk, prbs_data):
    t0 = time.perf_counter()
    system, truth = desk
    d = prbs_data
    ranks = []
    for M in (d.omega, d.Y):
        try:
            truncated_svd(M, min(M.shape))
            ranks.append(min(M.shape))
        except RankDeficientError as exc:
            ranks.append(exc.max_order)
    s, r = ranks
    model = fit_dmdc(d, s, r)
    A_hat, B_hat = estimate_full_order(d, s, svd_omega=model.svd_omega)
    ea = spectral_norm(A_hat - truth.A) / spectral_norm(truth.A)
    eb = spectral_norm(B_hat - truth.B) / spectral_norm(truth.B)
    x_m = d.Y[:, -1]
    actual = actual_error_trajectory(truth, model, x_m, generate_prbs(system.q, 200, seed=11), 200, m=d.m)
    rel = float(np.max(actual.values)) / np.linalg.norm(x_m)
    elapsed = time.perf_counter() - t0
    ok = (s, r) == (245, 225) and ea <= 1e-7 and eb <= 1e-7 and rel <= 1e-6 and elapsed < 120
    assert report(2, ok, f"s={s}, r={r}: ||A_hat-A||/||A||={ea:.1e}, ||B_hat-B||/||B||={eb:.1e} (<= 1e-7), "
                         f"max prediction error / ||x_m|| = {rel:.1e} over 200 steps (<= 1e-6), {elapsed:.1f} s")


def test_criterion_3_dominance(grid):
    res, elapsed = grid
    violations, worst = 0, np.inf
    for row in res.rows:
        cert = read_certificate(res.sweep_dir.parent / row["run_id"] / "trajectory.csv")
        future = cert["k"] > row["m"]
        margin = cert["bound"][future] - cert["actual"][future]
        violations += int(np.sum(margin < 0))
        worst = min(worst, float(np.min(margin)))
    ok = not res.failures and len(res.rows) == 9 and violations == 0 and elapsed < 300
    assert report(3, ok, f"{len(res.rows)}/9 grid points, {len(res.failures)} failed, {violations} violations "
                         f"over m < k <= m+{HORIZON}, smallest margin {worst:.3e}, {elapsed:.1f} s (< 300 s)")


def test_criterion_4_corollary_tail(tmp_path):
    cfg = sweep_config(tmp_path, m_fit=250, s=8, r=5, horizon=1000, K_est=1000)
    _, truth, _, _ = build_truth(cfg)
    m, K = cfg.m_fit, cfg.horizon
    probe = probe_data(cfg, truth, m + K)
    data = SnapshotSet(probe.states[:, :m - 1], probe.states[:, 1:m], probe.inputs.values[:, :m - 1])
    model = fit_dmdc(data, cfg.s, cfg.r, cfg.rank_rtol)
    A_hat, B_hat = estimate_full_order(data, cfg.s, cfg.rank_rtol, model.svd_omega)
    consts = estimate_constants(truth, model, A_hat, B_hat, K, cfg.rho_margin, cfg.u_bar)
    future = probe.inputs.window(m - 1, K)
    x_m = probe.states[:, m - 1]
    e_m = float(np.linalg.norm(x_m - model.U_r @ (model.U_r.T @ x_m)))
    bound = bound_trajectory(consts, e_m, float(np.linalg.norm(x_m)), future, None, m=m, K=K)
    tail = float(np.max(bound.values[600:1001]))
    asym = asymptotic_bound(consts)
    u_max = float(np.max(np.linalg.norm(future.values, axis=0)))
    literal = asymptotic_bound(type(consts)(**{**consts.__dict__, "u_bar": 2.0}))
    ok = tail <= asym + 1e-6 and u_max <= cfg.u_bar
    assert report(4, ok, f"max bound over k in [m+600, m+1000] = {tail:.6f} <= asymptote {asym:.6f} "
                         f"(u_bar = 2*sqrt(q) = {cfg.u_bar:.4f}, max ||u_k|| = {u_max:.4f}; "
                         f"with u_bar = 2 the asymptote would be {literal:.6f})")


def _table(res, key):
    return {(row["m"], row["s"]): row[key] for row in res.rows}


def test_criterion_5_trends(grid, tmp_path):
    res, _ = grid
    bound = _table(res, "terminal_bound")
    actual = _table(res, "terminal_actual")
    # (a) m-sweep at the default orders s=14, r=11
    m_bounds = [bound[(m, 14)] for m in GRID_M]
    a_ok = all(b <= a for a, b in zip(m_bounds, m_bounds[1:]))
    # (b) r-sweep at s=20, m=250
    r_res = run_sweep(sweep_config(tmp_path, m_fit=250, s=20, sweep_r=(6, 11, 17)))
    r_act = [row["terminal_actual"] for row in sorted(r_res.rows, key=lambda row: row["r"])]
    b_ok = not r_res.failures and all(b <= 1.05 * a for a, b in zip(r_act, r_act[1:]))
    # (c) s-sweep with r = s - 3 at m=250
    s_act = [actual[(250, s)] for s in GRID_S]
    c_ok = all(b <= 1.05 * a for a, b in zip(s_act, s_act[1:]))
    # (d) terminal actual error surface over (s, m)
    argmin = min(actual, key=actual.get)
    d_ok = argmin == (max(GRID_M), max(GRID_S))
    others = {s: [bound[(m, s)] for m in GRID_M] for s in GRID_S if s != 14}
    ok = a_ok and b_ok and c_ok and d_ok
    fmt = lambda xs: "[" + ", ".join(f"{x:.6g}" for x in xs) + "]"
    assert report(5, ok, f"(a) terminal bound over m={list(GRID_M)} at s=14: {fmt(m_bounds)} {'ok' if a_ok else 'NOT'} "
                         f"non-increasing; (b) terminal actual over r=6,11,17: {fmt(r_act)}; "
                         f"(c) over s=8,14,20: {fmt(s_act)}; (d) surface minimum at (m, s)={argmin}. "
                         f"Other m-sweeps (not scored): " +
                         "; ".join(f"s={s}: {fmt(v)}" for s, v in others.items()))


def _scan(truth, model, A_hat, consts, K):
    """Direct check of the three envelope inequalities with independent matrix powers."""
    A = truth.A
    G = model.U_r @ model.A_tilde @ model.U_r.T
    worst = 0.0
    Gk = model.U_r @ model.U_r.T
    Ak = np.eye(truth.n)
    for k in range(K + 1):
        decay = consts["rho_bar"] ** k
        for value, const in ((np.linalg.norm(Gk, 2), consts["M"]),
                             (np.linalg.norm((A - A_hat) @ Ak, 2), consts["M_sm"]),
                             (np.linalg.norm((A_hat - G) @ Ak, 2), consts["M_rm"])):
            worst = max(worst, value / (const * decay) if const > 0 else (np.inf if value > 0 else 0.0))
        Gk = G @ Gk
        Ak = A @ Ak
    return worst


def test_criterion_6_envelopes(grid):
    res, _ = grid
    base = sweep_config(res.sweep_dir.parent)
    _, truth, _, _ = build_truth(base)
    rho = truth.rho
    Ak, truth_worst = np.eye(truth.n), 0.0
    for k in range(HORIZON + 1):
        truth_worst = max(truth_worst, np.linalg.norm(Ak, 2) / rho ** k)
        Ak = truth.A @ Ak
    probe = probe_data(base, truth, max(GRID_M))
    worst = 0.0
    for row in res.rows:
        run_dir = res.sweep_dir.parent / row["run_id"]
        consts = {}
        for line in (run_dir / "constants.csv").read_text().splitlines()[1:]:
            key, value = line.split(",")
            if key in ("rho_bar", "M", "M_sm", "M_rm"):
                consts[key] = float(value)
        m = row["m"]
        data = SnapshotSet(probe.states[:, :m - 1], probe.states[:, 1:m], probe.inputs.values[:, :m - 1])
        model = fit_dmdc(data, row["s"], row["r"], SWEEP_RTOL)
        A_hat, _ = estimate_full_order(data, row["s"], SWEEP_RTOL, model.svd_omega)
        assert np.array_equal(model.A_tilde, read_matrix_csv(run_dir / "model" / "A_tilde.csv"))
        worst = max(worst, _scan(truth, model, A_hat, consts, HORIZON))
    ok = truth_worst <= 1 + SCAN_RTOL and worst <= 1 + SCAN_RTOL and len(res.rows) == 9
    assert report(6, ok, f"max ||A^k|| / rho(A)^k = {truth_worst:.12f}; max envelope ratio over 9 models "
                         f"and k <= {HORIZON} = {worst:.12f} (<= 1 + {SCAN_RTOL:g})")


def test_criterion_7_pde_sanity(desk, prbs_data):
    system, truth = desk
    hot = build_system(DiffusionConfig(xi_a=2.0, xi_b=2.0, initial_value=2.0))
    s0 = hot.initial_state()
    steady = float(np.max(np.abs(step(hot, s0, np.zeros(hot.q)).values - s0.values)))
    x = system.field_from_inner(np.random.default_rng(0).standard_normal(system.n))
    ratio = np.linalg.norm(step(system, x, np.zeros(system.q)).values) / np.linalg.norm(x.values)
    g = np.zeros(system.shape)
    g[3:10, 5:16] = np.random.default_rng(1).random((7, 11))
    g = g + np.rot90(g) + np.rot90(g, 2) + np.rot90(g, 3)
    g[[0, -1], :] = 0
    g[:, [0, -1]] = 0
    out = step(system, FieldState(g.ravel(), system.shape), 1.3 * np.ones(system.q)).grid
    sym = float(np.max(np.abs(out - np.rot90(out))))
    ident = identify_truth(prbs_data)
    agree = max(spectral_norm(ident.A - truth.A) / spectral_norm(truth.A),
                spectral_norm(ident.B - truth.B) / spectral_norm(truth.B))
    ok = steady <= 1e-12 and ratio < 1 and sym <= 1e-9 and agree <= 1e-6
    assert report(7, ok, f"steady-state change {steady:.1e}, contraction ratio {ratio:.4f} (< 1), "
                         f"rotation asymmetry {sym:.1e} (<= 1e-9), identified vs analytic {agree:.1e} (<= 1e-6)")


def _snapshot(directory):
    return {p.relative_to(directory): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_criterion_8_determinism(tmp_path):
    cmd = [sys.executable, "-m", "dmdc_bounds", "experiment", "--output-dir", str(tmp_path), "-m", "200",
           "-s", "12", "-r", "8", "--horizon", "100"]
    snaps = []
    for _ in range(2):
        subprocess.run(cmd, check=True, capture_output=True)
        (run_dir,) = [p for p in tmp_path.iterdir() if p.is_dir()]
        snaps.append(_snapshot(run_dir))
    same = snaps[0] == snaps[1]
    ok = same and len(snaps[0]) > 10
    assert report(8, ok, f"two separate `experiment` processes wrote {len(snaps[0])} files, "
                         f"{'all byte-identical' if same else 'DIFFERENT'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
