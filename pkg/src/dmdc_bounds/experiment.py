"""End-to-end runs on the diffusion test bed: identify, probe, fit, predict, certify."""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .bounds import (BoundConstants, ErrorTrajectory, TruthModel, actual_error_trajectory, asymptotic_bound,
                     bound_trajectory, estimate_constants, spectral_norm, write_certificate, write_constants)
from .diffusion import (DiffusionConfig, build_system, extract_truth, identification_data, identify_truth)
from .dmdc import RANK_RTOL, estimate_full_order, fit_dmdc, predict, reconstruct, save_model
from .errors import DmdcError, DominanceViolationError, InvalidArgumentError
from .snapshots import InputSequence, SnapshotSet, generate_prbs, generate_sinusoid, write_matrix_csv

PROBE_STARTS = ("zero", "prbs", "random")
TRUTH_SOURCES = ("identified", "analytic")
# Fields that do not change the numbers a run produces; left out of the run id.
_NON_SEMANTIC = ("output_dir", "workers")


@dataclass(frozen=True)
class ExperimentConfig:
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig.desk)
    truth_source: str = "identified"
    prbs_amplitude: float = 1.0
    prbs_hold: int = 1
    prbs_burst_len: Optional[int] = 2
    id_columns: Optional[int] = None          # default n + q + 50
    probe_amplitude: float = 2.0
    probe_freq_hz: float = 0.02
    probe_start: str = "prbs"
    warmup: int = 500
    m_fit: int = 250
    s: int = 14
    r: int = 11
    horizon: int = 300
    rho_margin: float = 0.5
    K_est: Optional[int] = None               # default horizon
    rank_rtol: float = RANK_RTOL
    sweep_m: tuple = ()
    sweep_s: tuple = ()
    sweep_r: tuple = ()
    couple_r: bool = True                     # r = s - 3 when sweeping s
    field_times: tuple = ()                   # offsets from m; default (0, horizon // 2, horizon)
    seed: int = 0
    workers: int = 1
    output_dir: str = "runs"

    def __post_init__(self):
        if isinstance(self.diffusion, dict):
            object.__setattr__(self, "diffusion", DiffusionConfig.from_dict(self.diffusion))
        for name in ("sweep_m", "sweep_s", "sweep_r", "field_times"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.truth_source not in TRUTH_SOURCES:
            raise InvalidArgumentError(f"truth_source must be one of {TRUTH_SOURCES}")
        if self.probe_start not in PROBE_STARTS:
            raise InvalidArgumentError(f"probe_start must be one of {PROBE_STARTS}")
        if not (self.prbs_amplitude > 0 and self.probe_amplitude > 0 and self.probe_freq_hz > 0):
            raise InvalidArgumentError("signal amplitudes and frequency must be positive")
        if self.prbs_hold < 1 or (self.prbs_burst_len is not None and self.prbs_burst_len < 1):
            raise InvalidArgumentError("prbs_hold and prbs_burst_len must be >= 1")
        if self.m_fit < 2 or self.horizon < 1 or self.warmup < 0:
            raise InvalidArgumentError("need m_fit >= 2, horizon >= 1 and warmup >= 0")
        if self.K_est is not None and self.K_est < 1:
            raise InvalidArgumentError("K_est must be >= 1")
        if not 0 < self.rho_margin < 1:
            raise InvalidArgumentError("rho_margin must lie in (0, 1)")
        if not self.rank_rtol > 0:
            raise InvalidArgumentError("rank_rtol must be positive")
        if self.workers < 1:
            raise InvalidArgumentError("workers must be >= 1")
        if self.couple_r and self.sweep_s and self.sweep_r:
            raise InvalidArgumentError("r is derived as s - 3 when sweeping s; do not also sweep r")
        rs = self.sweep_r or (self.r,)
        if not self.sweep_s and not all(1 <= r <= self.s for r in rs):
            raise InvalidArgumentError(f"need 1 <= r <= s, got s={self.s}, r={list(rs)}")
        if any(v < 2 for v in self.sweep_m) or any(v < 1 for v in self.sweep_s + self.sweep_r):
            raise InvalidArgumentError("sweep values out of range")
        if any(t < 0 or t > self.horizon for t in self.field_times):
            raise InvalidArgumentError(f"field_times must lie in [0, {self.horizon}]")

    @classmethod
    def paper_scale(cls, **overrides) -> "ExperimentConfig":
        base = dict(diffusion=DiffusionConfig.paper(), m_fit=600, s=26, r=17, horizon=600)
        base.update(overrides)
        return cls(**base)

    @property
    def k_est(self) -> int:
        return self.horizon if self.K_est is None else self.K_est

    @property
    def u_bar(self) -> float:
        # every channel carries the same sinusoid, so ||u_k|| <= amplitude * sqrt(q)
        return self.probe_amplitude * float(np.sqrt(self.diffusion.q))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["diffusion"] = self.diffusion.to_dict()
        for name in ("sweep_m", "sweep_s", "sweep_r", "field_times"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError(f"unknown experiment config keys: {sorted(unknown)}")
        d = dict(d)
        if "diffusion" in d and isinstance(d["diffusion"], dict):
            d["diffusion"] = DiffusionConfig.from_dict(d["diffusion"])
        return cls(**d)

    def run_id(self) -> str:
        d = self.to_dict()
        for key in _NON_SEMANTIC:
            d.pop(key)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def load_experiment_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            return ExperimentConfig.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise InvalidArgumentError(f"{path}: not valid JSON: {exc}") from exc


def save_experiment_config(config: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class ExperimentReport:
    run_dir: Path
    run_id: str
    n: int
    q: int
    s: int
    r: int
    m: int
    constants: BoundConstants
    bound: ErrorTrajectory
    actual: ErrorTrajectory
    asymptote: float
    truth_discrepancy: float
    field_summary: list
    dominance_ok: bool

    @property
    def terminal_actual(self) -> float:
        return float(self.actual.values[-1])

    @property
    def terminal_bound(self) -> float:
        return float(self.bound.values[-1])

    @property
    def min_margin(self) -> float:
        return float(np.min(self.bound.values - self.actual.values))


class StageError(DmdcError):
    """Wraps a module error with the pipeline stage it came from."""

    def __init__(self, stage: str, error: Exception):
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")
        self.stage = stage
        self.error = error


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, DmdcError) and not isinstance(exc, (StageError, DominanceViolationError)):
            raise StageError(self.name, exc) from exc
        return False


@dataclass(frozen=True)
class ProbeData:
    states: np.ndarray        # n x (m_fit + horizon), column j is x_{j+1}
    inputs: InputSequence     # column j is u_{j+1}


def build_truth(config: ExperimentConfig):
    """Returns ``(system, truth, analytic, discrepancy)``.

    ``discrepancy`` is ``||A_id - A|| / ||A||`` between the identified and the
    analytic state matrices, or 0 when the analytic model is used directly.
    """
    system = build_system(config.diffusion)
    analytic = extract_truth(system)
    if config.truth_source == "analytic":
        return system, analytic, analytic, 0.0
    cols = config.id_columns or system.n + system.q + 50
    data = identification_data(system, cols, config.prbs_amplitude, config.prbs_hold, config.seed,
                               config.prbs_burst_len)
    truth = identify_truth(data, config.rank_rtol)
    disc = spectral_norm(truth.A - analytic.A) / spectral_norm(analytic.A)
    return system, truth, analytic, disc


def probe_start_state(config: ExperimentConfig, truth: TruthModel) -> np.ndarray:
    n = truth.n
    if config.probe_start == "zero":
        return np.zeros(n)
    if config.probe_start == "random":
        return np.random.default_rng([config.seed, 2]).standard_normal(n)
    if config.warmup == 0:
        return np.zeros(n)
    drive = generate_prbs(truth.q, config.warmup, config.prbs_amplitude, config.prbs_hold,
                          [config.seed, 3], config.diffusion.dt)
    return truth.simulate(np.zeros(n), drive, config.warmup)[:, -1]


def probe_data(config: ExperimentConfig, truth: TruthModel, length: int) -> ProbeData:
    inputs = generate_sinusoid(truth.q, length, config.probe_amplitude, config.probe_freq_hz, config.diffusion.dt)
    states = truth.simulate(probe_start_state(config, truth), inputs, length - 1)
    return ProbeData(states, inputs)


def compare_fields(truth_traj, reconstructed_traj, times, out_dir=None, shape=None, start_index: int = 0):
    """Per-time true, predicted and absolute-difference grids.

    ``times`` are column indices into the trajectories. Returns one dict per
    time with ``k``, ``max_abs_diff`` and ``mean_abs_diff``; when ``out_dir``
    is given the grids and a ``summary.csv`` are written there.
    """
    T = np.asarray(truth_traj, dtype=float)
    P = np.asarray(reconstructed_traj, dtype=float)
    if T.shape != P.shape or T.ndim != 2:
        raise InvalidArgumentError(f"trajectory shapes differ: {T.shape} vs {P.shape}")
    if shape is not None and shape[0] * shape[1] != T.shape[0]:
        raise InvalidArgumentError(f"grid shape {shape} does not hold {T.shape[0]} values")
    grid = shape if shape is not None else (T.shape[0], 1)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rows = []
    for t in times:
        if not 0 <= t < T.shape[1]:
            raise InvalidArgumentError(f"time index {t} outside [0, {T.shape[1]})")
        diff = np.abs(T[:, t] - P[:, t])
        k = start_index + t
        rows.append({"k": k, "max_abs_diff": float(diff.max()), "mean_abs_diff": float(diff.mean())})
        if out is not None:
            write_matrix_csv(out / f"true_k{k}.csv", T[:, t].reshape(grid))
            write_matrix_csv(out / f"pred_k{k}.csv", P[:, t].reshape(grid))
            write_matrix_csv(out / f"diff_k{k}.csv", diff.reshape(grid))
    if out is not None:
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "max_abs_diff", "mean_abs_diff"])
            for row in rows:
                w.writerow([row["k"], "%.17g" % row["max_abs_diff"], "%.17g" % row["mean_abs_diff"]])
    return rows


def dominance_tolerance(states) -> float:
    """Roundoff allowance for the report-time check, scaled by the largest state norm."""
    scale = float(np.max(np.linalg.norm(np.asarray(states), axis=0))) if np.size(states) else 0.0
    return 1e-12 * max(1.0, scale)


def run_single(config: ExperimentConfig, write: bool = True) -> ExperimentReport:
    """One fit/predict/certify cycle; raises :class:`DominanceViolationError` after writing if the bound fails."""
    run_id = config.run_id()
    K = config.horizon
    m = config.m_fit
    with _Stage("truth"):
        system, truth, _, disc = build_truth(config)
    with _Stage("probe"):
        probe = probe_data(config, truth, m + K)
    with _Stage("fit"):
        # samples x_1..x_m; time index of column j is j + 1
        data = SnapshotSet(probe.states[:, :m - 1], probe.states[:, 1:m], probe.inputs.values[:, :m - 1])
        model = fit_dmdc(data, config.s, config.r, config.rank_rtol)
        A_hat, B_hat = estimate_full_order(data, config.s, config.rank_rtol, model.svd_omega)
    future = probe.inputs.window(m - 1, K)      # u_m .. u_{m+K-1}
    x_m = probe.states[:, m - 1]
    with _Stage("predict"):
        traj = predict(model, x_m, future, K, start_index=m)
        recon = reconstruct(model, traj)
        actual = actual_error_trajectory(truth, model, x_m, future, K, m=m)
    with _Stage("bound"):
        consts = estimate_constants(truth, model, A_hat, B_hat, config.k_est, config.rho_margin, config.u_bar)
        B_applied = np.linalg.norm(truth.B @ future.values, axis=0)
        e_m = float(actual.values[0])
        bound = bound_trajectory(consts, e_m, float(np.linalg.norm(x_m)), future, B_applied, m=m, K=K)
        asym = asymptotic_bound(consts)
    true_future = probe.states[:, m - 1:m + K]
    times = config.field_times or (0, K // 2, K)
    fields = compare_fields(true_future, recon, times, shape=config.diffusion.inner_shape, start_index=m)
    tol = dominance_tolerance(true_future)
    ok = bool(np.all(bound.values + tol >= actual.values))
    run_dir = Path(config.output_dir) / run_id
    report = ExperimentReport(run_dir, run_id, truth.n, truth.q, config.s, config.r, m, consts, bound, actual,
                              asym, disc, fields, ok)
    if write:
        _write_report(config, report, model, true_future, recon, times)
    if not ok:
        worst = int(np.argmin(bound.values - actual.values))
        raise DominanceViolationError(
            f"bound below actual error at k={m + worst}: {bound.values[worst]:.6e} < {actual.values[worst]:.6e}")
    return report


def _write_report(config, report: ExperimentReport, model, true_future, recon, times) -> None:
    d = report.run_dir
    d.mkdir(parents=True, exist_ok=True)
    save_experiment_config(config, d / "config.json")
    write_constants(d / "constants.csv", report.constants)
    write_certificate(d / "trajectory.csv", report.bound, report.actual)
    compare_fields(true_future, recon, times, d / "fields", config.diffusion.inner_shape, report.m)
    save_model(model, d / "model")
    with open(d / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        for key, value in _summary_rows(report):
            w.writerow([key, value])


def _summary_rows(report: ExperimentReport):
    return [
        ("run_id", report.run_id), ("n", report.n), ("q", report.q), ("s", report.s), ("r", report.r),
        ("m", report.m), ("terminal_actual", "%.17g" % report.terminal_actual),
        ("terminal_bound", "%.17g" % report.terminal_bound), ("asymptotic_bound", "%.17g" % report.asymptote),
        ("truth_discrepancy", "%.17g" % report.truth_discrepancy), ("dominance_ok", int(report.dominance_ok)),
    ]


def sweep_points(config: ExperimentConfig):
    """Expand the sweep lists into per-point configs (sweep fields cleared)."""
    ms = config.sweep_m or (config.m_fit,)
    ss = config.sweep_s or (config.s,)
    points = []
    for m, s in itertools.product(ms, ss):
        if config.sweep_s and config.couple_r:
            rs = (s - 3,)
        else:
            rs = config.sweep_r or (config.r,)
        for r in rs:
            points.append(replace(config, m_fit=m, s=s, r=r, sweep_m=(), sweep_s=(), sweep_r=()))
    return points


@dataclass(frozen=True)
class SweepResult:
    sweep_dir: Path
    rows: list          # one dict per successful point
    failures: list      # one dict per failed point

    def table(self, key: str = "terminal_actual") -> dict:
        return {(row["m"], row["s"], row["r"]): row[key] for row in self.rows}


def _run_point(point: ExperimentConfig):
    try:
        rep = run_single(point)
    except DominanceViolationError as exc:
        return {"m": point.m_fit, "s": point.s, "r": point.r, "run_id": point.run_id(),
                "error": "DominanceViolationError", "message": str(exc)}
    except DmdcError as exc:
        return {"m": point.m_fit, "s": point.s, "r": point.r, "run_id": point.run_id(),
                "error": type(getattr(exc, "error", exc)).__name__, "message": str(exc)}
    return {"m": rep.m, "s": rep.s, "r": rep.r, "run_id": rep.run_id,
            "terminal_actual": rep.terminal_actual, "terminal_bound": rep.terminal_bound,
            "asymptotic_bound": rep.asymptote, "min_margin": rep.min_margin,
            "M": rep.constants.M, "M_sm": rep.constants.M_sm, "M_rm": rep.constants.M_rm,
            "eps_s_B": rep.constants.eps_s_B, "eps_r_B": rep.constants.eps_r_B}


_SWEEP_COLUMNS = ["m", "s", "r", "run_id", "terminal_actual", "terminal_bound", "asymptotic_bound", "min_margin",
                  "M", "M_sm", "M_rm", "eps_s_B", "eps_r_B"]


def run_sweep(config: ExperimentConfig):
    """Run every grid point; returns a :class:`SweepResult` (or the single report when no list is set)."""
    if not (config.sweep_m or config.sweep_s or config.sweep_r):
        return run_single(config)
    points = sweep_points(config)
    if config.workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_point, points))
    else:
        results = [_run_point(p) for p in points]
    rows = [r for r in results if "error" not in r]
    failures = [r for r in results if "error" in r]
    sweep_dir = Path(config.output_dir) / f"sweep-{config.run_id()}"
    sweep_dir.mkdir(parents=True, exist_ok=True)
    save_experiment_config(config, sweep_dir / "config.json")
    with open(sweep_dir / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_SWEEP_COLUMNS)
        for row in rows:
            w.writerow([row[c] if not isinstance(row[c], float) else "%.17g" % row[c] for c in _SWEEP_COLUMNS])
    with open(sweep_dir / "failures.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "s", "r", "run_id", "error", "message"])
        for row in failures:
            w.writerow([row[c] for c in ("m", "s", "r", "run_id", "error", "message")])
    return SweepResult(sweep_dir, rows, failures)
