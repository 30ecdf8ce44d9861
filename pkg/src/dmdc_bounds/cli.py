"""Command-line entry point: ``dmdc-bounds <subcommand> ...``.

Exit codes: 0 success, 2 invalid configuration or input files, 3 numerical
failure, 4 bound below the actual error in an emitted report.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import diffusion as dif
from .bounds import (TruthModel, actual_error_trajectory, asymptotic_bound, bound_trajectory, estimate_constants,
                     write_certificate, write_constants)
from .dmdc import RANK_RTOL, estimate_full_order, fit_dmdc, load_model, predict, reconstruct, save_model
from .errors import CsvParseError, DmdcError, DominanceViolationError, InvalidArgumentError
from .experiment import (PROBE_STARTS, TRUTH_SOURCES, ExperimentConfig, SweepResult, dominance_tolerance,
                         load_experiment_config, run_single, run_sweep)
from .snapshots import (InputSequence, SnapshotSet, generate_prbs, generate_sinusoid, read_matrix_csv,
                        write_matrix_csv)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_DOMINANCE = 0, 2, 3, 4

# flag dest -> ExperimentConfig field
_EXPERIMENT_FLAGS = {
    "truth_source": "truth_source", "prbs_amplitude": "prbs_amplitude", "prbs_hold": "prbs_hold",
    "probe_amplitude": "probe_amplitude", "probe_freq": "probe_freq_hz", "probe_start": "probe_start",
    "warmup": "warmup", "m_fit": "m_fit", "s": "s", "r": "r", "horizon": "horizon",
    "rho_margin": "rho_margin", "k_est": "K_est", "rank_rtol": "rank_rtol", "sweep_m": "sweep_m",
    "sweep_s": "sweep_s", "sweep_r": "sweep_r", "field_times": "field_times", "seed": "seed",
    "workers": "workers", "output_dir": "output_dir",
}
_DIFFUSION_FLAGS = {"grid": ("N_a", "N_b"), "length": ("L_a", "L_b"), "alpha": ("alpha",), "dt": ("dt",),
                    "inner": ("inner_shape",), "span": ("actuator_span",), "sources": ("num_sources",)}


def exit_code_for(exc: BaseException) -> int:
    err = getattr(exc, "error", exc)
    if isinstance(err, DominanceViolationError):
        return EXIT_DOMINANCE
    if isinstance(err, (InvalidArgumentError, CsvParseError, FileNotFoundError, json.JSONDecodeError)):
        return EXIT_CONFIG
    return EXIT_NUMERICAL


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment configuration (flags override --config)")
    g.add_argument("--config", type=Path, help="JSON experiment config")
    g.add_argument("--paper-scale", action="store_true", help="71x71 grid, 50x50 window, q=84, m=600, s=26, r=17")
    g.add_argument("--truth-source", choices=TRUTH_SOURCES)
    g.add_argument("--prbs-amplitude", type=float)
    g.add_argument("--prbs-hold", type=int)
    g.add_argument("--probe-amplitude", type=float)
    g.add_argument("--probe-freq", type=float, help="probe frequency in Hz")
    g.add_argument("--probe-start", choices=PROBE_STARTS)
    g.add_argument("--warmup", type=int)
    g.add_argument("--m-fit", "-m", type=int)
    g.add_argument("--s", "-s", type=int)
    g.add_argument("--r", "-r", type=int)
    g.add_argument("--horizon", type=int)
    g.add_argument("--rho-margin", type=float)
    g.add_argument("--k-est", type=int)
    g.add_argument("--rank-rtol", type=float)
    g.add_argument("--sweep-m", type=int, nargs="+")
    g.add_argument("--sweep-s", type=int, nargs="+")
    g.add_argument("--sweep-r", type=int, nargs="+")
    g.add_argument("--no-couple-r", action="store_true", help="do not derive r = s - 3 when sweeping s")
    g.add_argument("--field-times", type=int, nargs="+")
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--output-dir")
    d = p.add_argument_group("diffusion overrides")
    d.add_argument("--grid", type=int, help="grid points per axis")
    d.add_argument("--length", type=float, help="domain side length")
    d.add_argument("--alpha", type=float)
    d.add_argument("--dt", type=float)
    d.add_argument("--inner", type=int, nargs=2, metavar=("NA", "NB"))
    d.add_argument("--span", type=int, help="grid points per edge source")
    d.add_argument("--sources", type=int)


def config_from_args(args) -> ExperimentConfig:
    if args.config is not None:
        base = load_experiment_config(args.config)
        if args.paper_scale:
            base = replace(base, diffusion=dif.DiffusionConfig.paper(), m_fit=600, s=26, r=17, horizon=600)
    else:
        base = ExperimentConfig.paper_scale() if args.paper_scale else ExperimentConfig()
    d = base.diffusion.to_dict()
    for flag, keys in _DIFFUSION_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            for key in keys:
                d[key] = value
    overrides = {field: getattr(args, flag) for flag, field in _EXPERIMENT_FLAGS.items()
                 if getattr(args, flag) is not None}
    if args.no_couple_r:
        overrides["couple_r"] = False
    cfg = base.to_dict()
    cfg.update(overrides)
    cfg["diffusion"] = d
    return ExperimentConfig.from_dict(cfg)


def _print_report(rep) -> None:
    c = rep.constants
    print(f"run {rep.run_id}: n={rep.n} q={rep.q} m={rep.m} s={rep.s} r={rep.r} -> {rep.run_dir}")
    print(f"  rho={c.rho:.6g} rho_bar={c.rho_bar:.6g} M={c.M:.6g} M_sm={c.M_sm:.6g} M_rm={c.M_rm:.6g} "
          f"eps_s_B={c.eps_s_B:.6g} eps_r_B={c.eps_r_B:.6g}")
    print(f"  terminal actual={rep.terminal_actual:.6e} bound={rep.terminal_bound:.6e} "
          f"asymptote={rep.asymptote:.6e} truth discrepancy={rep.truth_discrepancy:.2e}")


def cmd_experiment(args) -> int:
    cfg = config_from_args(args)
    _print_report(run_single(cfg))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    res = run_sweep(cfg)
    if not isinstance(res, SweepResult):
        _print_report(res)
        return EXIT_OK
    print(f"sweep -> {res.sweep_dir}")
    print(f"{'m':>6} {'s':>4} {'r':>4} {'terminal_actual':>16} {'terminal_bound':>16}")
    for row in res.rows:
        print(f"{row['m']:>6} {row['s']:>4} {row['r']:>4} {row['terminal_actual']:>16.6e} {row['terminal_bound']:>16.6e}")
    for row in res.failures:
        print(f"FAILED m={row['m']} s={row['s']} r={row['r']}: {row['message']}", file=sys.stderr)
    if any(row["error"] == "DominanceViolationError" for row in res.failures):
        return EXIT_DOMINANCE
    return EXIT_NUMERICAL if res.failures else EXIT_OK


def cmd_simulate(args) -> int:
    cfg = config_from_args(args)
    system = dif.build_system(cfg.diffusion)
    q, dt = system.q, cfg.diffusion.dt
    if args.input == "prbs":
        inputs = generate_prbs(q, args.steps, cfg.prbs_amplitude, cfg.prbs_hold, cfg.seed, dt)
    elif args.input == "sine":
        inputs = generate_sinusoid(q, args.steps, cfg.probe_amplitude, cfg.probe_freq_hz, dt)
    else:
        inputs = InputSequence(np.zeros((q, args.steps)), dt)
    fields = dif.simulate(system, system.initial_state(), inputs)
    out = Path(args.out)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    inner = fields[:, system.inner_index].T                # n x (steps + 1)
    write_matrix_csv(out / "X.csv", inner[:, :-1])
    write_matrix_csv(out / "Y.csv", inner[:, 1:])
    write_matrix_csv(out / "U.csv", inputs.values)
    for k in range(0, args.steps + 1, args.save_every):
        write_matrix_csv(out / "fields" / f"field_k{k}.csv", fields[k].reshape(system.shape))
    if args.export_truth:
        dif.save_truth(dif.extract_truth(system), out / "truth")
    dif.save_config(cfg.diffusion, out / "diffusion.json")
    print(f"simulated {args.steps} steps on a {system.shape[0]}x{system.shape[1]} grid "
          f"(n={system.n}, q={q}) -> {out}")
    return EXIT_OK


def _read_snapshots(directory) -> SnapshotSet:
    d = Path(directory)
    return SnapshotSet(read_matrix_csv(d / "X.csv"), read_matrix_csv(d / "Y.csv"), read_matrix_csv(d / "U.csv"))


def cmd_fit(args) -> int:
    data = _read_snapshots(args.data)
    model = fit_dmdc(data, args.s, args.r, args.rank_rtol)
    save_model(model, args.out)
    lam = np.sort(np.abs(model.Lambda))[::-1]
    print(f"fitted n={model.n} q={model.q} m={model.m} s={model.s} r={model.r}; "
          f"largest |eigenvalue| {lam[0]:.6g} -> {args.out}")
    return EXIT_OK


def _read_vector(path) -> np.ndarray:
    return read_matrix_csv(path).ravel()


def cmd_predict(args) -> int:
    model = load_model(args.model)
    inputs = InputSequence(read_matrix_csv(args.inputs))
    steps = args.steps if args.steps is not None else inputs.N
    traj = predict(model, _read_vector(args.x0), inputs, steps)
    write_matrix_csv(args.out, reconstruct(model, traj))
    print(f"predicted {steps} steps -> {args.out}")
    return EXIT_OK


def cmd_bound(args) -> int:
    data = _read_snapshots(args.data)
    tdir = Path(args.truth)
    truth = TruthModel(read_matrix_csv(tdir / "A.csv"), read_matrix_csv(tdir / "B.csv"))
    model = fit_dmdc(data, args.s, args.r, args.rank_rtol)
    A_hat, B_hat = estimate_full_order(data, args.s, args.rank_rtol, model.svd_omega)
    inputs = InputSequence(read_matrix_csv(args.inputs))
    K = args.steps if args.steps is not None else inputs.N
    x_m = _read_vector(args.x_m)
    k_est = args.k_est if args.k_est is not None else K
    consts = estimate_constants(truth, model, A_hat, B_hat, k_est, args.rho_margin, args.u_bar)
    actual = actual_error_trajectory(truth, model, x_m, inputs, K)
    B_applied = None if args.norm_bound_input else np.linalg.norm(truth.B @ inputs.values[:, :K], axis=0)
    bound = bound_trajectory(consts, float(actual.values[0]), float(np.linalg.norm(x_m)), inputs, B_applied, K=K)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_certificate(out / "trajectory.csv", bound, actual)
    write_constants(out / "constants.csv", consts)
    msg = f"bound at k={K}: {bound.values[-1]:.6e}, actual {actual.values[-1]:.6e}"
    if consts.u_bar is not None:
        msg += f", asymptote {asymptotic_bound(consts):.6e}"
    print(msg + f" -> {out}")
    xs = truth.simulate(x_m, inputs, K)
    if np.any(bound.values + dominance_tolerance(xs) < actual.values):
        raise DominanceViolationError("bound below actual error; see trajectory.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dmdc-bounds", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run the diffusion PDE and export snapshots")
    _add_config_flags(sp)
    sp.add_argument("--steps", type=int, default=200)
    sp.add_argument("--input", choices=("prbs", "sine", "zero"), default="prbs")
    sp.add_argument("--save-every", type=int, default=50)
    sp.add_argument("--export-truth", action="store_true", help="also write the window's A.csv, B.csv")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    fp = sub.add_parser("fit", help="fit a DMDc model from X.csv, Y.csv, U.csv")
    fp.add_argument("--data", required=True)
    fp.add_argument("-s", type=int, required=True)
    fp.add_argument("-r", type=int, required=True)
    fp.add_argument("--rank-rtol", type=float, default=RANK_RTOL)
    fp.add_argument("--out", required=True)
    fp.set_defaults(func=cmd_fit)

    pp = sub.add_parser("predict", help="iterate a saved model and write reconstructed states")
    pp.add_argument("--model", required=True)
    pp.add_argument("--x0", required=True)
    pp.add_argument("--inputs", required=True, help="q x N input CSV")
    pp.add_argument("--steps", type=int)
    pp.add_argument("--out", required=True)
    pp.set_defaults(func=cmd_predict)

    bp = sub.add_parser("bound", help="error certificate for a fit against a known truth model")
    bp.add_argument("--data", required=True)
    bp.add_argument("--truth", required=True, help="directory with A.csv and B.csv")
    bp.add_argument("-s", type=int, required=True)
    bp.add_argument("-r", type=int, required=True)
    bp.add_argument("--x-m", required=True, help="CSV holding the prediction start state")
    bp.add_argument("--inputs", required=True, help="q x K inputs from the start index on")
    bp.add_argument("--steps", type=int)
    bp.add_argument("--k-est", type=int)
    bp.add_argument("--rho-margin", type=float, default=0.5)
    bp.add_argument("--u-bar", type=float)
    bp.add_argument("--rank-rtol", type=float, default=RANK_RTOL)
    bp.add_argument("--norm-bound-input", action="store_true", help="use ||B|| ||u_k|| in place of ||B u_k||")
    bp.add_argument("--out", required=True)
    bp.set_defaults(func=cmd_bound)

    ep = sub.add_parser("experiment", help="one identify/probe/fit/certify run")
    _add_config_flags(ep)
    ep.set_defaults(func=cmd_experiment)

    wp = sub.add_parser("sweep", help="grid of runs over m, s, r")
    _add_config_flags(wp)
    wp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DmdcError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
