"""Command-line front-end: simulate / symmetry / optimize / oracle.

Each command reads one scenario JSON (--config or a shipped --preset),
writes CSV results plus gnuplot companion scripts into --out, and
records a run manifest that can itself be passed back as --config.

Exit codes: 0 success, 2 validation error, 3 numerical-tolerance error,
4 optimization budget exhausted without improvement.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
from importlib import resources

import numpy as np

from . import __version__
from .bath import channel_label
from .decoherence import decoherence_matrix
from .dynamics import discrete_bath_oracle, fidelity_report, propagate
from .errors import BudgetExhausted, NumericalToleranceError, ValidationError
from .scenario import Scenario, parse_scenario, serialize_scenario
from .symmetry import (OptimizationProblem, SymmetryTarget, cross_suppression,
                       optimize_pulses, symmetry_deviation)

PRESETS = ("fig2_global", "fig2_iip", "fig2_iit", "fig2_unmodulated")


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: str, header: list[str], columns: list[np.ndarray]) -> None:
    lines = [",".join(header)]
    rows = len(columns[0])
    for i in range(rows):
        lines.append(",".join("%.17g" % float(col[i]) for col in columns))
    _atomic_write(path, "\n".join(lines) + "\n")


def _write_plt(path: str, csv_name: str, title: str, ylabel: str,
               series: list[tuple[int, str]], logy: bool = False) -> None:
    plots = ", ".join(f"'{csv_name}' using 1:{col} with lines title '{label}'"
                      for col, label in series)
    text = "\n".join([
        "set datafile separator comma",
        f"set title '{title}'",
        "set xlabel 't'",
        f"set ylabel '{ylabel}'",
        "set logscale y" if logy else "unset logscale",
        "set key outside",
        f"plot {plots}",
        "pause -1 'press enter to close'",
    ]) + "\n"
    _atomic_write(path, text)


def _write_manifest(out_dir: str, command: str, scn: Scenario, seed: int | None,
                    wall: float, diagnostics: dict, outputs: list[str]) -> str:
    manifest = {
        "tool": "simshield",
        "version": __version__,
        "command": command,
        "seed": seed,
        "wall_clock_s": wall,
        "scenario": serialize_scenario(scn),
        "diagnostics": diagnostics,
        "outputs": outputs,
    }
    path = os.path.join(out_dir, "run_manifest.json")
    _atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _clean_diag(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, np.integer)):
            out[k] = v.item()
        elif isinstance(v, tuple):
            out[k] = list(v)
        else:
            out[k] = v
    return out


def cmd_simulate(scn: Scenario, out_dir: str, seed: int | None = None) -> int:
    """Run the pipeline and write fidelity.csv + jmatrix.csv."""
    start = time.perf_counter()
    times = scn.output_times()
    traj = decoherence_matrix(scn.model, scn.sequence, scn.channels,
                              horizon=scn.horizon, times=times, config=scn.config)
    amps = propagate(traj, scn.initial_state)
    report = fidelity_report(amps, channels=scn.channels)
    idx = np.array([traj.index_of(t) for t in times])

    fid_path = os.path.join(out_dir, "fidelity.csv")
    _write_csv(fid_path, ["t", "F", "F_p", "F_c", "C"],
               [times, report.F[idx], report.F_p[idx], report.F_c[idx], report.C[idx]])

    labels = [channel_label(ch) for ch in scn.channels]
    header = ["t"]
    cols: list[np.ndarray] = [times]
    j_out = traj.integrated[idx]
    for p, lp in enumerate(labels):
        for q, lq in enumerate(labels):
            header += [f"ReJ_{lp}{lq}", f"ImJ_{lp}{lq}"]
            cols += [j_out[:, p, q].real, j_out[:, p, q].imag]
    jm_path = os.path.join(out_dir, "jmatrix.csv")
    _write_csv(jm_path, header, cols)

    _write_plt(os.path.join(out_dir, "fidelity.plt"), "fidelity.csv",
               "fidelity vs time", "fidelity",
               [(2, "F"), (3, "F_p"), (4, "F_c"), (5, "C")])
    diag_series = [(2 + 2 * (p * len(labels) + p), f"ReJ_{lp}{lp}")
                   for p, lp in enumerate(labels)]
    _write_plt(os.path.join(out_dir, "jmatrix.plt"), "jmatrix.csv",
               "decoherence matrix diagonal", "Re J", diag_series)

    diagnostics = _clean_diag({**traj.diagnostics, **amps.diagnostics,
                               "final_F": float(report.F[idx][-1])})
    _write_manifest(out_dir, "simulate", scn, seed, time.perf_counter() - start,
                    diagnostics, ["fidelity.csv", "jmatrix.csv", "fidelity.plt", "jmatrix.plt"])
    return 0


def cmd_symmetry(scn: Scenario, out_dir: str, seed: int | None = None,
                 trajectory_override=None) -> int:
    """Evaluate the configured symmetry target; write symmetry.csv."""
    start = time.perf_counter()
    traj = trajectory_override
    if traj is None:
        traj = decoherence_matrix(scn.model, scn.sequence, scn.channels,
                                  horizon=scn.horizon, config=scn.config)
    target = SymmetryTarget(kind=scn.symmetry_kind, horizon=scn.horizon,
                            samples=scn.symmetry_samples)
    report = symmetry_deviation(traj, target)
    suppression = cross_suppression(traj)

    m = len(report.sample_times)
    const = lambda v: np.full(m, v)
    path = os.path.join(out_dir, "symmetry.csv")
    _write_csv(path,
               ["t", "cross_block", "diagonal_spread", "intra_block_spread",
                "total", "deviation_final", "cross_suppression_final"],
               [report.sample_times, report.cross_block, report.diagonal_spread,
                report.intra_block_spread, report.per_time_total(),
                const(report.deviation), const(suppression)])
    _write_plt(os.path.join(out_dir, "symmetry.plt"), "symmetry.csv",
               f"{scn.symmetry_kind} deviation breakdown", "normalized deviation",
               [(2, "cross block"), (3, "diagonal spread"),
                (4, "intra block spread"), (5, "total")])

    passed = report.deviation <= scn.symmetry_threshold
    diagnostics = _clean_diag({
        "kind": scn.symmetry_kind, "deviation": report.deviation,
        "normalization": report.normalization, "threshold": scn.symmetry_threshold,
        "within_threshold": bool(passed), "cross_suppression": suppression,
    })
    _write_manifest(out_dir, "symmetry", scn, seed, time.perf_counter() - start,
                    diagnostics, ["symmetry.csv", "symmetry.plt"])
    return 0


def cmd_optimize(scn: Scenario, out_dir: str, seed: int = 0,
                 budget: int | None = None) -> int:
    """Search pulse parameters; write trace.csv + optimized.scenario."""
    start = time.perf_counter()
    target = SymmetryTarget(kind=scn.symmetry_kind, horizon=scn.horizon,
                            samples=scn.symmetry_samples)
    problem = OptimizationProblem(
        target=target, free_tau=scn.opt_free_tau, free_theta=scn.opt_free_theta,
        tau_bounds=scn.opt_tau_bounds, theta_bounds=scn.opt_theta_bounds,
        weight=scn.opt_weight, budget=budget if budget is not None else scn.opt_budget)
    result = optimize_pulses(problem, scn.model, scn.channels, base=scn.sequence,
                             alpha0=scn.initial_state, seed=seed, config=scn.config)

    trace_path = os.path.join(out_dir, "trace.csv")
    _write_csv(trace_path, ["evaluation", "objective", "best_so_far"],
               [result.trace[:, 0], result.trace[:, 1], result.trace[:, 2]])
    _write_plt(os.path.join(out_dir, "trace.plt"), "trace.csv",
               "optimization trace", "objective",
               [(2, "objective"), (3, "best so far")], logy=True)

    best = Scenario(model=scn.model, channels=scn.channels, sequence=result.sequence,
                    initial_state=scn.initial_state, initial_name=scn.initial_name,
                    horizon=scn.horizon, output_step=scn.output_step,
                    time_unit="natural", config=scn.config,
                    symmetry_kind=scn.symmetry_kind,
                    symmetry_threshold=scn.symmetry_threshold,
                    symmetry_samples=scn.symmetry_samples,
                    opt_free_tau=scn.opt_free_tau, opt_free_theta=scn.opt_free_theta,
                    opt_weight=scn.opt_weight, opt_budget=problem.budget,
                    opt_tau_bounds=scn.opt_tau_bounds, opt_theta_bounds=scn.opt_theta_bounds)
    _atomic_write(os.path.join(out_dir, "optimized.scenario"),
                  json.dumps(serialize_scenario(best), indent=2, sort_keys=True) + "\n")

    diagnostics = _clean_diag({
        "objective": result.objective, "initial_objective": result.initial_objective,
        "improved": result.improved, "evaluations": result.evaluations,
        "deviation": result.report.deviation, "fidelity": result.fidelity,
        "tau": result.sequence.tau, "theta": result.sequence.theta,
    })
    _write_manifest(out_dir, "optimize", scn, seed, time.perf_counter() - start,
                    diagnostics, ["trace.csv", "trace.plt", "optimized.scenario"])
    if not result.improved and result.initial_objective > 1e-15:
        print("optimize: budget exhausted without improving on the initial point",
              file=sys.stderr)
        return 4
    return 0


def cmd_oracle(scn: Scenario, out_dir: str, seed: int | None = None,
               modes: int = 2000) -> int:
    """Compare J-propagation against the discretized-bath oracle.

    Uses the full generator (level shifts included) since the oracle
    integrates the complete microscopic model.
    """
    start = time.perf_counter()
    times = scn.output_times()
    traj = decoherence_matrix(scn.model, scn.sequence, scn.channels,
                              horizon=scn.horizon, times=times, config=scn.config)
    amps = propagate(traj, scn.initial_state, generator="full")
    idx = np.array([traj.index_of(t) for t in times])
    model_abs = np.abs(amps.values[idx])

    oracle = discrete_bath_oracle(scn.model, scn.sequence, scn.channels,
                                  scn.initial_state, horizon=scn.horizon,
                                  n_modes=modes, times=times)
    oracle_abs = np.abs(oracle.values)
    deviation = np.max(np.abs(oracle_abs - model_abs), axis=1)
    flagged = np.where(times > oracle.diagnostics["recurrence_time"], 1.0, 0.0)

    labels = [channel_label(ch) for ch in scn.channels]
    header = (["t"] + [f"abs_a_{lb}_oracle" for lb in labels]
              + [f"abs_a_{lb}_model" for lb in labels] + ["max_deviation", "flag"])
    cols = ([times] + [oracle_abs[:, c] for c in range(len(labels))]
            + [model_abs[:, c] for c in range(len(labels))] + [deviation, flagged])
    path = os.path.join(out_dir, "oracle.csv")
    _write_csv(path, header, cols)
    _write_plt(os.path.join(out_dir, "oracle.plt"), "oracle.csv",
               "oracle vs model amplitudes", "|alpha|",
               [(2, f"{labels[0]} oracle"), (2 + len(labels), f"{labels[0]} model"),
                (2 + 2 * len(labels), "max deviation")])

    diagnostics = _clean_diag({**oracle.diagnostics,
                               "max_deviation": float(deviation.max())})
    _write_manifest(out_dir, "oracle", scn, seed, time.perf_counter() - start,
                    diagnostics, ["oracle.csv", "oracle.plt"])
    return 0


def _preset_path(name: str) -> str:
    return str(resources.files("simshield").joinpath("presets", f"{name}.json"))


def _load_scenario(args) -> Scenario:
    if (args.config is None) == (args.preset is None):
        raise ValidationError("exactly one of --config or --preset is required")
    path = args.config if args.config is not None else _preset_path(args.preset)
    return parse_scenario(path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simshield",
        description="Decoherence simulation under impulsive phase modulation")
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "simulate": "propagate the scenario and write fidelity/J time series",
        "symmetry": "measure deviation from the configured symmetry target",
        "optimize": "search pulse parameters minimizing the symmetry objective",
        "oracle": "cross-check against an explicit discretized-bath integration",
    }
    for name, desc in descriptions.items():
        sp = sub.add_parser(name, help=desc)
        sp.add_argument("--config", help="scenario JSON (or a previous run_manifest.json)")
        sp.add_argument("--preset", choices=PRESETS, help="shipped scenario preset")
        sp.add_argument("--out", required=True, help="output directory (created if missing)")
        sp.add_argument("--seed", type=int, default=0, help="optimizer seed")
        if name == "optimize":
            sp.add_argument("--budget", type=int, default=None,
                            help="max objective evaluations (>= 50)")
        if name == "oracle":
            sp.add_argument("--modes", type=int, default=2000,
                            help="bath modes for the oracle (>= 500)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scn = _load_scenario(args)
        os.makedirs(args.out, exist_ok=True)
        if args.command == "simulate":
            return cmd_simulate(scn, args.out, seed=args.seed)
        if args.command == "symmetry":
            return cmd_symmetry(scn, args.out, seed=args.seed)
        if args.command == "optimize":
            return cmd_optimize(scn, args.out, seed=args.seed, budget=args.budget)
        return cmd_oracle(scn, args.out, seed=args.seed, modes=args.modes)
    except ValidationError as exc:
        print(f"simshield: validation error: {exc}", file=sys.stderr)
        return 2
    except NumericalToleranceError as exc:
        print(f"simshield: numerical error: {exc}", file=sys.stderr)
        return 3
    except BudgetExhausted as exc:
        print(f"simshield: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
