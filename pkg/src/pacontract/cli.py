"""Command-line entry point: ``pacontract {solve,simulate,verify,example}``.

Exit codes: 0 success, 2 config/schema error, 3 solver or path error,
4 stale field artifact, 5 incentive-compatibility violation.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from .artifacts import load_field, save_field
from .config import RunConfig, example_config, model_hash
from .contract_engine import ensemble_seed, simulate, summarize, synthesize_path, write_report
from .errors import (ArtifactMismatch, ConfigError, ContractError, CoverageError, InvalidModel, InvalidParams,
                     ParseError)
from .hjb_solver import convergence_report, min_steps, solve, successive_gaps
from .ic_verifier import default_strategies, verify
from .model import theta_table

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_STALE, EXIT_IC = 0, 2, 3, 4, 5
FIELD_FILE = "field.npz"
CONVERGENCE_FILE = "convergence.json"


def _coarsenings(spec, grid, levels, thetas):
    grids = [grid]
    for _ in range(levels):
        g = grids[0]
        if (g.n_w - 1) % 2 or (g.n_y - 1) % 2 or (g.n_w - 1) // 2 + 1 < 3 or (g.n_y - 1) // 2 + 1 < 3:
            break
        c = replace(g, n_w=(g.n_w - 1) // 2 + 1, n_y=(g.n_y - 1) // 2 + 1)
        grids.insert(0, replace(c, n_t=min_steps(spec, c, thetas)))
    return grids


def cmd_solve(cfg: RunConfig, out_dir):
    spec = cfg.build_model()
    thetas = theta_table(spec)
    grid = cfg.build_grid(spec, thetas)
    field = solve(spec, grid, thetas)
    value = float(field.value_at(spec.participation_payoff, spec.y0))
    os.makedirs(out_dir, exist_ok=True)
    grids = _coarsenings(spec, grid, int(cfg.grid.get("convergence_levels", 1)), thetas)
    report = convergence_report(spec, grids[:-1], thetas) + [(grid, value)]
    gaps = successive_gaps(report)
    conv = {
        "levels": [{"grid": g.to_dict(), "value": v} for g, v in report],
        "gaps": gaps,
        "gap": gaps[-1] if gaps else 0.0,
    }
    write_report(os.path.join(out_dir, CONVERGENCE_FILE), conv)
    save_field(os.path.join(out_dir, FIELD_FILE), field, model_hash(spec), {"value_at_start": value})
    print(repr(value))
    return EXIT_OK


def _load(cfg, field_path):
    spec = cfg.build_model()
    field, header = load_field(field_path, model_hash(spec))
    return spec, field, header


def cmd_simulate(cfg: RunConfig, field_path, out_dir):
    spec, field, _ = _load(cfg, field_path)
    sim = cfg.simulation
    n_steps = sim.get("n_steps") or field.grid.n_t
    base = int(sim["base_seed"])
    band = tuple(sim["band"]) if sim.get("band") else None
    seeds = [ensemble_seed(base, i) for i in range(int(sim["n_paths"]))]
    batch = simulate(field, spec, seeds, n_steps, band=band, workers=cfg.workers)
    summary = summarize(batch, spec, base, n_steps)
    os.makedirs(out_dir, exist_ok=True)
    write_report(os.path.join(out_dir, "ensemble_summary.json"), summary)
    for i in range(min(int(sim.get("n_export_paths", 0)), len(seeds))):
        synthesize_path(field, spec, seeds[i], n_steps).to_csv(os.path.join(out_dir, f"path_{i:04d}.csv"))
    print(f"agent payoff {summary['agent_mean']:.6g} +/- {summary['agent_se']:.3g}   "
          f"principal payoff {summary['principal_mean']:.6g} +/- {summary['principal_se']:.3g}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, field_path, out_dir):
    spec, field, _ = _load(cfg, field_path)
    gap = 0.0
    conv_path = os.path.join(os.path.dirname(os.path.abspath(field_path)), CONVERGENCE_FILE)
    if os.path.exists(conv_path):
        with open(conv_path) as fh:
            gap = float(json.load(fh).get("gap", 0.0))
    v = cfg.verify
    report = verify(field, spec, int(v["n_paths"]), int(v["base_seed"]), cfg.simulation.get("n_steps"), gap,
                    default_strategies(spec, int(v["n_switch"])), cfg.workers)
    os.makedirs(out_dir, exist_ok=True)
    report.write(os.path.join(out_dir, "deviation_report.json"))
    with open(os.path.join(out_dir, "deviation_report.txt"), "w") as fh:
        fh.write(report.table() + "\n")
    print(report.table())
    return EXIT_OK if report.passed else EXIT_IC


def _write_columns(path, header, columns):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            fh.write(",".join("" if (isinstance(v, float) and math.isnan(v)) else repr(float(v)) for v in row) + "\n")


def cmd_example(out_dir, n_paths=None):
    """Solve, simulate and verify the packaged load-control instance; write plot-ready CSVs."""
    data = example_config()
    if n_paths is not None:
        data["simulation"]["n_paths"] = n_paths
    cfg = RunConfig.from_dict(data)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(data, fh, indent=2)
    cmd_solve(cfg, out_dir)
    field_path = os.path.join(out_dir, FIELD_FILE)
    cmd_simulate(cfg, field_path, out_dir)
    status = cmd_verify(cfg, field_path, out_dir)

    spec, field, _ = _load(cfg, field_path)
    params = spec.description["params"]
    n_steps = cfg.simulation.get("n_steps") or field.grid.n_t
    path = synthesize_path(field, spec, ensemble_seed(cfg.simulation["base_seed"], 0), n_steps)
    t = path.times
    clock = 10.0 + t
    step_vals = lambda a: np.append(a, np.nan)  # noqa: E731
    _write_columns(os.path.join(out_dir, "price.csv"), ["t", "clock", "lambda"],
                   [t, clock, spec.revenue_drift.price(t)])
    _write_columns(os.path.join(out_dir, "temperature.csv"), ["t", "clock", "y_star", "outdoor"],
                   [t, clock, path.y_star, spec.system_rhs.outdoor(t)])
    _write_columns(os.path.join(out_dir, "control.csv"), ["t", "clock", "u_star"], [t, clock, step_vals(path.u_star)])
    _write_columns(os.path.join(out_dir, "compensation.csv"), ["t", "clock", "pi_star"],
                   [t, clock, step_vals(path.pi_star)])
    _write_columns(os.path.join(out_dir, "continuation_value.csv"), ["t", "clock", "w_star"], [t, clock, path.w_star])
    dt = spec.horizon / n_steps
    lo, hi = params["band_low"] - 0.5, params["band_high"] + 0.5
    summary = {
        "temperature_band": [lo, hi],
        "temperature_in_band_fraction": float(np.mean((path.y_star >= lo) & (path.y_star <= hi))),
        "temperature_min": float(path.y_star.min()),
        "temperature_max": float(path.y_star.max()),
        "real_time_compensation": float(np.sum(path.pi_star) * dt),
        "end_time_compensation": path.end_pay,
        "total_compensation": float(np.sum(path.pi_star) * dt + path.end_pay),
        "verify_exit_code": status,
    }
    write_report(os.path.join(out_dir, "example_summary.json"), summary)
    return status


def build_parser():
    p = argparse.ArgumentParser(prog="pacontract", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("solve", "simulate", "verify"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON run configuration")
        s.add_argument("--out", help="output directory (overrides config and PACONTRACT_OUTPUT_DIR)")
        if name != "solve":
            s.add_argument("--field", help=f"solved field artifact (default: <out>/{FIELD_FILE})")
    e = sub.add_parser("example", help="reproduce the indirect load-control example")
    e.add_argument("--out", help="output directory")
    e.add_argument("--n-paths", type=int, help="override the ensemble size")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "example":
            out = args.out or os.environ.get("PACONTRACT_OUTPUT_DIR") or "example_out"
            return cmd_example(out, args.n_paths)
        cfg = RunConfig.load(args.config)
        out = args.out or cfg.output_dir
        if args.command == "solve":
            return cmd_solve(cfg, out)
        field_path = args.field or os.path.join(out, FIELD_FILE)
        if not os.path.exists(field_path):
            raise ArtifactMismatch(f"field artifact {field_path} does not exist")
        if args.command == "simulate":
            return cmd_simulate(cfg, field_path, out)
        return cmd_verify(cfg, field_path, out)
    except (ConfigError, InvalidModel, InvalidParams, ParseError, CoverageError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArtifactMismatch as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STALE
    except ContractError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
