"""Command-line front end.

Subcommands:
  run       optimize or run a baseline scheme, write trajectory.csv,
            convergence.csv, solution.json into --out
  sweep     run all three schemes over a moving-time grid, write
            energy_sweep.csv
  validate  re-verify a saved solution.json against the exact constraint
            formulas at a given tolerance

Exit codes: 0 success, 1 infeasibility/solver failure (run, sweep with no
successful cell, validate with failing constraints), 2 unusable input
(unreadable or invalid config/devices/solution file, existing outputs
without --force).

File formats (all headers always present, floats with 15 significant digits):
  trajectory.csv    slot,x,y with slot 0 = start point and slot N+1 = end
  convergence.csv   outer_iter,objective_J,first_loop_iters,second_loop_iters
  energy_sweep.csv  t_move_s,scheme,total_J,propulsion_J,wpt_J,status
  solution.json     manifest (config snapshot, layout, scheme, seed, files,
                    runtime), the solved plan, its energy breakdown, and the
                    feasibility report
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import channel, energy, planner, sca
from .model import (ConfigError, DeviceLayout, Solution, config_from_dict,
                    config_to_dict, load_config, load_layout, solution_from_dict,
                    solution_to_dict, validate_config)


def _fmt(x: float) -> str:
    return f"{float(x):.15g}"


def _packaged(name: str) -> Path:
    return Path(str(resources.files("fduav.data").joinpath(name)))


def _load_inputs(args):
    """Config + layout from flags; raises ConfigError/OSError on bad input."""
    cfg_path = args.config or _packaged("default_config.json")
    dev_path = args.devices or _packaged("reference_layout.json")
    cfg = load_config(cfg_path)
    if args.seed is not None:
        cfg = replace(cfg, seed=int(args.seed))
    validate_config(cfg)
    layout = load_layout(dev_path)
    if layout.K != cfg.K:
        raise ConfigError([f"device file has {layout.K} positions, config wants K={cfg.K}"])
    return cfg, layout


def _check_outputs(out_dir: Path, names: list[str], force: bool) -> list[Path]:
    paths = [out_dir / n for n in names]
    if not force:
        clashes = [str(p) for p in paths if p.exists()]
        if clashes:
            raise FileExistsError(
                "refusing to overwrite existing outputs (use --force): "
                + ", ".join(clashes))
    return paths


def _write_trajectory_csv(path: Path, sol: Solution) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("slot,x,y\n")
        for i, (x, y) in enumerate(sol.trajectory.points):
            f.write(f"{i},{_fmt(x)},{_fmt(y)}\n")


def _write_convergence_csv(path: Path, sol: Solution) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("outer_iter,objective_J,first_loop_iters,second_loop_iters\n")
        for rec in sol.trace:
            f.write(f"{rec.outer_iter},{_fmt(rec.objective)},"
                    f"{rec.first_loop_iters},{rec.second_loop_iters}\n")


def cmd_run(args) -> int:
    try:
        cfg, layout = _load_inputs(args)
        out_dir = Path(args.out)
        names = ["trajectory.csv", "convergence.csv", "solution.json"]
        paths = _check_outputs(out_dir, names, args.force)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    started = time.perf_counter()
    chans = channel.sample_channels(cfg)
    try:
        sol = planner.run_scheme(args.scheme, cfg, layout, chans)
    except (planner.PlannerError, sca.SubproblemError,
            channel.ChannelRankError, channel.RealnessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    runtime = time.perf_counter() - started
    breakdown = energy.total_energy(sol, cfg)
    report = energy.verify_feasibility(sol, chans, cfg, layout, tol=args.tol)

    out_dir.mkdir(parents=True, exist_ok=True)
    _write_trajectory_csv(paths[0], sol)
    _write_convergence_csv(paths[1], sol)
    payload = {
        "manifest": {
            "scheme": args.scheme,
            "seed": cfg.seed,
            "out_dir": str(out_dir),
            "files": names,
            "runtime_s": runtime,
            "config": config_to_dict(cfg),
            "layout": layout.to_list(),
        },
        "objective_J": sol.objective,
        "breakdown": {
            "propulsion_J": breakdown.propulsion_total,
            "wpt_J": breakdown.wpt_total,
            "total_J": breakdown.total,
        },
        "feasibility": report.to_dict(),
        "solution": solution_to_dict(sol),
    }
    with open(paths[2], "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    print(f"{args.scheme}: total {breakdown.total:.6f} J "
          f"(propulsion {breakdown.propulsion_total:.6f}, "
          f"wpt {breakdown.wpt_total:.6f}) in {runtime:.1f} s")
    print(f"wrote {', '.join(str(p) for p in paths)}")
    return 0


def _t_grid(t_min: float, t_max: float, t_step: float) -> list[float]:
    if t_min <= 0 or t_step <= 0 or t_max < t_min:
        raise ValueError(
            f"bad t grid: min {t_min}, max {t_max}, step {t_step}")
    count = int(np.floor((t_max - t_min) / t_step + 1e-9)) + 1
    return [t_min + i * t_step for i in range(count)]


def cmd_sweep(args) -> int:
    try:
        cfg, layout = _load_inputs(args)
        ts = _t_grid(args.t_min, args.t_max, args.t_step)
        out_dir = Path(args.out)
        (path,) = _check_outputs(out_dir, ["energy_sweep.csv"], args.force)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    chans = channel.sample_channels(cfg)
    cells = planner.sweep_moving_time(cfg, layout, chans, ts)
    out_dir.mkdir(parents=True, exist_ok=True)
    ok_rows = 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("t_move_s,scheme,total_J,propulsion_J,wpt_J,status\n")
        for c in cells:
            if c.status == "ok":
                ok_rows += 1
                f.write(f"{_fmt(c.t_move)},{c.scheme},{_fmt(c.breakdown.total)},"
                        f"{_fmt(c.breakdown.propulsion_total)},"
                        f"{_fmt(c.breakdown.wpt_total)},ok\n")
            else:
                status = c.status.replace(",", ";").replace("\n", " ")
                f.write(f"{_fmt(c.t_move)},{c.scheme},,,,{status}\n")
    print(f"wrote {path} ({ok_rows}/{len(cells)} cells solved)")
    return 0 if ok_rows else 1


def cmd_validate(args) -> int:
    try:
        with open(args.solution, "r", encoding="utf-8") as f:
            payload = json.load(f)
        cfg = validate_config(config_from_dict(payload["manifest"]["config"]))
        layout = DeviceLayout(np.asarray(payload["manifest"]["layout"], dtype=float))
        sol = solution_from_dict(payload["solution"])
        if sol.trajectory.N != cfg.N or sol.powers.K != cfg.K:
            raise ValueError("solution dimensions do not match its config")
    except (OSError, KeyError, ValueError, TypeError) as exc:
        print(f"error: cannot read solution file: {exc}", file=sys.stderr)
        return 2

    chans = channel.sample_channels(cfg)
    report = energy.verify_feasibility(sol, chans, cfg, layout, tol=args.tol)
    for c in report.checks:
        state = "pass" if c.ok else "FAIL"
        print(f"{c.name:12s} worst at {c.index:10s} slack {c.slack: .6e}  {state}")
    print("feasible" if report.ok else "infeasible", f"at tol {args.tol:g}")
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fduav",
        description="Hover-plan optimizer for a wireless-powered data "
                    "collection UAV")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="config JSON (default: packaged)")
        sp.add_argument("--devices", help="device layout JSON (default: packaged)")
        sp.add_argument("--seed", type=int, help="override config seed")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--force", action="store_true",
                        help="overwrite existing output files")

    run = sub.add_parser("run", help="solve one scheme, write plan files")
    common(run)
    run.add_argument("--scheme", default="optimized",
                     choices=[s.value for s in planner.Scheme])
    run.add_argument("--tol", type=float, default=1e-6,
                     help="feasibility report tolerance")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="energy vs moving time, all schemes")
    common(sweep)
    sweep.add_argument("--t-min", type=float, default=0.5)
    sweep.add_argument("--t-max", type=float, default=3.0)
    sweep.add_argument("--t-step", type=float, default=0.5)
    sweep.set_defaults(func=cmd_sweep)

    val = sub.add_parser("validate", help="re-verify a saved solution.json")
    val.add_argument("--solution", required=True, help="path to solution.json")
    val.add_argument("--tol", type=float, default=1e-6)
    val.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
