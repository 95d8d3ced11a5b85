"""Command line entry point: ``hystrelax <command> [options]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .controls import ControlField, RelaxedControl
from .experiments import (
    consistency_orders,
    lipschitz_check,
    oracle_agreement,
    random_bang_bang,
    relaxation_run,
    stop_recovery,
)
from .io import (
    ConfigError,
    ensure_dir,
    grid_from_config,
    load_config,
    read_control,
    resolve_config,
    solver_from_config,
    write_control,
    write_csv,
    write_diagnostics,
    write_json,
    write_long_csv,
    write_manifest,
    write_records_csv,
    write_trajectory,
)
from .models import PRESETS, preset, validate_hypotheses
from .solver import SolverConfig, energy_budget, simulate

COMMANDS = ("simulate", "relax", "lipschitz", "stop-test", "oracle", "refine", "validate")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hystrelax", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=str, help="output directory")
    p.add_argument("--grid", type=int, help="cells per axis (1-D unless the config is 2-D)")
    p.add_argument("--dt", type=float)
    p.add_argument("--windows", type=str, help="comma-separated window counts for relax")
    p.add_argument("--pairs", type=int, help="number of control pairs for lipschitz")
    p.add_argument("--plot-data", action="store_true", help="also write tidy long-format CSV")
    return p


def _overrides(args) -> dict:
    ov: dict = {}
    if args.seed is not None:
        ov["seed"] = args.seed
    if args.out is not None:
        ov["out"] = args.out
    if args.dt is not None:
        ov.setdefault("solver", {})["dt"] = args.dt
    if args.windows is not None:
        try:
            wins = [int(x) for x in args.windows.split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"--windows must be comma-separated integers, got {args.windows!r}") from exc
        ov.setdefault("experiment", {})["windows"] = wins
    if args.pairs is not None:
        ov.setdefault("experiment", {})["pairs"] = args.pairs
        ov["experiment"].setdefault("calibration", max(1, args.pairs // 2))
    if args.plot_data:
        ov["plot_data"] = True
    return ov


def _config(args) -> dict:
    ov = _overrides(args)
    if args.config is not None:
        cfg = load_config(args.config, ov)
    else:
        base = {"preset": "stop-test"} if args.command == "stop-test" else {}
        cfg = resolve_config(base, ov)
    if args.grid is not None:
        cfg = resolve_config(cfg, {"grid": {"n_cells": [args.grid] * len(cfg["grid"]["n_cells"])}})
    return cfg


def _problem(cfg: dict):
    grid = grid_from_config(cfg)
    return (grid,) + preset(cfg["preset"], grid, **cfg["params"])


def _build_control(cfg: dict, grid, cset, solver: SolverConfig):
    c = cfg["control"]
    n = solver.n_steps
    if c["kind"] == "bang-bang":
        rng = np.random.default_rng(cfg["seed"])
        return random_bang_bang(grid, n, solver.dt, cset.K, rng, n_windows=c["windows"], n_blocks=c["blocks"])
    if c["kind"] == "relaxed":
        lam = c["weights"] or [1.0 / cset.K] * cset.K
        return RelaxedControl.constant(solver.dt, n, lam, grid.shape)
    if c["kind"] == "index":
        return ControlField(solver.dt, np.full((n,) + grid.shape, c["index"], dtype=np.int64))
    return read_control(c["path"], solver.dt)


# ----------------------------------------------------------------- commands


def cmd_validate(cfg: dict, out: Path, all_presets: bool) -> tuple[int, list]:
    names = PRESETS if all_presets else (cfg["preset"],)
    rows, ok = [], True
    grid = grid_from_config(cfg)
    for name in names:
        params = cfg["params"] if name == cfg["preset"] else {}
        model, init, cset = preset(name, grid, **params)
        rep = validate_hypotheses(model, init, controls=cset)
        ok &= rep.passed
        for cl in rep.clauses:
            rows.append((name, cl.name, cl.passed, cl.worst, cl.detail))
            print(f"{name}: {cl.line()}")
    path = write_csv(out / "validation.csv", ["preset", "clause", "passed", "worst", "detail"], rows)
    summ = write_json(out / "summary.json", {"passed": ok, "presets": list(names)})
    return (0 if ok else 1), [path, summ]


def cmd_simulate(cfg: dict, out: Path) -> tuple[int, list]:
    grid, model, init, cset = _problem(cfg)
    solver = solver_from_config(cfg)
    control = _build_control(cfg, grid, cset, solver)
    traj = simulate(model, init, control, solver, cset)
    budget = energy_budget(traj, model, cset.m_bound)
    arts = [
        write_trajectory(out / "trajectory.ndjson", traj),
        write_control(out / "control.ndjson", control),
        write_diagnostics(out / "diagnostics.csv", traj),
        write_json(out / "summary.json", {
            "steps": traj.n_steps,
            "t_end": traj.t_end,
            "energy_lhs": budget.lhs,
            "energy_rhs": budget.rhs,
            "energy_C1": budget.C1,
            "energy_holds": budget.holds,
        }),
    ]
    if cfg["plot_data"]:
        arts.append(write_long_csv(out / "long.csv", traj))
    print(f"simulated {traj.n_steps} steps to t={traj.t_end:g}; energy budget holds: {budget.holds}")
    return (0 if budget.holds else 1), arts


def cmd_relax(cfg: dict, out: Path) -> tuple[int, list]:
    grid, model, init, cset = _problem(cfg)
    solver = SolverConfig(cfg["solver"]["dt"], cfg["solver"]["t_end"],
                          allow_unstable_dt=cfg["solver"]["allow_unstable_dt"])
    ex = cfg["experiment"]
    rc = RelaxedControl.constant(solver.dt, solver.n_steps, ex["weights"], grid.shape)
    rep = relaxation_run(model, init, cset, rc, ex["windows"], solver, ex["tol_fraction"], n_jobs=cfg["n_jobs"])
    summ = rep.summary()
    passed = rep.non_increasing and rep.below_tolerance and rep.defects_within_bound
    summ["passed"] = passed
    rows = [(r.windows, r.weak_defect, r.defect_bound, r.distance, passed) for r in rep.rows]
    arts = [
        write_csv(out / "relaxation.csv", ["windows", "weak_defect", "defect_bound", "distance", "passed"], rows),
        write_json(out / "summary.json", summ),
    ]
    for r in rep.rows:
        print(f"N={r.windows:4d}  defect={r.weak_defect:.4e}  bound={r.defect_bound:.4e}  distance={r.distance:.4e}")
    print(f"passed: {passed}")
    return (0 if passed else 1), arts


def cmd_lipschitz(cfg: dict, out: Path) -> tuple[int, list]:
    grid, model, init, cset = _problem(cfg)
    solver = SolverConfig(cfg["solver"]["dt"], cfg["solver"]["t_end"],
                          allow_unstable_dt=cfg["solver"]["allow_unstable_dt"])
    ex, c = cfg["experiment"], cfg["control"]
    rng = np.random.default_rng(cfg["seed"])

    def draw():
        return random_bang_bang(grid, solver.n_steps, solver.dt, cset.K, rng, n_windows=c["windows"], n_blocks=c["blocks"])

    pairs = [(draw(), draw()) for _ in range(ex["pairs"])]
    rep = lipschitz_check(model, init, cset, pairs, solver, ex["calibration"], n_jobs=cfg["n_jobs"])
    arts = [write_records_csv(out / "lipschitz.csv", rep.rows), write_json(out / "summary.json", rep.summary())]
    print(f"C_emp={rep.C_emp:.4e}  held-out pass: {rep.passed}")
    return (0 if rep.passed else 1), arts


def cmd_stop_test(cfg: dict, out: Path) -> tuple[int, list]:
    ex = cfg["experiment"]
    rep = stop_recovery(dt=cfg["solver"]["dt"], period=ex["period"], v_low=ex["v_low"], v_high=ex["v_high"],
                        n_periods=ex["periods"])
    summ = rep.summary()
    arts = [write_records_csv(out / "stop_test.csv", [summ]), write_json(out / "summary.json", summ)]
    print(f"loop area {rep.area_sim:.6f} vs reference {rep.area_ref:.6f}; closure {rep.closure_sim:.2e}")
    return (0 if summ["passed"] else 1), arts


def cmd_oracle(cfg: dict, out: Path) -> tuple[int, list]:
    ex = cfg["experiment"]
    rep = oracle_agreement(n_controls=ex["n_controls"], dt=cfg["solver"]["dt"], t_end=cfg["solver"]["t_end"],
                           dt_fine=ex["dt_fine"], seed=cfg["seed"], n_jobs=cfg["n_jobs"])
    arts = [write_records_csv(out / "oracle.csv", rep.rows), write_json(out / "summary.json", rep.summary())]
    print(f"max error {rep.summary()['max_error']:.3e} (bound {5 * rep.dt:.1e}); passed: {rep.passed}")
    return (0 if rep.passed else 1), arts


def cmd_refine(cfg: dict, out: Path) -> tuple[int, list]:
    reps = consistency_orders(cfg["experiment"]["levels"])
    rows = []
    for axis, rep in reps.items():
        for i, (lab, diff) in enumerate(zip(rep.labels, rep.differences)):
            order = rep.orders[i - 1] if i > 0 else float("nan")
            rows.append((axis, lab, diff, order))
    summ = {axis: {"observed_order": rep.observed_order} for axis, rep in reps.items()}
    summ["passed"] = abs(summ["space"]["observed_order"] - 2) <= 0.3 and abs(summ["time"]["observed_order"] - 1) <= 0.3
    arts = [write_csv(out / "refinement.csv", ["axis", "level", "difference", "order"], rows),
            write_json(out / "summary.json", summ)]
    print(f"space order {summ['space']['observed_order']:.3f}, time order {summ['time']['observed_order']:.3f}")
    return (0 if summ["passed"] else 1), arts


def run(command: str, cfg: dict, all_presets: bool = False) -> int:
    out = ensure_dir(cfg["out"])
    if command == "validate":
        code, arts = cmd_validate(cfg, out, all_presets)
    else:
        handler = {
            "simulate": cmd_simulate,
            "relax": cmd_relax,
            "lipschitz": cmd_lipschitz,
            "stop-test": cmd_stop_test,
            "oracle": cmd_oracle,
            "refine": cmd_refine,
        }[command]
        code, arts = handler(cfg, out)
    write_manifest(out, cfg, command, arts)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
    except (ConfigError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return run(args.command, cfg, all_presets=args.config is None)
    except (ValueError, RuntimeError, FloatingPointError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
