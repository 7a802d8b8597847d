"""``acmpc`` command line: run, verify, sweep and export.

Exit codes: 0 success, 1 a verify property failed, 2 bad configuration or
usage, 3 file system error, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import resources

import numpy as np

from ..harness.controller import Mode
from ..harness.environments import legged_environment, regulation_environment
from ..harness.runner import (TABLE_COLUMNS, TABLE_SCHEMA, RunMetrics, TrialTable, run_closed_loop, step_log_csv,
                              table_csv, trial_offsets)
from ..testbed import brute_force_feasible_set, default_grid, make_testbed
from . import suites
from .config import ConfigError, ScenarioConfig, load

EXIT_OK, EXIT_PROPERTY, EXIT_CONFIG, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3, 4
SWEEP_SCHEMA = "acmpc-sweep/1"
MASK_SCHEMA = "acmpc-basin/1"
SWEEP_AXES = {"horizon": "horizon", "n_a": "horizon", "n": "horizon", "mode": "mode",
              "gap_width": "gap_width", "step_height": "step_height"}
TIMING_KEYS = ("mean_solve_time", "slow_rate")
TIMING_COLUMNS = ("Mean Solve Time (ms)", "Slow Solve Rate (%)")

log = logging.getLogger("acmpc")


class UsageError(Exception):
    """Bad command-line values; exits like a bad configuration."""


# -- scenario resolution ------------------------------------------------------

def packaged_scenarios() -> list:
    root = resources.files("acmpc") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def resolve_config(ref: str) -> ScenarioConfig:
    """A file path, or the name of a packaged scenario."""
    if os.path.exists(ref) or os.sep in ref or ref.endswith(".toml"):
        return load(ref)
    if ref in packaged_scenarios():
        res = resources.files("acmpc") / "scenarios" / f"{ref}.toml"
        from .config import loads

        return loads(res.read_text(encoding="utf-8"), f"{ref}.toml")
    return load(ref)  # raises FileNotFoundError with the given name


# -- running ------------------------------------------------------------------

def _starts(cfg: ScenarioConfig) -> list:
    """Per-trial start data: transverse offsets (legged) or start states (testbed)."""
    sc = cfg.scenario
    if sc.model == "legged":
        return trial_offsets(sc.trials, sc.seed, sc.offset_half_width)
    reg = cfg.regulation
    if reg.x0:
        return [np.array(reg.x0, dtype=float)] * sc.trials
    rng = np.random.default_rng(sc.seed)
    return [rng.uniform(-1.0, 1.0, 3) * np.array(reg.start_box) for _ in range(sc.trials)]


def _make_env(cfg: ScenarioConfig, start):
    if cfg.scenario.model == "legged":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return legged_environment(cfg.env_kind, cfg.env_scale(), cfg.legged_params(), y0=float(start))
    pair = make_testbed(cfg.testbed_params())
    reg = cfg.regulation
    return regulation_environment(pair, start, steps=reg.steps, tol=reg.tol), pair


def _run_one(args):
    cfg, start = args
    env, pair = _make_env(cfg, start)
    met, rlog = run_closed_loop(cfg.controller_config(), env, pair)
    return met, step_log_csv(met, rlog, cfg.controller.dt, timing=cfg.scenario.timing)


def run_trials(cfg: ScenarioConfig, jobs: int = 1) -> tuple:
    """Run every trial of ``cfg``; returns ``(TrialTable, step_logs)``."""
    starts = _starts(cfg)
    work = [(cfg, s) for s in starts]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(_run_one, work))
    else:
        out = []
        for j, w in enumerate(work):
            out.append(_run_one(w))
            m = out[-1][0]
            log.info("trial %d/%d: %s %s after %d steps", j + 1, len(work), "success" if m.success else "failure",
                     m.cause, m.steps)
    offsets = [float(s) if np.ndim(s) == 0 else [float(v) for v in s] for s in starts]
    table = TrialTable(Mode.parse(cfg.controller.mode).value, [m for m, _ in out], offsets)
    return table, [t for _, t in out]


def _blank_timing_summary(d: dict) -> dict:
    return {k: (None if k in TIMING_KEYS else v) for k, v in d.items()}


def _table_text(tables: list, timing: bool) -> str:
    text = table_csv(tables)
    if timing:
        return text
    rows = list(csv.DictReader(io.StringIO(text.split("\n", 1)[1])))
    buf = io.StringIO()
    buf.write(f"# schema: {TABLE_SCHEMA}\n")
    w = csv.DictWriter(buf, fieldnames=list(TABLE_COLUMNS), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if k in TIMING_COLUMNS else v) for k, v in r.items()})
    return buf.getvalue()


class OutputDir:
    """Writes files under one directory and remembers what it wrote."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(path, exist_ok=True)
        self.files = []

    def write(self, name: str, text: str) -> str:
        full = os.path.join(self.path, name)
        with open(full, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.files.append(name)
        return full

    def summary(self, record: dict) -> str:
        record = dict(record)
        record["outputs"] = sorted(self.files + ["summary.json"])
        return self.write("summary.json", json.dumps(record, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _clean(v):
    """JSON has no NaN; missing means are written as null."""
    if isinstance(v, float) and not np.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_clean(x) for x in v]
    return v


def _run_record(cfg: ScenarioConfig, table: TrialTable) -> dict:
    timing = cfg.scenario.timing
    trials = []
    for j, (m, s) in enumerate(zip(table.runs, table.offsets)):
        d = m.summary()
        d["trial"] = j
        d["start"] = s
        trials.append(d if timing else _blank_timing_summary(d))
    row = table.row()
    if not timing:
        row = {k: (None if k in TIMING_COLUMNS else v) for k, v in row.items()}
    return _clean({
        "scenario": cfg.scenario.name,
        "model": cfg.scenario.model,
        "environment": cfg.scenario.environment,
        "mode": table.mode,
        "seed": cfg.scenario.seed,
        "trials": len(table.runs),
        "successes": table.successes,
        "table_columns": list(TABLE_COLUMNS),
        "table": row,
        "per_trial": trials,
        "timing": timing,
    })


def cmd_run(cfg: ScenarioConfig, out_dir: str, jobs: int = 1) -> int:
    out = OutputDir(out_dir)
    table, logs = run_trials(cfg, jobs)
    out.write("config.toml", cfg.to_toml())
    for j, text in enumerate(logs):
        out.write(f"trial_{j:03d}_steps.csv", text)
    out.write("table.csv", _table_text([table], cfg.scenario.timing))
    out.summary(_run_record(cfg, table))
    print(f"{cfg.scenario.name}: {table.successes}/{len(table.runs)} successful, outputs in {out_dir}")
    return EXIT_OK


# -- sweep --------------------------------------------------------------------

def parse_values(axis: str, raw: list) -> list:
    """Values from ``a,b,c`` items; integer axes also accept ``lo..hi``."""
    items = [v.strip() for r in raw for v in r.split(",") if v.strip()]
    if not items:
        raise UsageError(f"sweep over {axis} needs at least one value")
    out = []
    for it in items:
        if axis == "mode":
            try:
                out.append(Mode.parse(it).value)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
        elif axis == "horizon":
            if ".." in it:
                lo, hi = it.split("..", 1)
                try:
                    out.extend(range(int(lo), int(hi) + 1))
                except ValueError:
                    raise UsageError(f"bad horizon range {it!r}") from None
            else:
                try:
                    out.append(int(it))
                except ValueError:
                    raise UsageError(f"horizon values must be integers, got {it!r}") from None
        else:
            try:
                out.append(float(it))
            except ValueError:
                raise UsageError(f"{axis} values must be numbers, got {it!r}") from None
    if axis == "horizon" and min(out) < 2:
        raise UsageError("horizon values must be at least 2")
    if axis in ("gap_width", "step_height") and min(out) <= 0:
        raise UsageError(f"{axis} values must be positive")
    return out


def _with_axis(cfg: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    if axis == "mode":
        return replace(cfg, controller=replace(cfg.controller, mode=value))
    if axis == "horizon":
        return replace(cfg, controller=replace(cfg.controller, horizon=int(value)))
    env = dict(cfg.environment)
    env[axis] = float(value)
    return replace(cfg, environment=env)


def _basin_sweep(cfg: ScenarioConfig, values: list, out: OutputDir, points: int) -> dict:
    pair = make_testbed(cfg.testbed_params())
    grid = default_grid(pair, points)
    masks = {N: brute_force_feasible_set(pair, grid, N) for N in values}
    buf = io.StringIO()
    buf.write(f"# schema: {MASK_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["horizon", "p", "v", "w", "feasible", "solver_failed"])
    for N in values:
        m = masks[N]
        for x, f, s in zip(grid, m.feasible, m.solver_failed):
            w.writerow([N, repr(float(x[0])), repr(float(x[1])), repr(float(x[2])), int(f), int(s)])
    out.write("basin.csv", buf.getvalue())
    Ns = sorted(values)
    nested = [{"from": a, "to": b, "violations": int(np.sum(masks[a].feasible & ~masks[b].feasible)),
               "strict": int(np.sum(masks[b].feasible & ~masks[a].feasible))} for a, b in zip(Ns, Ns[1:])]
    return {"grid_points": points, "counts": {str(N): int(masks[N].feasible.sum()) for N in values},
            "nesting": nested, "nested": all(n["violations"] == 0 for n in nested)}


def cmd_sweep(cfg: ScenarioConfig, axis: str, values: list, out_dir: str, jobs: int = 1, points: int = 21) -> int:
    key = SWEEP_AXES.get(axis.lower())
    if key is None:
        raise UsageError(f"cannot sweep over {axis!r}; sweepable axes: horizon, mode, gap_width, step_height")
    vals = parse_values(key, values)
    model = cfg.scenario.model
    if key in ("gap_width", "step_height") and model != "legged":
        raise UsageError(f"{key} applies to legged scenarios only")
    out = OutputDir(out_dir)
    out.write("config.toml", cfg.to_toml())
    record = {"scenario": cfg.scenario.name, "axis": key, "values": vals, "seed": cfg.scenario.seed}
    if model == "testbed" and key == "horizon":
        record["basin"] = _basin_sweep(cfg, vals, out, points)
        out.summary(_clean(record))
        print(f"basin sweep over N={vals}: nested={record['basin']['nested']}")
        return EXIT_OK
    long_rows, tables = [], []
    timing = cfg.scenario.timing
    for v in vals:
        try:
            sub = _with_axis(cfg, key, v)
            sub.controller_config()
            if model == "legged":
                sub.env_scale()
        except ValueError as exc:
            raise UsageError(f"{key}={v}: {exc}") from None
        table, _ = run_trials(sub, jobs)
        tables.append(table)
        for j, (m, s) in enumerate(zip(table.runs, table.offsets)):
            d = m.summary()
            if not timing:
                d = _blank_timing_summary(d)
            long_rows.append({"axis": key, "value": v, "trial": j, "start": json.dumps(s), **d})
    tables_text = _table_text(tables, timing)
    if key != "mode":
        # label rows by the swept value, keep the table schema otherwise
        lines = tables_text.splitlines()
        for i, v in enumerate(vals):
            lines[2 + i] = lines[2 + i].replace(tables[i].mode, f"{tables[i].mode} {key}={v}", 1)
        tables_text = "\n".join(lines) + "\n"
    out.write("table.csv", tables_text)
    buf = io.StringIO()
    buf.write(f"# schema: {SWEEP_SCHEMA}\n")
    fields = list(long_rows[0].keys())
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in long_rows:
        w.writerow({k: ("" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k])) for k in fields})
    out.write("sweep.csv", buf.getvalue())
    record["successes"] = {str(v): t.successes for v, t in zip(vals, tables)}
    out.summary(_clean(record))
    for v, t in zip(vals, tables):
        print(f"{key}={v}: {t.successes}/{len(t.runs)} successful")
    return EXIT_OK


# -- export -------------------------------------------------------------------

def cmd_export(cfg: ScenarioConfig, out_dir: str) -> int:
    """Effective config, the reference trajectory and the terrain (or terminal set)."""
    out = OutputDir(out_dir)
    out.write("config.toml", cfg.to_toml())
    start = _starts(cfg.with_overrides(trials=1))[0]
    env, pair = _make_env(cfg, start)
    ref = env.reference
    buf = io.StringIO()
    buf.write("# schema: acmpc-reference/1\n")
    w = csv.writer(buf, lineterminator="\n")
    nx, nu = ref.x.shape[1], ref.u.shape[1]
    contact = ref.aux.get("contact")
    head = ["k", "t"] + [f"x{j}" for j in range(nx)] + [f"u{j}" for j in range(nu)]
    if contact is not None:
        head += [f"contact{j}" for j in range(contact.shape[1])]
    w.writerow(head)
    for k in range(len(ref.x)):
        row = [k, repr(k * cfg.controller.dt)] + [repr(float(v)) for v in ref.x[k]]
        row += [repr(float(v)) for v in ref.u[k]] if k < len(ref.u) else [""] * nu
        if contact is not None:
            row += [int(b) for b in contact[k]]
        w.writerow(row)
    out.write("reference.csv", buf.getvalue())
    record = {"scenario": cfg.scenario.name, "model": cfg.scenario.model, "steps": ref.length,
              "consistency_error": ref.consistency_error(pair)}
    if cfg.scenario.model == "legged":
        ter = env.terrain
        xs = np.linspace(-0.5, cfg.environment["distance"] + 0.5, 401)
        tb = io.StringIO()
        tb.write("# schema: acmpc-terrain/1\n")
        tw = csv.writer(tb, lineterminator="\n")
        tw.writerow(["x", "raw_height", "smooth_height"])
        smooth = ter.height(np.column_stack([xs, np.zeros_like(xs)]))
        for x, r, s in zip(xs, ter.raw_height(xs), smooth):
            tw.writerow([repr(float(x)), repr(float(r)), repr(float(s))])
        out.write("terrain.csv", tb.getvalue())
        out.write("terrain.json", json.dumps(ter.to_dict(), indent=1, sort_keys=True, default=_json_default) + "\n")
        record["notes"] = env.notes
    else:
        tb = io.StringIO()
        tb.write("# schema: acmpc-terminal-set/1\n")
        tw = csv.writer(tb, lineterminator="\n")
        tw.writerow(["h_p", "h_v", "h_w", "rhs"])
        for row, rhs in zip(pair.Ht, pair.ht):
            tw.writerow([repr(float(v)) for v in row] + [repr(float(rhs))])
        out.write("terminal_set.csv", tb.getvalue())
    out.summary(_clean(record))
    print(f"exported {cfg.scenario.name} to {out_dir}")
    return EXIT_OK


# -- verify -------------------------------------------------------------------

def cmd_verify(suite: str) -> int:
    if suite not in suites.SUITES:
        raise UsageError(f"unknown suite {suite!r}; expected one of {list(suites.SUITES)}")
    checks = suites.run_suite(suite)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{suite}: {len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_PROPERTY if failed else EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="acmpc", description="Adaptive complexity MPC experiments.")
    ap.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def scenario_args(p, out=True):
        p.add_argument("scenario", nargs="?", help="scenario file or packaged scenario name")
        p.add_argument("--config", help="scenario file (alternative to the positional argument)")
        if out:
            p.add_argument("--out", help="output directory (default: $ACMPC_OUT/<name>)")
        p.add_argument("--seed", type=int, help="override scenario.seed")
        p.add_argument("--trials", type=int, help="override scenario.trials")
        p.add_argument("--jobs", type=int, default=1, help="parallel trial processes")
        p.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    scenario_args(sub.add_parser("run", help="run the trials of a scenario"))
    p = sub.add_parser("sweep", help="repeat a scenario over the values of one axis")
    scenario_args(p)
    p.add_argument("--axis", required=True, help="horizon, mode, gap_width or step_height")
    p.add_argument("--values", nargs="*", default=[], help="comma separated; horizons accept lo..hi")
    p.add_argument("--grid", type=int, default=21, help="points per axis for testbed basin sweeps")
    scenario_args(sub.add_parser("export", help="write the effective config, reference and terrain"))
    p = sub.add_parser("verify", help="run a property suite")
    p.add_argument("suite", choices=suites.SUITES)
    p.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)
    sub.add_parser("list", help="list packaged scenarios")
    return ap


def _load(args) -> ScenarioConfig:
    ref = args.config or args.scenario
    if not ref:
        raise UsageError("a scenario is required (positional or --config)")
    if args.config and args.scenario and args.config != args.scenario:
        raise UsageError("give the scenario either positionally or with --config, not both")
    cfg = resolve_config(ref)
    return cfg.with_overrides(seed=args.seed, trials=args.trials)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "list":
            for name in packaged_scenarios():
                print(name)
            return EXIT_OK
        if args.command == "verify":
            return cmd_verify(args.suite)
        cfg = _load(args)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
        out_dir = cfg.out_dir(args.out)
        if args.command == "run":
            return cmd_run(cfg, out_dir, args.jobs)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.axis, args.values, out_dir, args.jobs, args.grid)
        return cmd_export(cfg, out_dir)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception:  # noqa: BLE001 - report and map to the internal-error code
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
