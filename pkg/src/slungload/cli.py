"""Command-line entry point: ``slungload {plan,sim,ablate,bench,gate}``.

Every command writes machine-readable files into ``--out`` and a short human
summary on stdout.  Wall-clock figures go to ``timing.json`` only, so every
other output file is bitwise reproducible for a fixed seed.

Exit codes: 0 success, 1 domain failure (no plan, infeasible, aborted run,
benchmark below target), 2 usage error or unreadable input.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from slungload.bench import (
    VARIANTS,
    ScenarioFile,
    ablate,
    bench_planning,
    figure_eight,
    gate_run,
    standard_rows,
)
from slungload.minco import save_trajectory
from slungload.params import SystemParams, load_params
from slungload.worlds import FAMILIES

log = logging.getLogger("slungload")

LOG_ENV = "SLUNGLOAD_LOG"
BENCH_TARGETS = {"12-squares": 9, "random-gap": 9, "clutter": 8}  # successes out of 10


class UsageError(Exception):
    pass


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _load_scenario(args) -> ScenarioFile:
    if not args.scenario:
        raise UsageError("--scenario is required")
    try:
        sf = ScenarioFile.load(args.scenario)
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"cannot read scenario {args.scenario}: {exc}") from exc
    if args.seed is not None:
        sf.seed = args.seed
        if "family" in sf.map:
            sf.map = {**sf.map, "seed": args.seed}
    return sf


def _params(args) -> SystemParams:
    if not args.params:
        return SystemParams()
    try:
        return load_params(args.params)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise UsageError(f"cannot read parameter file {args.params}: {exc}") from exc


# --- commands ---------------------------------------------------------------------------

def cmd_plan(args) -> int:
    sf = _load_scenario(args)
    p = _params(args)
    out = sf.plan(p)
    rep = out.report()
    _write_json(args.out / "report.json", rep)
    _write_json(args.out / "timing.json", {"plan_ms": out.plan_ms})
    if out.poly is not None:
        save_trajectory(out.poly, args.out / "trajectory.txt")
    if out.feasible:
        print(f"plan ok: {rep['length_m']:.2f} m in {rep['duration_s']:.2f} s, planned in {out.plan_ms:.0f} ms")
        return 0
    print(f"plan failed: {out.reason}")
    return 1


def cmd_sim(args) -> int:
    sf = _load_scenario(args)
    p = _params(args)
    variant = args.variant[0] if args.variant else None
    try:
        run_log, m = sf.simulate(variant, p)
    except RuntimeError as exc:
        print(f"sim failed: {exc}")
        return 1
    timing = m.pop("solve_ms", {})
    run_log.to_csv(args.out / "log.csv")
    run_log.diag_to_csv(args.out / "diag.csv")
    _write_json(args.out / "metrics.json", m)
    _write_json(args.out / "timing.json", {"nmpc_solve_ms": timing})
    print(
        f"sim {variant or 'configured'}: payload RMSE {m['rmse_L']:.2f} cm (max {m['max_L']:.2f}), "
        f"quadrotor RMSE {m['rmse_Q']:.2f} cm (max {m['max_Q']:.2f})"
    )
    if m["aborted"]:
        print(f"aborted: {m['aborted']}")
        return 1
    return 0


def cmd_ablate(args) -> int:
    p = _params(args)
    variants = tuple(args.variant) if args.variant else tuple(VARIANTS)
    seed = args.seed or 0
    if args.scenario:
        sf = _load_scenario(args)
        poly = sf.build_trajectory(p)
        rows = {"scenario": tuple(sf.event_list())}
        tail = sf.tail
    else:
        poly = figure_eight(v_max=args.v_max)
        all_rows = standard_rows()
        names = args.row or list(all_rows)
        unknown = [n for n in names if n not in all_rows]
        if unknown:
            raise UsageError(f"unknown rows {unknown}; choose from {list(all_rows)}")
        rows = {n: all_rows[n] for n in names}
        tail = 3.0
    table, timing, failed = {}, {}, False
    for name, events in rows.items():
        log.info("ablation row %s", name)
        res = ablate(poly, events, variants, seed=seed, tail=tail, params=p)
        for v, m in res.items():
            timing[f"{name}/{v}"] = m.pop("solve_ms", {})
            failed |= bool(m["aborted"])
        table[name] = res
    _write_json(args.out / "ablation.json", table)
    _write_json(args.out / "timing.json", {"nmpc_solve_ms": timing})
    with open(args.out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "variant", "rmse_Q_cm", "max_Q_cm", "rmse_L_cm", "max_L_cm", "aborted"])
        for name, res in table.items():
            for v, m in res.items():
                w.writerow([name, v, repr(m["rmse_Q"]), repr(m["max_Q"]), repr(m["rmse_L"]), repr(m["max_L"]), m["aborted"]])
    header = f"{'row':<10}" + "".join(f"{v:>20}" for v in variants)
    print("payload RMSE/MAX (cm)")
    print(header)
    for name, res in table.items():
        print(f"{name:<10}" + "".join(f"{res[v]['rmse_L']:>12.1f}/{res[v]['max_L']:<7.1f}" for v in variants))
    return 1 if failed else 0


def cmd_bench(args) -> int:
    families = args.family or list(FAMILIES)
    seed = args.seed or 0
    summary, per_instance, timing = {}, {}, {}
    ok = True
    for fam in families:
        suite = bench_planning(fam, count=args.count, seed_base=seed, workers=args.workers, params=_params(args))
        s = suite.summary()
        timing[fam] = {"mean_plan_ms": s.pop("mean_plan_ms"), "max_plan_ms": s.pop("max_plan_ms"),
                       "plan_ms": [r.plan_ms for r in suite.results]}
        summary[fam] = s
        per_instance[fam] = [
            {"seed": r.seed, "success": r.success, "length_m": r.length_m, "reason": r.reason} for r in suite.results
        ]
        target = BENCH_TARGETS[fam] * args.count / 10
        ok &= suite.successes >= target
        print(f"{fam:<12} {suite.successes}/{len(suite.results)} feasible, mean plan {suite.mean_plan_ms:.0f} ms")
    _write_json(args.out / "bench.json", {"summary": summary, "instances": per_instance})
    _write_json(args.out / "timing.json", timing)
    return 0 if ok else 1


def cmd_gate(args) -> int:
    res = gate_run(args.opening, params=_params(args))
    plan_ms = res.pop("plan_ms")
    _write_json(args.out / "gate.json", res)
    _write_json(args.out / "timing.json", {"plan_ms": plan_ms})
    print(
        f"gate {args.opening:.2f} m: feasible={res['plan']['feasible']} collision_free={res['collision_free']} "
        f"peak speed {res['peak_speed']:.2f} m/s, peak accel {res['peak_accel']:.2f} m/s^2, plan {plan_ms:.0f} ms"
    )
    return 0 if res["plan"]["feasible"] and res["collision_free"] else 1


# --- parser -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON file")
    common.add_argument("--seed", type=int, default=None, help="seed (noise, map family, or bench seed base)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--variant", action="append", choices=list(VARIANTS), help="controller variant (repeatable)")
    common.add_argument("--params", help="system parameter JSON file")

    ap = argparse.ArgumentParser(prog="slungload", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("plan", parents=[common], help="plan a trajectory and audit it")
    sub.add_parser("sim", parents=[common], help="closed-loop simulation of a scenario")
    p = sub.add_parser("ablate", parents=[common], help="controller ablation table")
    p.add_argument("--row", action="append", help="disturbance row of the figure-eight suite (repeatable)")
    p.add_argument("--v-max", type=float, default=4.0, dest="v_max")
    p = sub.add_parser("bench", parents=[common], help="planning benchmark over seeded worlds")
    p.add_argument("--family", action="append", choices=list(FAMILIES))
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p = sub.add_parser("gate", parents=[common], help="aggressive gate pass")
    p.add_argument("--opening", type=float, default=1.0)
    return ap


COMMANDS = {"plan": cmd_plan, "sim": cmd_sim, "ablate": cmd_ablate, "bench": cmd_bench, "gate": cmd_gate}


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
