"""Command-line entry point: ``transprec <subcommand> ...``.

Every file written starts with ``#`` comment lines holding the tool version,
the command line and the fully resolved flags, so it can be regenerated.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from collections.abc import Sequence
from pathlib import Path

from . import __version__
from .optimizer import (
    Objective,
    assignment_to_json,
    constraints_from_json,
    solve,
    task_from_json,
)
from .pareto import ParetoMode, select_front
from .profiles import ProfileError, ProfilePool, SynthesisParams, dump_pool, generate_synthetic, read_pool
from .runtime import BuildTimeSource, OverheadModel
from .sim import (
    METRICS_HEADER,
    Scheduler,
    StressRanges,
    Trace,
    gen_random_trace,
    metrics_csv,
    run,
    sweep_accuracy,
    sweep_fps,
    table_csv,
)


class UsageError(Exception):
    pass


def _mode(text: str) -> ParetoMode:
    try:
        return ParetoMode.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _modes(text: str) -> list[ParetoMode]:
    return [_mode(m) for m in text.split(",") if m.strip()]


def _objective(text: str) -> Objective:
    try:
        return Objective(text.strip().lower().replace("-", "_"))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"unknown objective {text!r}; expected one of: {', '.join(o.value for o in Objective)}"
        ) from None


def _schedulers(text: str) -> list[Scheduler]:
    if text.strip().lower() == "all":
        return list(Scheduler)
    try:
        return [Scheduler.parse(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _pair(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
    return float(parts[0]), float(parts[1])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transprec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"transprec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile-gen", help="write a seeded synthetic profile pool as CSV")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--tasks", type=int, default=5)
    p.add_argument("--versions", type=int, default=20)
    p.add_argument("--params", type=Path, help="JSON sidecar with synthesis parameters (flags override)")
    p.add_argument("--time-range", type=_pair)
    p.add_argument("--speedup-optimized", type=_pair)
    p.add_argument("--power-ratio-half", type=_pair)
    p.add_argument("--build-ratio-half", type=_pair)
    p.add_argument("--concavity", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("-o", "--out", type=Path, required=True)

    p = sub.add_parser("pareto", help="Pareto-filter a profile pool")
    p.add_argument("--mode", type=_mode, required=True,
                   help="one of: " + ", ".join(m.value for m in ParetoMode))
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("solve", help="solve one instance file")
    p.add_argument("--pool", type=Path, required=True)
    p.add_argument("--instance", type=Path, required=True)
    p.add_argument("--mode", type=_mode, default=ParetoMode.TIME)
    p.add_argument("--objective", type=_objective, help="overrides the instance's objective")
    p.add_argument("--keep-inactive-resident", action="store_true")
    p.add_argument("--out", type=Path)

    for name, help_text in (("simulate", "run a trace through one or more schedulers"),
                            ("sweep", "FPS or accuracy-threshold sweep")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--pool", type=Path, help="profile CSV/JSON (default: synthetic pool from --pool-seed)")
        p.add_argument("--pool-seed", type=int, default=7)
        p.add_argument("--solver-latency", type=float, default=0.13)
        p.add_argument("--fixed-build", type=float, help="use this build time instead of the profile field")
        p.add_argument("--sequential-loads", action="store_true")
        p.add_argument("--overheads", type=Path, help="JSON overhead model (flags are ignored when given)")
        p.add_argument("--out", type=Path)

    p = sub.choices["simulate"]
    p.add_argument("--scheduler", type=_schedulers, default=[Scheduler.TRANSPRECISION],
                   help="scheduler name, comma list, or 'all'")
    p.add_argument("--trace", type=Path, help="trace JSON; omit to generate a random stress trace")
    p.add_argument("--seed", type=int, default=7, help="seed of the random trace")
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--duration", type=int, default=5)
    p.add_argument("--objective", type=_objective, default=Objective.MAX_ACCURACY)
    p.add_argument("--mode", type=_mode, default=ParetoMode.TIME)
    p.add_argument("--log", type=Path, help="state-trajectory log output")
    p.add_argument("--trace-out", type=Path, help="write the trace that was simulated")

    p = sub.choices["sweep"]
    p.add_argument("--kind", choices=("fps", "accuracy"), required=True)
    p.add_argument("--schedulers", type=_schedulers, default=list(Scheduler))
    p.add_argument("--fps-min", type=int, default=1)
    p.add_argument("--fps-max", type=int, default=30)
    p.add_argument("--duration", type=int, default=5)
    p.add_argument("--ramp", action="store_true", help="fps levels as one trace, transitions included")
    p.add_argument("--objective", type=_objective, default=Objective.MIN_MEMORY)
    p.add_argument("--modes", type=_modes, default=None, help="comma list of Pareto modes")
    p.add_argument("--fps", type=int, default=2, help="per-task demand in the accuracy sweep")
    p.add_argument("--th-min", type=float, default=0.70)
    p.add_argument("--th-max", type=float, default=1.00)
    p.add_argument("--th-step", type=float, default=0.01)

    p = sub.add_parser("report", help="summarize metrics CSV files per scheduler")
    p.add_argument("metrics", type=Path, nargs="+")
    p.add_argument("--out", type=Path)
    return parser


def _resolved(args: argparse.Namespace) -> str:
    def plain(v):
        if isinstance(v, Path):
            return str(v)
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        if hasattr(v, "value"):
            return v.value
        return v
    return json.dumps({k: plain(v) for k, v in sorted(vars(args).items())}, sort_keys=True)


def _header(args: argparse.Namespace, argv: Sequence[str]) -> list[str]:
    return [f"transprec {__version__}", "cmd: transprec " + " ".join(argv), "config: " + _resolved(args)]


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")


def _load_pool(args) -> ProfilePool:
    if args.pool is not None:
        return read_pool(args.pool)
    return generate_synthetic(SynthesisParams(seed=args.pool_seed))


def _overheads(args) -> OverheadModel:
    if args.overheads is not None:
        data = json.loads(args.overheads.read_text(encoding="utf-8"))
        return OverheadModel(**data)
    if args.fixed_build is not None:
        return OverheadModel(args.solver_latency, BuildTimeSource.FIXED, args.fixed_build, args.sequential_loads)
    return OverheadModel(args.solver_latency, sequential_loads=args.sequential_loads)


def cmd_profile_gen(args, argv) -> None:
    data = json.loads(args.params.read_text(encoding="utf-8")) if args.params else {}
    data.update(seed=args.seed, tasks=args.tasks, versions_per_task=args.versions)
    for flag, key in (("time_range", "time_range"), ("speedup_optimized", "speedup_optimized"),
                      ("power_ratio_half", "power_ratio_half"), ("build_ratio_half", "build_ratio_half"),
                      ("concavity", "curve_concavity"), ("noise", "noise")):
        if getattr(args, flag) is not None:
            data[key] = getattr(args, flag)
    params = SynthesisParams.from_dict(data)
    header = _header(args, argv) + ["synthesis: " + json.dumps(params.to_dict(), sort_keys=True)]
    _emit(dump_pool(generate_synthetic(params).configs, header_lines=header), args.out)


def cmd_pareto(args, argv) -> None:
    front = select_front(read_pool(args.inp), args.mode)
    configs = [c for cs in front.members.values() for c in cs]
    _emit(dump_pool(configs, extra={"mode": args.mode.value}, header_lines=_header(args, argv)), args.out)


def cmd_solve(args, argv) -> None:
    pool = read_pool(args.pool)
    doc = json.loads(args.instance.read_text(encoding="utf-8"))
    tasks = [task_from_json(t) for t in doc["tasks"]]
    for t in tasks:
        if t.task_id not in pool:
            raise ValueError(f"unknown task id {t.task_id!r} in instance")
    c = constraints_from_json(doc.get("constraints"))
    obj = args.objective or Objective(doc.get("objective", "max_accuracy"))
    a = solve(tasks, select_front(pool, args.mode), c, obj, args.keep_inactive_resident)
    out = assignment_to_json(a, tasks)
    out["mode"] = args.mode.value
    _emit(json.dumps(out, sort_keys=True) + "\n", args.out)


def cmd_simulate(args, argv) -> None:
    pool = _load_pool(args)
    if args.trace is not None:
        trace = Trace.from_json(args.trace.read_text(encoding="utf-8"))
    else:
        trace = gen_random_trace(args.seed, pool, StressRanges(), args.iterations, args.duration,
                                 args.objective, args.mode)
    if args.trace_out is not None:
        args.trace_out.write_text(trace.to_json(), encoding="utf-8")
    overheads = _overheads(args)
    records, log = [], []
    for s in args.scheduler:
        res = run(pool, trace, s, overheads)
        records.extend(res.records)
        log.extend(f"{s.value}\t{line}" for line in res.log)
    header = _header(args, argv)
    _emit(metrics_csv(records, header), args.out)
    if args.log is not None:
        args.log.write_text("".join(f"# {h}\n" for h in header) + "\n".join(log) + "\n", encoding="utf-8")


def cmd_sweep(args, argv) -> None:
    pool = _load_pool(args)
    if args.kind == "fps":
        if not 1 <= args.fps_min <= args.fps_max <= 30:
            raise UsageError("fps range must satisfy 1 <= fps-min <= fps-max <= 30")
        rows = sweep_fps(pool, range(args.fps_min, args.fps_max + 1), args.schedulers,
                         overheads=_overheads(args), duration=args.duration, ramp=args.ramp)
    else:
        if args.objective is Objective.MAX_ACCURACY:
            raise UsageError("accuracy sweep optimizes min_memory or min_energy")
        modes = args.modes
        if modes is None:
            modes = ([ParetoMode.TIME, ParetoMode.TIME_MEMORY, ParetoMode.MEMORY_ONLY]
                     if args.objective is Objective.MIN_MEMORY
                     else [ParetoMode.TIME, ParetoMode.TIME_ENERGY, ParetoMode.ENERGY_ONLY])
        if args.th_step <= 0 or args.th_min > args.th_max:
            raise UsageError("threshold range must be non-empty with a positive step")
        n = int(round((args.th_max - args.th_min) / args.th_step))
        thresholds = [round(args.th_min + i * args.th_step, 10) for i in range(n + 1)]
        rows = sweep_accuracy(pool, thresholds, args.objective, modes, fps=args.fps)
    _emit(table_csv(rows, _header(args, argv)), args.out)


def cmd_report(args, argv) -> None:
    by_sched: dict[str, list[dict[str, str]]] = {}
    for path in args.metrics:
        lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln and not ln.startswith("#")]
        reader = csv.DictReader(lines)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise ValueError(f"{path}: not a metrics file")
        for row in reader:
            by_sched.setdefault(row["scheduler"], []).append(row)
    rows = []
    for name, recs in by_sched.items():
        n = len(recs)
        mean = lambda k: sum(float(r[k]) for r in recs) / n  # noqa: E731
        rows.append({
            "scheduler": name,
            "seconds": n,
            "mean_achieved_fps_pct": mean("achieved_fps_pct"),
            "mean_accuracy": mean("avg_accuracy"),
            "mean_energy_j": mean("energy_j"),
            "mean_memory_mb": mean("memory_mb"),
            "max_peak_power_w": max(float(r["peak_power_w"]) for r in recs),
            "mean_time_used_s": mean("time_used_s"),
            "overhead_frames": sum(int(r["overhead_frames"]) for r in recs),
        })
    _emit(table_csv(rows, _header(args, argv)), args.out)


COMMANDS = {
    "profile-gen": cmd_profile_gen,
    "pareto": cmd_pareto,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        COMMANDS[args.command](args, argv)
    except UsageError as exc:
        parser.error(str(exc))
    except (ProfileError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"transprec {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
