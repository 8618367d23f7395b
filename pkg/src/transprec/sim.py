"""Experiment driver: traces, per-second accounting, sweeps and random stress traces."""

from __future__ import annotations

import csv
import io
import json
import random
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .optimizer import (
    ConstraintSet,
    Objective,
    TaskSpec,
    constraints_from_json,
    constraints_to_json,
    heuristic_fair_fps,
    heuristic_fair_time,
    heuristic_greedy,
    solve,
    solve_exact,
    task_from_json,
    task_to_json,
)
from .pareto import ParetoMode, select_front
from .profiles import ProfilePool
from .runtime import (
    ConstraintChange,
    LoadComplete,
    OverheadModel,
    Phase,
    Runtime,
    SecondPlan,
    SecondTick,
    TaskSecond,
    event_name,
    format_log_line,
    transition_report,
)

METRICS_HEADER = (
    "second", "scheduler", "achieved_fps_pct", "avg_accuracy", "energy_j",
    "memory_mb", "peak_power_w", "time_used_s", "overhead_frames",
)


class Scheduler(str, Enum):
    TRANSPRECISION = "transprecision"
    FAIR_FPS = "fair-fps"
    FAIR_TIME = "fair-time"
    GREEDY = "greedy"

    @classmethod
    def parse(cls, text: str) -> Scheduler:
        key = text.strip().lower().replace("_", "-")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown scheduler {text!r}; expected one of: "
                             + ", ".join(s.value for s in cls)) from None


HEURISTICS = {
    Scheduler.FAIR_FPS: heuristic_fair_fps,
    Scheduler.FAIR_TIME: heuristic_fair_time,
    Scheduler.GREEDY: heuristic_greedy,
}


# --------------------------------------------------------------------- trace


@dataclass(frozen=True)
class Iteration:
    duration: int
    tasks: tuple[TaskSpec, ...]
    constraints: ConstraintSet = ConstraintSet()
    objective: Objective = Objective.MAX_ACCURACY
    mode: ParetoMode = ParetoMode.TIME

    def __post_init__(self):
        if int(self.duration) != self.duration or self.duration < 1:
            raise ValueError(f"iteration duration must be an integer >= 1, got {self.duration!r}")
        object.__setattr__(self, "tasks", tuple(self.tasks))

    def change(self) -> ConstraintChange:
        return ConstraintChange(self.tasks, self.constraints, self.objective, self.mode)


@dataclass(frozen=True)
class Trace:
    iterations: tuple[Iteration, ...]

    def __post_init__(self):
        object.__setattr__(self, "iterations", tuple(self.iterations))

    @property
    def seconds(self) -> int:
        return sum(it.duration for it in self.iterations)

    def to_json(self) -> str:
        doc = {"iterations": [
            {"duration": it.duration, "tasks": [task_to_json(t) for t in it.tasks],
             "constraints": constraints_to_json(it.constraints),
             "objective": it.objective.value, "mode": it.mode.value}
            for it in self.iterations
        ]}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> Trace:
        doc = json.loads(text)
        return cls(tuple(
            Iteration(
                duration=int(rec.get("duration", 5)),
                tasks=tuple(task_from_json(t) for t in rec["tasks"]),
                constraints=constraints_from_json(rec.get("constraints")),
                objective=Objective(rec.get("objective", "max_accuracy")),
                mode=ParetoMode.parse(rec.get("mode", "time")),
            )
            for rec in doc["iterations"]
        ))


# ------------------------------------------------------------------- metrics


@dataclass(frozen=True)
class SecondRecord:
    second: int
    iteration: int
    scheduler: Scheduler
    phase: Phase
    tasks: tuple[TaskSecond, ...]
    memory_mb: float

    @property
    def processed(self) -> int:
        return sum(t.frames for t in self.tasks)

    @property
    def demanded(self) -> int:
        return sum(t.demanded for t in self.tasks)

    @property
    def granted(self) -> int:
        return sum(t.granted for t in self.tasks)

    @property
    def achieved_fps_pct(self) -> float:
        return 100.0 * self.processed / self.demanded if self.demanded else 100.0

    @property
    def avg_accuracy(self) -> float:
        frames = self.processed
        if not frames:
            return 0.0
        return sum(t.frames * t.config.accuracy for t in self.tasks if t.frames) / frames

    @property
    def energy_j(self) -> float:
        return sum(t.config.power * t.config.time_per_frame * t.frames for t in self.tasks if t.frames)

    @property
    def peak_power_w(self) -> float:
        return max((t.config.power for t in self.tasks if t.frames), default=0.0)

    @property
    def time_used_s(self) -> float:
        total = 0.0
        for t in self.tasks:
            total += t.alloc
        return total

    @property
    def overhead_frames(self) -> int:
        return sum(t.overhead_frames for t in self.tasks)

    def csv_row(self) -> list[str]:
        return [str(self.second), self.scheduler.value, f"{self.achieved_fps_pct:.6f}",
                f"{self.avg_accuracy:.6f}", f"{self.energy_j:.6f}", f"{self.memory_mb:.6f}",
                f"{self.peak_power_w:.6f}", f"{self.time_used_s:.6f}", str(self.overhead_frames)]


@dataclass(frozen=True)
class Metrics:
    """Aggregates over a set of seconds."""

    processed: int
    demanded: int
    granted: int
    avg_accuracy: float
    energy_j_per_s: float
    total_memory_mb: float
    peak_power_w: float
    time_used_s: float
    overhead_frames_lost: int

    @property
    def achieved_fps_pct(self) -> float:
        return 100.0 * self.processed / self.demanded if self.demanded else 100.0

    @property
    def achieved_vs_granted_pct(self) -> float:
        return 100.0 * self.processed / self.granted if self.granted else 100.0

    @classmethod
    def aggregate(cls, records: Sequence[SecondRecord]) -> Metrics:
        n = max(1, len(records))
        processed = sum(r.processed for r in records)
        weighted = sum(r.avg_accuracy * r.processed for r in records)
        return cls(
            processed=processed,
            demanded=sum(r.demanded for r in records),
            granted=sum(r.granted for r in records),
            avg_accuracy=weighted / processed if processed else 0.0,
            energy_j_per_s=sum(r.energy_j for r in records) / n,
            total_memory_mb=sum(r.memory_mb for r in records) / n,
            peak_power_w=max((r.peak_power_w for r in records), default=0.0),
            time_used_s=sum(r.time_used_s for r in records) / n,
            overhead_frames_lost=sum(r.overhead_frames for r in records),
        )


@dataclass
class SimResult:
    scheduler: Scheduler
    records: list[SecondRecord] = field(default_factory=list)
    log: list[str] = field(default_factory=list)
    # (iteration index, constraints honoured, tasks, assignment) for every solve
    assignments: list = field(default_factory=list)
    history: list = field(default_factory=list)
    # (iteration index, target, previous current) for each transition started
    transitions: list = field(default_factory=list)

    @property
    def metrics(self) -> Metrics:
        return Metrics.aggregate(self.records)

    def iteration_metrics(self) -> dict[int, Metrics]:
        groups: dict[int, list[SecondRecord]] = {}
        for r in self.records:
            groups.setdefault(r.iteration, []).append(r)
        return {i: Metrics.aggregate(rs) for i, rs in groups.items()}

    def metrics_csv(self, header_lines: Iterable[str] = ()) -> str:
        return metrics_csv(self.records, header_lines)

    def transition_stats(self):
        return transition_report(self.history)


def metrics_csv(records: Iterable[SecondRecord], header_lines: Iterable[str] = ()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in records:
        w.writerow(r.csv_row())
    return buf.getvalue()


# ----------------------------------------------------------------------- run


def _check_ids(pool: ProfilePool, trace: Trace) -> None:
    for i, it in enumerate(trace.iterations):
        for t in it.tasks:
            if t.task_id not in pool:
                raise ValueError(f"iteration {i}: unknown task id {t.task_id!r}")


def run(
    pool: ProfilePool,
    trace: Trace,
    scheduler: Scheduler,
    overheads: OverheadModel = OverheadModel(),
    keep_inactive_resident: bool = False,
) -> SimResult:
    """Simulate the trace second by second under one scheduler."""
    _check_ids(pool, trace)
    scheduler = Scheduler(scheduler)
    if scheduler is Scheduler.TRANSPRECISION:
        return _run_transprecision(pool, trace, overheads, keep_inactive_resident)
    return _run_heuristic(pool, trace, scheduler)


def _run_heuristic(pool: ProfilePool, trace: Trace, scheduler: Scheduler) -> SimResult:
    result = SimResult(scheduler)
    heuristic = HEURISTICS[scheduler]
    second = 0
    for i, it in enumerate(trace.iterations):
        # heuristics ignore everything but the time budget and per-task demand
        limits = it.constraints.time_only()
        plain = tuple(TaskSpec(t.task_id, t.required_fps, priority=t.priority) for t in it.tasks)
        a = heuristic(plain, pool, limits)
        result.assignments.append((i, limits, plain, a))
        served = " ".join(f"{e.task_id}:{e.config.version_id}@{e.granted_fps}" for e in a.entries)
        rows = tuple(
            TaskSecond(e.task_id, e.config, e.granted_fps, e.required_fps, e.granted_fps, e.time_used)
            for e in a.entries
        )
        for _ in range(it.duration):
            result.records.append(SecondRecord(second, i, scheduler, Phase.STABLE, rows, a.memory))
            result.log.append(f"{float(second):.3f}\tstable\titeration:{i}\t{served}")
            second += 1
    return result


def _run_transprecision(pool, trace, overheads, keep_inactive_resident) -> SimResult:
    result = SimResult(Scheduler.TRANSPRECISION)
    rt = Runtime(pool, overheads, keep_inactive_resident)
    state = None
    second = 0

    def step(event):
        nonlocal state
        state, _ = rt.handle_event(state, event)
        result.history.append((event, state))
        result.log.append(format_log_line(state, event_name(event)))

    for i, it in enumerate(trace.iterations):
        change = it.change()
        if state is None:
            state = rt.initial_state(change)
            result.log.append(format_log_line(state, "init"))
            result.assignments.append((i, it.constraints, it.tasks, state.current))
        else:
            previous = state.current
            step(change)
            result.assignments.append((i, it.constraints, it.tasks, state.target))
            result.transitions.append((i, state.target, previous))
        for _ in range(it.duration):
            plan: SecondPlan = rt.plan_second(state)
            result.records.append(
                SecondRecord(second, i, Scheduler.TRANSPRECISION, state.phase, plan.tasks, plan.resident_memory)
            )
            completions = plan.completions()
            step(SecondTick(plan.build_progress()))
            for at, task_id in completions:
                if state.pending(task_id) is not None:
                    step(LoadComplete(task_id, at))
            second += 1
    return result


# -------------------------------------------------------------------- sweeps


def _uniform_tasks(pool: ProfilePool, fps: int, threshold: float = 0.0) -> tuple[TaskSpec, ...]:
    return tuple(TaskSpec(t, fps, accuracy_threshold=threshold, priority=i) for i, t in enumerate(pool.task_ids))


def full_demand_feasible(pool: ProfilePool, tasks: Sequence[TaskSpec], c: ConstraintSet,
                         mode: ParetoMode = ParetoMode.TIME) -> bool:
    return solve_exact(tasks, select_front(pool, mode), c) is not None


def sweep_fps(
    pool: ProfilePool,
    fps_values: Iterable[int] = range(1, 31),
    schedulers: Sequence[Scheduler] = tuple(Scheduler),
    constraints: ConstraintSet = ConstraintSet(),
    overheads: OverheadModel = OverheadModel(),
    duration: int = 5,
    ramp: bool = False,
) -> list[dict[str, object]]:
    """One row per (fps, scheduler), every task demanding the same fps.

    By default each fps level is an independent run starting from a loaded,
    stable configuration. With ``ramp`` the levels form one trace, so
    transitions and their overheads are included.
    """
    fps_values = list(fps_values)
    feasible = {f: full_demand_feasible(pool, _uniform_tasks(pool, f), constraints) for f in fps_values}
    rows = []
    runs = {}
    for s in schedulers:
        if ramp:
            trace = Trace(tuple(Iteration(duration, _uniform_tasks(pool, f), constraints) for f in fps_values))
            res = run(pool, trace, s, overheads)
            runs[s] = {f: (res, i) for i, f in enumerate(fps_values)}
        else:
            runs[s] = {}
            for f in fps_values:
                res = run(pool, Trace((Iteration(duration, _uniform_tasks(pool, f), constraints),)), s, overheads)
                runs[s][f] = (res, 0)
    for f in fps_values:
        for s in schedulers:
            res, i = runs[s][f]
            recs = [r for r in res.records if r.iteration == i]
            m = Metrics.aggregate(recs)
            row = {
                "fps": f,
                "scheduler": Scheduler(s).value,
                "feasible": int(feasible[f]),
                "achieved_fps_pct": m.achieved_fps_pct,
                "avg_accuracy": m.avg_accuracy,
                "time_total_s": m.time_used_s,
            }
            for t in pool.task_ids:
                row[f"time_{t}_s"] = sum(ts.alloc for r in recs for ts in r.tasks if ts.task_id == t) / len(recs)
            rows.append(row)
    return rows


def sweep_accuracy(
    pool: ProfilePool,
    thresholds: Iterable[float],
    objective: Objective,
    modes: Sequence[ParetoMode],
    fps: int = 2,
    constraints: ConstraintSet = ConstraintSet(),
) -> list[dict[str, object]]:
    """Optimize memory or energy against a common minimum accuracy, per Pareto mode.

    The default demand of 2 FPS per task keeps every threshold up to 1.0
    servable at full demand on the default pool, so modes are compared at
    equal load rather than across different degradations.
    """
    rows = []
    fronts = {m: select_front(pool, m) for m in modes}
    for th in thresholds:
        tasks = _uniform_tasks(pool, fps, th)
        for m in modes:
            a = solve(tasks, fronts[m], constraints, objective)
            n = len(a.entries)
            rows.append({
                "threshold": th,
                "mode": m.value,
                "objective": objective.value,
                "avg_accuracy": a.accuracy_sum / n if n else 0.0,
                "memory_mb": a.memory,
                "energy_j": a.energy,
                "time_s": a.time_used,
                "degraded": int(a.degraded),
                "chosen": " ".join(e.config.version_id for e in a.entries),
            })
    return rows


def table_csv(rows: Sequence[dict[str, object]], header_lines: Iterable[str] = ()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    if not rows:
        return buf.getvalue()
    w = csv.writer(buf, lineterminator="\n")
    keys = list(rows[0])
    w.writerow(keys)
    for row in rows:
        w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in (row[k] for k in keys)])
    return buf.getvalue()


# ------------------------------------------------------------- random traces


@dataclass(frozen=True)
class StressRanges:
    fps: tuple[int, int] = (1, 30)
    accuracy_threshold: tuple[float, float] = (0.7, 1.0)
    # fractions of the pool-derived maxima (see gen_random_trace)
    memory_frac: tuple[float, float] = (0.4, 0.9)
    energy_frac: tuple[float, float] = (0.4, 0.9)
    peak_power_frac: tuple[float, float] = (0.5, 1.0)
    time_budget: float = 0.95


def gen_random_trace(
    seed: int,
    pool: ProfilePool,
    ranges: StressRanges = StressRanges(),
    iterations: int = 20,
    duration: int = 5,
    objective: Objective = Objective.MAX_ACCURACY,
    mode: ParetoMode = ParetoMode.TIME,
) -> Trace:
    """Seeded stress trace: per iteration, fresh FPS, thresholds and budgets.

    Memory budgets are drawn as a fraction of the summed per-task maximum
    memory, energy budgets as a fraction of the summed per-task maximum energy
    at the drawn FPS, and peak power as a fraction of the pool's largest power.
    """
    rng = random.Random(seed)
    tasks = pool.task_ids
    max_mem = sum(max(c.memory for c in pool.versions(t)) for t in tasks)
    max_energy = {t: max(c.energy_per_frame for c in pool.versions(t)) for t in tasks}
    max_power = max(c.power for c in pool.configs)
    its = []
    for _ in range(iterations):
        specs = []
        for p, t in enumerate(tasks):
            f = rng.randint(*ranges.fps)
            th = rng.uniform(*ranges.accuracy_threshold)
            specs.append(TaskSpec(t, f, accuracy_threshold=th, priority=p))
        energy_cap = sum(max_energy[s.task_id] * s.required_fps for s in specs)
        c = ConstraintSet(
            time_budget=ranges.time_budget,
            peak_power=max_power * rng.uniform(*ranges.peak_power_frac),
            energy_budget=energy_cap * rng.uniform(*ranges.energy_frac),
            memory_budget=max_mem * rng.uniform(*ranges.memory_frac),
        )
        its.append(Iteration(duration, tuple(specs), c, objective, mode))
    return Trace(tuple(its))
