"""Configuration selection: one configuration and an integer FPS per task.

The exact solver is a depth-first branch-and-bound over the multiple-choice
structure (one version per task); ``brute_force_oracle`` enumerates every
combination and is the reference it is tested against.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Protocol

from .profiles import ConfigProfile, reference_config

MAX_FPS = 30
# absolute slack on every budget comparison; keeps hand-computed edges like 0.05 * 19 == 0.95 feasible
EPS = 1e-9
ORACLE_LIMIT = 10**7


class Versions(Protocol):
    def versions(self, task_id: str) -> tuple[ConfigProfile, ...]: ...


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    required_fps: int
    accuracy_threshold: float = 0.0
    min_time_alloc: float = 0.0
    priority: int = 0

    def __post_init__(self):
        if isinstance(self.required_fps, bool) or int(self.required_fps) != self.required_fps:
            raise ValueError(f"{self.task_id}: required_fps must be an integer")
        object.__setattr__(self, "required_fps", int(self.required_fps))
        if not 0 <= self.required_fps <= MAX_FPS:
            raise ValueError(f"{self.task_id}: required_fps={self.required_fps} outside [0, {MAX_FPS}]")
        if not 0.0 <= self.accuracy_threshold <= 1.0:
            raise ValueError(f"{self.task_id}: accuracy_threshold outside [0, 1]")
        if not 0.0 <= self.min_time_alloc <= 1.0:
            raise ValueError(f"{self.task_id}: min_time_alloc outside [0, 1]")


@dataclass(frozen=True)
class ConstraintSet:
    time_budget: float = 0.95
    peak_power: Optional[float] = None
    energy_budget: Optional[float] = None
    memory_budget: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.time_budget <= 1.0:
            raise ValueError(f"time_budget={self.time_budget} outside (0, 1]")
        for name in ("peak_power", "energy_budget", "memory_budget"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive when set")

    def time_only(self) -> ConstraintSet:
        return ConstraintSet(time_budget=self.time_budget)


class Objective(str, Enum):
    MAX_ACCURACY = "max_accuracy"
    MIN_MEMORY = "min_memory"
    MIN_ENERGY = "min_energy"


@dataclass(frozen=True)
class TaskChoice:
    task_id: str
    config: ConfigProfile
    granted_fps: int
    required_fps: int

    @property
    def time_used(self) -> float:
        return self.config.time_per_frame * self.granted_fps

    @property
    def energy(self) -> float:
        return self.config.power * self.config.time_per_frame * self.granted_fps


@dataclass(frozen=True)
class Assignment:
    entries: tuple[TaskChoice, ...]
    objective: Objective = Objective.MAX_ACCURACY
    degraded: bool = False
    violations: tuple[str, ...] = ()
    by_task: dict[str, TaskChoice] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "by_task", {e.task_id: e for e in self.entries})
        for e in self.entries:
            if e.granted_fps > e.required_fps or e.granted_fps < 0:
                raise ValueError(f"{e.task_id}: granted fps {e.granted_fps} exceeds demand {e.required_fps}")
            if not self.degraded and e.granted_fps != e.required_fps:
                raise ValueError(f"{e.task_id}: non-degraded assignment must grant full demand")

    @property
    def objective_value(self) -> float:
        return objective_value(self.objective, self.entries)

    @property
    def accuracy_sum(self) -> float:
        return _sum(e.config.accuracy for e in self.entries)

    @property
    def time_used(self) -> float:
        return _sum(e.time_used for e in self.entries)

    @property
    def energy(self) -> float:
        return _sum(e.energy for e in self.entries)

    @property
    def memory(self) -> float:
        return _sum(e.config.memory for e in self.entries)

    @property
    def peak_power(self) -> float:
        return max((e.config.power for e in self.entries if e.granted_fps > 0), default=0.0)

    @property
    def total_frames(self) -> int:
        return sum(e.granted_fps for e in self.entries)

    def config(self, task_id: str) -> Optional[ConfigProfile]:
        e = self.by_task.get(task_id)
        return e.config if e else None

    def fps(self, task_id: str) -> int:
        e = self.by_task.get(task_id)
        return e.granted_fps if e else 0

    def choice(self) -> dict[str, ConfigProfile]:
        return {e.task_id: e.config for e in self.entries}

    def granted(self) -> dict[str, int]:
        return {e.task_id: e.granted_fps for e in self.entries}


def _sum(values: Iterable[float]) -> float:
    # left-to-right accumulation; every total in this package goes through here
    total = 0.0
    for v in values:
        total += v
    return total


def objective_value(obj: Objective, entries: Iterable[TaskChoice]) -> float:
    if obj is Objective.MAX_ACCURACY:
        return _sum(e.config.accuracy for e in entries)
    if obj is Objective.MIN_MEMORY:
        return _sum(e.config.memory for e in entries)
    return _sum(e.energy for e in entries)


# ------------------------------------------------------------ feasibility


def task_clauses(spec: TaskSpec, config: ConfigProfile, fps: int, c: ConstraintSet) -> list[str]:
    """Per-task constraint clauses violated by running ``config`` at ``fps``."""
    failed = []
    if config.accuracy < spec.accuracy_threshold:
        failed.append(f"accuracy[{spec.task_id}]")
    if fps > 0:
        if config.time_per_frame * fps < spec.min_time_alloc - EPS:
            failed.append(f"min_time_alloc[{spec.task_id}]")
        if c.peak_power is not None and config.power > c.peak_power + EPS:
            failed.append(f"peak_power[{spec.task_id}]")
    return failed


def check_feasible(
    tasks: Sequence[TaskSpec],
    choice: Mapping[str, ConfigProfile],
    fps: Mapping[str, int],
    c: ConstraintSet,
) -> tuple[bool, list[str]]:
    """Evaluate every constraint clause; returns ``(ok, violated clause names)``.

    Tasks absent from ``choice`` are unloaded and must have zero FPS.
    """
    violations: list[str] = []
    time_total = energy_total = memory_total = 0.0
    for spec in tasks:
        f = fps.get(spec.task_id, 0)
        config = choice.get(spec.task_id)
        if config is None:
            if f > 0:
                raise ValueError(f"no configuration chosen for active task {spec.task_id!r}")
            continue
        violations.extend(task_clauses(spec, config, f, c))
        time_total += config.time_per_frame * f
        energy_total += config.power * config.time_per_frame * f
        memory_total += config.memory
    if time_total > c.time_budget + EPS:
        violations.append("time_budget")
    if c.energy_budget is not None and energy_total > c.energy_budget + EPS:
        violations.append("energy_budget")
    if c.memory_budget is not None and memory_total > c.memory_budget + EPS:
        violations.append("memory_budget")
    return not violations, violations


def assignment_feasible(tasks: Sequence[TaskSpec], a: Assignment, c: ConstraintSet) -> tuple[bool, list[str]]:
    return check_feasible(tasks, a.choice(), a.granted(), c)


# ------------------------------------------------------------ exact solve


def _participants(tasks: Sequence[TaskSpec], keep_inactive_resident: bool) -> list[TaskSpec]:
    return [t for t in tasks if t.required_fps > 0 or keep_inactive_resident]


def _rank_key(obj: Objective, entries: Sequence[TaskChoice]) -> tuple:
    """Smaller is better: objective, then accuracy (secondary), time, version ids."""
    value = objective_value(obj, entries)
    primary = -value if obj is Objective.MAX_ACCURACY else value
    secondary = 0.0 if obj is Objective.MAX_ACCURACY else -_sum(e.config.accuracy for e in entries)
    time_used = _sum(e.time_used for e in entries)
    return (primary, secondary, time_used, tuple(e.config.version_id for e in entries))


def _contribution(obj: Objective, config: ConfigProfile, fps: int) -> float:
    """Per-task term of the minimized primary objective."""
    if obj is Objective.MAX_ACCURACY:
        return -config.accuracy
    if obj is Objective.MIN_MEMORY:
        return config.memory
    return config.power * config.time_per_frame * fps


def solve_exact(
    tasks: Sequence[TaskSpec],
    front: Versions,
    c: ConstraintSet,
    obj: Objective = Objective.MAX_ACCURACY,
    keep_inactive_resident: bool = False,
) -> Optional[Assignment]:
    """Best full-demand assignment, or None when no combination is feasible."""
    active = _participants(tasks, keep_inactive_resident)
    if not active:
        return Assignment((), objective=obj)

    # candidate lists: individually feasible configs, best contribution first
    cands: list[list[ConfigProfile]] = []
    for spec in active:
        f = spec.required_fps
        ok = []
        for cfg in front.versions(spec.task_id):
            if task_clauses(spec, cfg, f, c):
                continue
            if cfg.time_per_frame * f > c.time_budget + EPS:
                continue
            if c.energy_budget is not None and cfg.power * cfg.time_per_frame * f > c.energy_budget + EPS:
                continue
            if c.memory_budget is not None and cfg.memory > c.memory_budget + EPS:
                continue
            ok.append(cfg)
        if not ok:
            return None
        ok.sort(key=lambda cfg: (_contribution(obj, cfg, f), cfg.time_per_frame, cfg.version_id))
        cands.append(ok)

    n = len(active)
    fps = [s.required_fps for s in active]
    # suffix minima used for pruning; index i covers tasks i..n-1
    def suffix(values: list[float]) -> list[float]:
        out = [0.0] * (n + 1)
        for i in range(n - 1, -1, -1):
            out[i] = out[i + 1] + values[i]
        return out

    rest_time = suffix([min(x.time_per_frame * fps[i] for x in cands[i]) for i in range(n)])
    rest_energy = suffix([min(x.power * x.time_per_frame * fps[i] for x in cands[i]) for i in range(n)])
    rest_memory = suffix([min(x.memory for x in cands[i]) for i in range(n)])
    rest_bound = suffix([_contribution(obj, cands[i][0], fps[i]) for i in range(n)])
    slack = 2 * EPS

    best_key: Optional[tuple] = None
    best_entries: Optional[list[TaskChoice]] = None
    chosen: list[TaskChoice] = []

    def visit(i: int, t_sum: float, e_sum: float, m_sum: float, score: float) -> None:
        nonlocal best_key, best_entries
        if t_sum + rest_time[i] > c.time_budget + slack:
            return
        if c.energy_budget is not None and e_sum + rest_energy[i] > c.energy_budget + slack:
            return
        if c.memory_budget is not None and m_sum + rest_memory[i] > c.memory_budget + slack:
            return
        if best_key is not None:
            bound = score + rest_bound[i]
            if bound > best_key[0] + 1e-9 * max(1.0, abs(best_key[0])):
                return
        if i == n:
            ok, _ = check_feasible(
                active, {e.task_id: e.config for e in chosen}, {e.task_id: e.granted_fps for e in chosen}, c
            )
            if not ok:
                return
            key = _rank_key(obj, chosen)
            if best_key is None or key < best_key:
                best_key, best_entries = key, list(chosen)
            return
        spec, f = active[i], fps[i]
        for cfg in cands[i]:
            chosen.append(TaskChoice(spec.task_id, cfg, f, f))
            visit(
                i + 1,
                t_sum + cfg.time_per_frame * f,
                e_sum + cfg.power * cfg.time_per_frame * f,
                m_sum + cfg.memory,
                score + _contribution(obj, cfg, f),
            )
            chosen.pop()

    visit(0, 0.0, 0.0, 0.0, 0.0)
    if best_entries is None:
        return None
    return Assignment(tuple(best_entries), objective=obj)


def brute_force_oracle(
    tasks: Sequence[TaskSpec],
    front: Versions,
    c: ConstraintSet,
    obj: Objective = Objective.MAX_ACCURACY,
    keep_inactive_resident: bool = False,
) -> Optional[Assignment]:
    """Enumerate every combination; reference for ``solve_exact``."""
    active = _participants(tasks, keep_inactive_resident)
    pools = [front.versions(s.task_id) for s in active]
    if math.prod(len(p) for p in pools) > ORACLE_LIMIT:
        raise ValueError(f"instance too large for enumeration (> {ORACLE_LIMIT} combinations)")
    best_key = best = None
    for combo in itertools.product(*pools):
        choice = {s.task_id: cfg for s, cfg in zip(active, combo)}
        fps = {s.task_id: s.required_fps for s in active}
        if not check_feasible(active, choice, fps, c)[0]:
            continue
        entries = [TaskChoice(s.task_id, cfg, s.required_fps, s.required_fps) for s, cfg in zip(active, combo)]
        key = _rank_key(obj, entries)
        if best_key is None or key < best_key:
            best_key, best = key, entries
    if best is None:
        return None
    return Assignment(tuple(best), objective=obj)


# ------------------------------------------------------------ degradation


def degrade_fps(
    tasks: Sequence[TaskSpec],
    front: Versions,
    c: ConstraintSet,
    obj: Objective = Objective.MAX_ACCURACY,
    keep_inactive_resident: bool = False,
    solver: Callable[..., Optional[Assignment]] = solve_exact,
) -> Assignment:
    """Lower FPS one frame at a time, lowest priority first, until a solve succeeds.

    Equal priorities take turns in task order. A task whose fastest admissible
    config would drop below its minimum time allocation is not reduced further;
    once every task is stuck the Fair Time heuristic is used instead.
    """
    fps = {t.task_id: t.required_fps for t in tasks}
    position = {t.task_id: i for i, t in enumerate(tasks)}
    fastest = {}
    for t in tasks:
        admissible = [x.time_per_frame for x in front.versions(t.task_id) if x.accuracy >= t.accuracy_threshold]
        fastest[t.task_id] = min(admissible, default=math.inf)
    last_turn: dict[int, int] = {}

    def blocked(t: TaskSpec) -> bool:
        f = fps[t.task_id]
        if f == 0:
            return True
        if t.min_time_alloc <= 0:
            return False
        return fastest[t.task_id] * (f - 1) < t.min_time_alloc - EPS

    while True:
        trial = [replace(t, required_fps=fps[t.task_id]) for t in tasks]
        solved = solver(trial, front, c, obj, keep_inactive_resident)
        if solved is not None:
            demand = {t.task_id: t.required_fps for t in tasks}
            entries = tuple(
                replace(e, required_fps=demand[e.task_id]) for e in solved.entries
            )
            return Assignment(entries, objective=obj, degraded=True)
        movable = [t for t in tasks if not blocked(t)]
        if not movable:
            break
        lowest = max(t.priority for t in movable)
        group = [position[t.task_id] for t in movable if t.priority == lowest]
        prev = last_turn.get(lowest, -1)
        pick = next((i for i in group if i > prev), group[0])
        last_turn[lowest] = pick
        fps[tasks[pick].task_id] -= 1

    fallback = heuristic_fair_time(tasks, front, c)
    _, violations = assignment_feasible(tasks, fallback, c)
    return Assignment(fallback.entries, objective=obj, degraded=True, violations=tuple(violations))


def solve(
    tasks: Sequence[TaskSpec],
    front: Versions,
    c: ConstraintSet,
    obj: Objective = Objective.MAX_ACCURACY,
    keep_inactive_resident: bool = False,
) -> Assignment:
    """Exact solve with the degradation fallback; always returns an assignment."""
    a = solve_exact(tasks, front, c, obj, keep_inactive_resident)
    if a is not None:
        return a
    return degrade_fps(tasks, front, c, obj, keep_inactive_resident)


# ------------------------------------------------------------ heuristics
# All three run every active task on its reference (accuracy 1.0) config and
# only respect the time budget.


def _floor(x: float) -> int:
    return max(0, math.floor(x + EPS))


def _heuristic(tasks, pool: Versions, granted: Mapping[str, int]) -> Assignment:
    entries = []
    for t in tasks:
        if t.required_fps == 0:
            continue
        ref = reference_config(pool.versions(t.task_id))
        entries.append(TaskChoice(t.task_id, ref, granted[t.task_id], t.required_fps))
    degraded = any(e.granted_fps < e.required_fps for e in entries)
    return Assignment(tuple(entries), degraded=degraded)


def heuristic_fair_fps(tasks: Sequence[TaskSpec], pool: Versions, c: ConstraintSet) -> Assignment:
    """Same FPS for everyone: the largest common cap that fits the time budget."""
    active = [t for t in tasks if t.required_fps > 0]
    times = {t.task_id: reference_config(pool.versions(t.task_id)).time_per_frame for t in active}
    for f in range(MAX_FPS, -1, -1):
        need = _sum(times[t.task_id] * min(f, t.required_fps) for t in active)
        if need <= c.time_budget + EPS:
            break
    return _heuristic(tasks, pool, {t.task_id: min(f, t.required_fps) for t in active})


def heuristic_fair_time(tasks: Sequence[TaskSpec], pool: Versions, c: ConstraintSet) -> Assignment:
    """Equal time slot per active task; unused slack stays unused."""
    active = [t for t in tasks if t.required_fps > 0]
    granted = {}
    if active:
        slot = c.time_budget / len(active)
        for t in active:
            ref = reference_config(pool.versions(t.task_id))
            granted[t.task_id] = min(t.required_fps, _floor(slot / ref.time_per_frame))
    return _heuristic(tasks, pool, granted)


def heuristic_greedy(tasks: Sequence[TaskSpec], pool: Versions, c: ConstraintSet) -> Assignment:
    """Serve tasks in priority order, each taking what it needs from what is left."""
    active = [t for t in tasks if t.required_fps > 0]
    order = sorted(range(len(active)), key=lambda i: (active[i].priority, i))
    remaining = c.time_budget
    granted = {}
    for i in order:
        t = active[i]
        ref = reference_config(pool.versions(t.task_id))
        received = max(0.0, min(ref.time_per_frame * t.required_fps, remaining))
        f = min(t.required_fps, _floor(received / ref.time_per_frame))
        granted[t.task_id] = f
        remaining -= received
    return _heuristic(tasks, pool, granted)


# ------------------------------------------------------------ instance files


def task_from_json(rec: Mapping[str, object]) -> TaskSpec:
    return TaskSpec(
        task_id=str(rec["id"]),
        required_fps=rec.get("fps", 0),
        accuracy_threshold=float(rec.get("acc_th") or 0.0),
        min_time_alloc=float(rec.get("min_time") or 0.0),
        priority=int(rec.get("priority") or 0),
    )


def task_to_json(t: TaskSpec) -> dict[str, object]:
    return {"id": t.task_id, "fps": t.required_fps, "acc_th": t.accuracy_threshold,
            "min_time": t.min_time_alloc, "priority": t.priority}


def constraints_from_json(rec: Optional[Mapping[str, object]]) -> ConstraintSet:
    rec = rec or {}
    opt = lambda k: None if rec.get(k) is None else float(rec[k])  # noqa: E731
    return ConstraintSet(
        time_budget=float(rec.get("time_budget", 0.95)),
        peak_power=opt("peak_power"),
        energy_budget=opt("energy_budget"),
        memory_budget=opt("memory_budget"),
    )


def constraints_to_json(c: ConstraintSet) -> dict[str, object]:
    return {"time_budget": c.time_budget, "peak_power": c.peak_power,
            "energy_budget": c.energy_budget, "memory_budget": c.memory_budget}


def assignment_to_json(a: Assignment, tasks: Sequence[TaskSpec] = ()) -> dict[str, object]:
    out = {
        "chosen": [e.config.version_id for e in a.entries],
        "objective": a.objective_value,
        "objective_kind": a.objective.value,
        "degraded": a.degraded,
        "tasks": [
            {"id": e.task_id, "version": e.config.version_id, "required_fps": e.required_fps,
             "granted_fps": e.granted_fps, "accuracy": e.config.accuracy}
            for e in a.entries
        ],
        "totals": {"time_used": a.time_used, "energy": a.energy, "memory": a.memory,
                   "peak_power": a.peak_power, "accuracy_sum": a.accuracy_sum},
    }
    if a.degraded:
        granted = a.granted()
        out["dropped"] = [t.task_id for t in tasks if t.required_fps > 0 and granted.get(t.task_id, 0) == 0]
        out["violations"] = list(a.violations)
    return out
