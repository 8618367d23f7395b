"""Stable/transition runtime: background engine loads and per-second time shares.

The state machine is pure: ``Runtime.handle_event`` maps a state and an event
to a new state plus a list of actions. Background work (the solver and engine
loads) is modelled purely by time accounting, charged to the tasks whose
configuration changes.
"""

from __future__ import annotations

import math
import statistics
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Union

from .optimizer import EPS, Assignment, ConstraintSet, Objective, TaskChoice, TaskSpec, solve
from .pareto import ParetoMode, select_front
from .profiles import ConfigProfile, ProfilePool


class Phase(str, Enum):
    STABLE = "stable"
    TRANSITION = "transition"


class BuildTimeSource(str, Enum):
    PROFILE_FIELD = "profile_field"
    FIXED = "fixed"


@dataclass(frozen=True)
class OverheadModel:
    solver_latency: float = 0.13
    build_time_source: BuildTimeSource = BuildTimeSource.PROFILE_FIELD
    fixed_build: Optional[float] = None
    sequential_loads: bool = False

    def __post_init__(self):
        object.__setattr__(self, "build_time_source", BuildTimeSource(self.build_time_source))
        if self.solver_latency < 0:
            raise ValueError("solver_latency must be >= 0")
        if self.build_time_source is BuildTimeSource.FIXED and (self.fixed_build is None or self.fixed_build < 0):
            raise ValueError("fixed build time source needs fixed_build >= 0")

    def build_time(self, config: ConfigProfile) -> float:
        if self.build_time_source is BuildTimeSource.FIXED:
            return self.fixed_build
        return config.engine_build_time


@dataclass(frozen=True)
class PendingLoad:
    task_id: str
    config: ConfigProfile
    remaining: float


@dataclass(frozen=True)
class RuntimeState:
    phase: Phase
    current: Assignment
    tasks: tuple[TaskSpec, ...]
    constraints: ConstraintSet
    target: Optional[Assignment] = None
    pending_loads: tuple[PendingLoad, ...] = ()
    clock: float = 0.0
    solve_remaining: float = 0.0
    transition_started: Optional[float] = None
    stable_since: float = 0.0

    @property
    def solving(self) -> bool:
        return self.solve_remaining > 0

    def pending(self, task_id: str) -> Optional[PendingLoad]:
        return next((p for p in self.pending_loads if p.task_id == task_id), None)


# events


@dataclass(frozen=True)
class ConstraintChange:
    tasks: tuple[TaskSpec, ...]
    constraints: ConstraintSet
    objective: Objective = Objective.MAX_ACCURACY
    mode: ParetoMode = ParetoMode.TIME


@dataclass(frozen=True)
class SecondTick:
    build_progress: Mapping[str, float] = field(default_factory=dict)
    duration: float = 1.0


@dataclass(frozen=True)
class LoadComplete:
    task_id: str
    at: Optional[float] = None


Event = Union[ConstraintChange, SecondTick, LoadComplete]


@dataclass(frozen=True)
class Action:
    kind: str
    task_id: Optional[str] = None
    detail: str = ""


# per-second plan


@dataclass(frozen=True)
class TaskSecond:
    task_id: str
    config: Optional[ConfigProfile]
    frames: int
    demanded: int
    granted: int
    alloc: float
    pending: bool = False
    share: float = 0.0
    solver_charge: float = 0.0
    build_charge: float = 0.0
    completes_at: Optional[float] = None
    overhead_frames: int = 0


@dataclass(frozen=True)
class SecondPlan:
    start: float
    tasks: tuple[TaskSecond, ...]
    resident_memory: float

    @property
    def time_used(self) -> float:
        total = 0.0
        for t in self.tasks:
            total += t.alloc
        return total

    def build_progress(self) -> dict[str, float]:
        return {t.task_id: t.build_charge for t in self.tasks if t.pending}

    def completions(self) -> list[tuple[float, str]]:
        order = {t.task_id: i for i, t in enumerate(self.tasks)}
        done = [(t.completes_at, t.task_id) for t in self.tasks if t.completes_at is not None]
        return sorted(done, key=lambda x: (x[0], order[x[1]]))


def _floor_frames(time: float, per_frame: float) -> int:
    if time <= 0:
        return 0
    return max(0, math.floor(time / per_frame + EPS))


class Runtime:
    """Owns the pool, overhead model and solver; states are passed in and out."""

    def __init__(
        self,
        pool: ProfilePool,
        overheads: OverheadModel = OverheadModel(),
        keep_inactive_resident: bool = False,
    ):
        self.pool = pool
        self.overheads = overheads
        self.keep_inactive_resident = keep_inactive_resident
        self._fronts: dict[ParetoMode, object] = {}

    def front(self, mode: ParetoMode):
        if mode not in self._fronts:
            self._fronts[mode] = select_front(self.pool, mode)
        return self._fronts[mode]

    def solve(self, change: ConstraintChange) -> Assignment:
        return solve(change.tasks, self.front(change.mode), change.constraints, change.objective,
                     self.keep_inactive_resident)

    def initial_state(self, change: ConstraintChange) -> RuntimeState:
        """Stable state with the first solution already resident."""
        return RuntimeState(Phase.STABLE, self.solve(change), tuple(change.tasks), change.constraints)

    # ----------------------------------------------------------- events

    def handle_event(self, state: RuntimeState, event: Event) -> tuple[RuntimeState, list[Action]]:
        if isinstance(event, ConstraintChange):
            return self._on_change(state, event)
        if isinstance(event, SecondTick):
            return self._on_tick(state, event)
        if isinstance(event, LoadComplete):
            return self._on_load(state, event)
        raise TypeError(f"unknown event {event!r}")

    def _on_change(self, state: RuntimeState, ev: ConstraintChange) -> tuple[RuntimeState, list[Action]]:
        # a transition still in progress is superseded; partial loads are dropped
        target = self.solve(ev)
        new = replace(
            state,
            phase=Phase.TRANSITION,
            target=target,
            tasks=tuple(ev.tasks),
            constraints=ev.constraints,
            pending_loads=(),
            solve_remaining=max(self.overheads.solver_latency, EPS),
            transition_started=state.clock,
        )
        return new, [Action("start_solve", detail=f"{ev.objective.value}/{ev.mode.value}")]

    def _on_tick(self, state: RuntimeState, ev: SecondTick) -> tuple[RuntimeState, list[Action]]:
        actions: list[Action] = []
        start = state.clock
        new = replace(state, clock=state.clock + ev.duration)
        if state.solving:
            left = state.solve_remaining - ev.duration
            if left > EPS:
                return replace(new, solve_remaining=left), actions
            new, installed = self._install(new)
            actions.extend(installed)
        if new.pending_loads:
            loads = tuple(
                replace(p, remaining=max(0.0, p.remaining - ev.build_progress.get(p.task_id, 0.0)))
                for p in new.pending_loads
            )
            new = replace(new, pending_loads=loads)
        elif new.phase is Phase.TRANSITION:
            # nothing to load: the solve completing ends the transition
            done_at = start + state.solve_remaining
            new = replace(new, phase=Phase.STABLE, target=None, stable_since=done_at)
            actions.append(Action("stable"))
        return new, actions

    def _install(self, state: RuntimeState) -> tuple[RuntimeState, list[Action]]:
        target = state.target
        entries = []
        loads = []
        for e in target.entries:
            old = state.current.by_task.get(e.task_id)
            if old is not None and old.config == e.config:
                entries.append(e)
            else:
                if old is not None:
                    entries.append(old)
                loads.append(PendingLoad(e.task_id, e.config, self.overheads.build_time(e.config)))
        current = Assignment(tuple(entries), objective=target.objective, degraded=True)
        new = replace(state, current=current, pending_loads=tuple(loads), solve_remaining=0.0)
        return new, [Action("install", detail=f"{len(loads)} load(s)")]

    def _on_load(self, state: RuntimeState, ev: LoadComplete) -> tuple[RuntimeState, list[Action]]:
        load = state.pending(ev.task_id)
        if load is None:
            raise ValueError(f"no pending load for task {ev.task_id!r}")
        switched = state.target.by_task[ev.task_id]
        order = [e.task_id for e in state.target.entries]
        entries = {e.task_id: e for e in state.current.entries}
        entries[ev.task_id] = switched
        current = Assignment(
            tuple(entries[t] for t in order if t in entries),
            objective=state.target.objective,
            degraded=True,
        )
        loads = tuple(p for p in state.pending_loads if p.task_id != ev.task_id)
        new = replace(state, current=current, pending_loads=loads)
        actions = [Action("switch", ev.task_id, switched.config.version_id)]
        if not loads and not state.solving:
            at = ev.at if ev.at is not None else state.clock
            new = replace(new, phase=Phase.STABLE, current=state.target, target=None, stable_since=at)
            actions.append(Action("stable"))
        return new, actions

    # ---------------------------------------------------------- planning

    def plan_second(self, state: RuntimeState) -> SecondPlan:
        """Per-task time allocation for the one-second window starting at ``state.clock``."""
        demand = {t.task_id: t.required_fps for t in state.tasks}
        budget = state.constraints.time_budget
        rows: list[TaskSecond] = []

        if state.phase is Phase.STABLE:
            for e in state.current.entries:
                rows.append(TaskSecond(e.task_id, e.config, e.granted_fps, demand.get(e.task_id, 0),
                                       e.granted_fps, e.config.time_per_frame * e.granted_fps))
            memory = state.current.memory
            return SecondPlan(state.clock, self._with_starved(rows, state, demand), memory)

        target = state.target
        if state.solving:
            pending_ids = [e.task_id for e in target.entries if state.current.config(e.task_id) != e.config]
            remaining_build = {t: self.overheads.build_time(target.config(t)) for t in pending_ids}
        else:
            pending_ids = [p.task_id for p in state.pending_loads]
            remaining_build = {p.task_id: p.remaining for p in state.pending_loads}
        pending_set = set(pending_ids)

        unchanged_time = 0.0
        for e in target.entries:
            if e.task_id not in pending_set:
                unchanged_time += e.config.time_per_frame * e.granted_fps
        share = max(0.0, budget - unchanged_time) / len(pending_ids) if pending_ids else 0.0
        solver_total = min(state.solve_remaining, 1.0) if state.solving else 0.0
        solver_charge = solver_total / len(pending_ids) if pending_ids else 0.0
        solve_finishes = not state.solving or state.solve_remaining <= 1.0 + EPS

        building = set(pending_ids)
        if self.overheads.sequential_loads and pending_ids:
            first = min(pending_ids, key=lambda t: (remaining_build[t], pending_ids.index(t)))
            building = {first}

        memory = 0.0
        for e in target.entries:
            if e.task_id not in pending_set:
                rows.append(TaskSecond(e.task_id, e.config, e.granted_fps, demand.get(e.task_id, 0),
                                       e.granted_fps, e.config.time_per_frame * e.granted_fps))
                memory += e.config.memory
                continue
            old = state.current.by_task.get(e.task_id)
            usable = max(0.0, share - solver_charge)
            progress = 0.0
            completes = None
            if solve_finishes and e.task_id in building:
                need = remaining_build[e.task_id]
                progress = min(need, usable)
                if need - progress <= EPS:
                    completes = state.clock + solver_charge + need
            memory += e.config.memory
            if old is None:
                rows.append(TaskSecond(e.task_id, None, 0, demand.get(e.task_id, 0), e.granted_fps, 0.0,
                                       True, share, solver_charge, progress, completes, 0))
                continue
            memory += old.config.memory
            t_old = old.config.time_per_frame
            frames = min(e.granted_fps, _floor_frames(usable - progress, t_old))
            free = min(e.granted_fps, _floor_frames(share, t_old))
            rows.append(TaskSecond(e.task_id, old.config, frames, demand.get(e.task_id, 0), e.granted_fps,
                                   frames * t_old, True, share, solver_charge, progress, completes,
                                   free - frames))
        return SecondPlan(state.clock, self._with_starved(rows, state, demand), memory)

    @staticmethod
    def _with_starved(rows, state, demand) -> tuple[TaskSecond, ...]:
        """Demanded tasks without any configuration still appear, with zero frames."""
        seen = {r.task_id for r in rows}
        extra = [TaskSecond(t.task_id, None, 0, t.required_fps, 0, 0.0)
                 for t in state.tasks if t.required_fps > 0 and t.task_id not in seen]
        return tuple(rows) + tuple(extra)


# ------------------------------------------------------------------ logging


def format_log_line(state: RuntimeState, event_name: str) -> str:
    served = " ".join(f"{e.task_id}:{e.config.version_id}@{e.granted_fps}" for e in state.current.entries)
    return f"{state.clock:.3f}\t{state.phase.value}\t{event_name}\t{served}"


def event_name(event: Event) -> str:
    if isinstance(event, ConstraintChange):
        return "constraint_change"
    if isinstance(event, SecondTick):
        return "tick"
    return f"load_complete:{event.task_id}"


@dataclass(frozen=True)
class TransitionStats:
    durations: tuple[float, ...]
    unfinished: int

    @property
    def count(self) -> int:
        return len(self.durations)

    @property
    def median(self) -> float:
        return statistics.median(self.durations) if self.durations else 0.0

    @property
    def mean(self) -> float:
        return statistics.fmean(self.durations) if self.durations else 0.0

    @property
    def maximum(self) -> float:
        return max(self.durations, default=0.0)


def transition_report(history: Iterable[tuple[Event, RuntimeState]]) -> TransitionStats:
    """Durations from each constraint change to the next return to the stable phase."""
    durations = []
    started = None
    for event, state in history:
        if isinstance(event, ConstraintChange):
            started = state.transition_started
        elif started is not None and state.phase is Phase.STABLE:
            durations.append(state.stable_since - started)
            started = None
    return TransitionStats(tuple(durations), int(started is not None))


def replay(runtime: Runtime, state: RuntimeState, events: Sequence[Event]) -> list[tuple[Event, RuntimeState]]:
    history = []
    for ev in events:
        state, _ = runtime.handle_event(state, ev)
        history.append((ev, state))
    return history
