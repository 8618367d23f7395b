"""Per-task Pareto filtering of configurations.

Accuracy is always maximized; each mode names the cost dimensions that are
minimized alongside it.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from enum import Enum

from .profiles import ConfigProfile, ProfilePool


class ParetoMode(str, Enum):
    TIME = "time"
    TIME_MEMORY = "time-memory"
    MEMORY_ONLY = "memory-only"
    TIME_ENERGY = "time-energy"
    ENERGY_ONLY = "energy-only"

    @property
    def cost_dims(self) -> tuple[str, ...]:
        return _COST_DIMS[self]

    @classmethod
    def parse(cls, text: str) -> ParetoMode:
        key = text.strip().lower().replace("_", "-")
        try:
            return cls(key)
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown Pareto mode {text!r}; expected one of: {names}") from None


_COST_DIMS = {
    ParetoMode.TIME: ("time",),
    ParetoMode.TIME_MEMORY: ("time", "memory"),
    ParetoMode.MEMORY_ONLY: ("memory",),
    ParetoMode.TIME_ENERGY: ("time", "energy"),
    ParetoMode.ENERGY_ONLY: ("energy",),
}


def cost(c: ConfigProfile, dim: str) -> float:
    if dim == "time":
        return c.time_per_frame
    if dim == "memory":
        return c.memory
    if dim == "energy":
        return c.energy_per_frame
    raise ValueError(f"unknown cost dimension {dim!r}")


def costs(c: ConfigProfile, mode: ParetoMode) -> tuple[float, ...]:
    return tuple(cost(c, d) for d in mode.cost_dims)


def dominates(a: ConfigProfile, b: ConfigProfile, mode: ParetoMode) -> bool:
    """True if ``a`` is at least as good as ``b`` everywhere and strictly better somewhere."""
    if a.task_id != b.task_id:
        raise ValueError(f"cannot compare configs of different tasks ({a.task_id}, {b.task_id})")
    ca, cb = costs(a, mode), costs(b, mode)
    if a.accuracy < b.accuracy or any(x > y for x, y in zip(ca, cb)):
        return False
    return a.accuracy > b.accuracy or any(x < y for x, y in zip(ca, cb))


@dataclass(frozen=True)
class ParetoFront:
    mode: ParetoMode
    members: dict[str, tuple[ConfigProfile, ...]]

    @property
    def task_ids(self) -> tuple[str, ...]:
        return tuple(self.members)

    def versions(self, task_id: str) -> tuple[ConfigProfile, ...]:
        return self.members[task_id]

    def as_pool(self) -> ProfilePool:
        return ProfilePool(c for cs in self.members.values() for c in cs)

    def __len__(self) -> int:
        return sum(len(cs) for cs in self.members.values())


def front_of(configs: Iterable[ConfigProfile], mode: ParetoMode) -> tuple[ConfigProfile, ...]:
    """Non-dominated subset of one task's configurations, ascending by first cost."""
    dims = mode.cost_dims
    # Sorted this way, a config can only be dominated by (or duplicate) an earlier one,
    # so checking candidates against the kept members is sufficient.
    ordered = sorted(
        configs,
        key=lambda c: (cost(c, dims[0]), -c.accuracy, *(cost(c, d) for d in dims[1:]), c.version_id),
    )
    kept: list[ConfigProfile] = []
    if len(dims) == 1:
        best = None
        for c in ordered:
            if best is None or c.accuracy > best:
                kept.append(c)
                best = c.accuracy
        return tuple(kept)
    for c in ordered:
        vec = (c.accuracy, costs(c, mode))
        if any(dominates(k, c, mode) or (k.accuracy, costs(k, mode)) == vec for k in kept):
            continue
        kept.append(c)
    return tuple(kept)


def select_front(pool: ProfilePool, mode: ParetoMode) -> ParetoFront:
    return ParetoFront(mode, {t: front_of(pool.versions(t), mode) for t in pool.task_ids})
