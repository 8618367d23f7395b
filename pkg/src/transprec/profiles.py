"""Configuration profiles: the per-task pools of accuracy/time/power/memory trade-offs.

A pool is loaded from CSV (or its JSON mirror) or synthesized from a seed.
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path

CSV_FIELDS = (
    "task_id",
    "version_id",
    "precision",
    "backend",
    "time_per_frame_s",
    "accuracy",
    "power_w",
    "memory_mb",
    "engine_build_s",
    "engine_size_mb",
)


class ProfileError(ValueError):
    """Raised for malformed or inconsistent profile data."""


class Precision(str, Enum):
    SINGLE = "single"
    HALF = "half"


class Backend(str, Enum):
    STANDARD = "standard"
    OPTIMIZED = "optimized"


@dataclass(frozen=True)
class ConfigProfile:
    task_id: str
    version_id: str
    precision: Precision
    backend: Backend
    time_per_frame: float
    accuracy: float
    power: float
    memory: float
    engine_build_time: float = 0.0
    engine_size: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "precision", Precision(self.precision))
        object.__setattr__(self, "backend", Backend(self.backend))
        problems = []
        for name in ("time_per_frame", "power", "memory"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                problems.append(f"{name}={value!r} must be > 0")
        if not (0.0 < self.accuracy <= 1.0):
            problems.append(f"accuracy={self.accuracy!r} must be in (0, 1]")
        for name in ("engine_build_time", "engine_size"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                problems.append(f"{name}={value!r} must be >= 0")
        if problems:
            raise ProfileError(
                f"invalid config ({self.task_id}, {self.version_id}): " + "; ".join(problems)
            )

    @property
    def key(self) -> tuple[str, str]:
        return (self.task_id, self.version_id)

    @property
    def energy_per_frame(self) -> float:
        return energy_per_frame(self)


def energy_per_frame(c: ConfigProfile) -> float:
    """Joules spent on one frame: power times per-frame time."""
    return c.power * c.time_per_frame


class ProfilePool:
    """Immutable collection of configurations grouped by task.

    Tasks keep their first-seen order; configurations keep file order within a task.
    """

    def __init__(self, configs: Iterable[ConfigProfile]):
        by_task: dict[str, list[ConfigProfile]] = {}
        seen: set[tuple[str, str]] = set()
        for c in configs:
            if c.key in seen:
                raise ProfileError(f"duplicate config id ({c.task_id}, {c.version_id})")
            seen.add(c.key)
            by_task.setdefault(c.task_id, []).append(c)
        self._by_task = {t: tuple(cs) for t, cs in by_task.items()}

    @property
    def task_ids(self) -> tuple[str, ...]:
        return tuple(self._by_task)

    @property
    def configs(self) -> tuple[ConfigProfile, ...]:
        return tuple(c for cs in self._by_task.values() for c in cs)

    def versions(self, task_id: str) -> tuple[ConfigProfile, ...]:
        try:
            return self._by_task[task_id]
        except KeyError:
            raise KeyError(f"unknown task {task_id!r}") from None

    def reference(self, task_id: str) -> ConfigProfile:
        """The task's best model: highest accuracy, then fastest, then smallest version id."""
        return reference_config(self.versions(task_id))

    def __contains__(self, task_id: object) -> bool:
        return task_id in self._by_task

    def __len__(self) -> int:
        return sum(len(cs) for cs in self._by_task.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProfilePool):
            return NotImplemented
        return self._by_task == other._by_task

    def __repr__(self) -> str:
        return f"ProfilePool(tasks={len(self._by_task)}, configs={len(self)})"


def reference_config(configs: Iterable[ConfigProfile]) -> ConfigProfile:
    return min(configs, key=lambda c: (-c.accuracy, c.time_per_frame, c.version_id))


# --------------------------------------------------------------------- I/O


def _config_from_record(rec: Mapping[str, object], locus: str) -> ConfigProfile:
    missing = [k for k in CSV_FIELDS if k not in rec or rec[k] in (None, "")]
    if missing:
        raise ProfileError(f"{locus}: missing field(s) {', '.join(missing)}")
    try:
        return ConfigProfile(
            task_id=str(rec["task_id"]).strip(),
            version_id=str(rec["version_id"]).strip(),
            precision=Precision(str(rec["precision"]).strip()),
            backend=Backend(str(rec["backend"]).strip()),
            time_per_frame=float(rec["time_per_frame_s"]),
            accuracy=float(rec["accuracy"]),
            power=float(rec["power_w"]),
            memory=float(rec["memory_mb"]),
            engine_build_time=float(rec["engine_build_s"]),
            engine_size=float(rec["engine_size_mb"]),
        )
    except ProfileError:
        raise
    except (TypeError, ValueError) as exc:
        raise ProfileError(f"{locus}: {exc}") from None


def load_pool(source: str) -> ProfilePool:
    """Parse profile-file content (CSV, or JSON when it starts with ``{`` or ``[``)."""
    text = source.lstrip("﻿")
    stripped = text.lstrip()
    if stripped.startswith(("{", "[")):
        return _load_json(stripped)
    return _load_csv(text)


def _load_csv(text: str) -> ProfilePool:
    lines = [(n, line) for n, line in enumerate(text.splitlines(), start=1)]
    body = [(n, line) for n, line in lines if line.strip() and not line.lstrip().startswith("#")]
    if not body:
        raise ProfileError("line 1: empty profile file")
    header_no, header_line = body[0]
    header = [h.strip() for h in next(csv.reader([header_line]))]
    missing = [f for f in CSV_FIELDS if f not in header]
    if missing:
        raise ProfileError(f"line {header_no}: header lacks column(s) {', '.join(missing)}")
    configs = []
    for n, line in body[1:]:
        row = next(csv.reader([line]))
        if len(row) != len(header):
            raise ProfileError(f"line {n}: expected {len(header)} fields, got {len(row)}")
        configs.append(_config_from_record(dict(zip(header, row)), f"line {n}"))
    return ProfilePool(configs)


def _load_json(text: str) -> ProfilePool:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileError(f"line {exc.lineno}: {exc.msg}") from None
    records = doc.get("configs") if isinstance(doc, dict) else doc
    if not isinstance(records, list):
        raise ProfileError("record 0: expected a list of config records")
    configs = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise ProfileError(f"record {i}: expected an object")
        configs.append(_config_from_record(rec, f"record {i}"))
    return ProfilePool(configs)


def config_record(c: ConfigProfile) -> dict[str, object]:
    return {
        "task_id": c.task_id,
        "version_id": c.version_id,
        "precision": c.precision.value,
        "backend": c.backend.value,
        "time_per_frame_s": c.time_per_frame,
        "accuracy": c.accuracy,
        "power_w": c.power,
        "memory_mb": c.memory,
        "engine_build_s": c.engine_build_time,
        "engine_size_mb": c.engine_size,
    }


def dump_pool(
    configs: Iterable[ConfigProfile],
    extra: Mapping[str, str] | None = None,
    header_lines: Iterable[str] = (),
) -> str:
    """Render configurations as profile CSV; ``extra`` appends constant columns."""
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    extra = dict(extra or {})
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(CSV_FIELDS) + list(extra))
    for c in configs:
        rec = config_record(c)
        writer.writerow([_fmt(rec[k]) for k in CSV_FIELDS] + list(extra.values()))
    return buf.getvalue()


def _fmt(value: object) -> str:
    # repr round-trips floats exactly
    return repr(value) if isinstance(value, float) else str(value)


def save_pool(pool: ProfilePool, path: str | Path) -> None:
    Path(path).write_text(dump_pool(pool.configs), encoding="utf-8")


def read_pool(path: str | Path) -> ProfilePool:
    return load_pool(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------- synthesis

# Average ratios across the five profiled networks (optimized backend speedup,
# and half-precision power / memory / engine-build ratios).
_TABLE_SPEEDUP_OPTIMIZED = (2.6, 10.9)
_TABLE_POWER_HALF = (0.4, 0.8)
_TABLE_MEMORY_HALF = (0.8, 0.9)
_TABLE_BUILD_HALF = (0.3, 0.5)
_TABLE_SPEEDUP_HALF = (1.0, 1.1)
_TABLE_POWER_OPTIMIZED = (0.4, 3.0)

MAX_BUILD_TIME = 0.4


@dataclass(frozen=True)
class SynthesisParams:
    seed: int = 7
    tasks: int = 5
    versions_per_task: int = 20
    time_range: tuple[float, float] = (0.04, 0.11)
    speedup_optimized: tuple[float, float] = _TABLE_SPEEDUP_OPTIMIZED
    power_ratio_half: tuple[float, float] = _TABLE_POWER_HALF
    build_ratio_half: tuple[float, float] = _TABLE_BUILD_HALF
    curve_concavity: float = 4.0
    noise: float = 0.1
    speedup_half: tuple[float, float] = _TABLE_SPEEDUP_HALF
    memory_ratio_half: tuple[float, float] = _TABLE_MEMORY_HALF
    power_ratio_optimized: tuple[float, float] = _TABLE_POWER_OPTIMIZED
    power_range: tuple[float, float] = (2.0, 5.0)
    memory_range: tuple[float, float] = (40.0, 160.0)
    build_range: tuple[float, float] = (0.02, 0.08)
    min_truncation: float = 0.05

    def __post_init__(self):
        for name in ("time_range", "speedup_optimized", "power_ratio_half",
                     "build_ratio_half", "speedup_half", "memory_ratio_half",
                     "power_ratio_optimized", "power_range", "memory_range", "build_range"):
            value = tuple(float(v) for v in getattr(self, name))
            object.__setattr__(self, name, value)
            if len(value) != 2 or not (0 < value[0] <= value[1]) or not all(map(math.isfinite, value)):
                raise ProfileError(f"{name}={value!r} must be an ordered positive pair")
        if self.tasks < 1 or self.versions_per_task < 1:
            raise ProfileError("tasks and versions_per_task must be >= 1")
        if not (0 <= self.noise < 0.5):
            raise ProfileError(f"noise={self.noise!r} must be in [0, 0.5)")
        if not self.curve_concavity > 0:
            raise ProfileError("curve_concavity must be > 0")
        if not (0 < self.min_truncation < 1):
            raise ProfileError("min_truncation must be in (0, 1)")
        if self.build_range[1] > MAX_BUILD_TIME:
            raise ProfileError(f"build_range must stay within {MAX_BUILD_TIME} s")
        if self.seed < 0 or self.seed >= 2**64:
            raise ProfileError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> SynthesisParams:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ProfileError(f"unknown synthesis parameter(s): {', '.join(sorted(unknown))}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})

    def to_dict(self) -> dict[str, object]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


# variant order within a model: the standard variant precedes its optimized twin
_VARIANTS = (
    (Precision.SINGLE, Backend.STANDARD),
    (Precision.SINGLE, Backend.OPTIMIZED),
    (Precision.HALF, Backend.STANDARD),
    (Precision.HALF, Backend.OPTIMIZED),
)


def generate_synthetic(params: SynthesisParams) -> ProfilePool:
    """Build a seeded pool shaped like profiled truncated networks.

    Each task has a chain of truncated models; every model is expanded into
    single/half precision on standard/optimized backends. Version ``v000`` is
    the full single-precision standard model and the only one with accuracy 1.0.
    """
    rng = random.Random(params.seed)
    u = rng.uniform
    configs = []
    n_models = math.ceil(params.versions_per_task / len(_VARIANTS))
    noise = params.noise
    for ti in range(params.tasks):
        task_id = f"t{ti + 1}"
        base_time = u(*params.time_range)
        base_power = u(*params.power_range)
        base_memory = u(*params.memory_range)
        base_build = u(*params.build_range)
        # truncation fraction of the full network; model 0 is the full network
        fractions = [1.0] + sorted(
            (u(params.min_truncation, 1.0) for _ in range(n_models - 1)),
            reverse=True,
        )
        count = 0
        for mi, frac in enumerate(fractions):
            acc_model = frac ** (1.0 / params.curve_concavity)
            std_time = {}
            for precision, backend in _VARIANTS:
                if count == params.versions_per_task:
                    break
                version_id = f"v{count:03d}"
                count += 1
                reference = mi == 0 and precision is Precision.SINGLE and backend is Backend.STANDARD
                if backend is Backend.STANDARD:
                    t = base_time * frac * u(1 - noise, 1 + noise)
                    if precision is Precision.HALF:
                        t /= u(*params.speedup_half)
                    std_time[precision] = t
                    power = base_power * (0.6 + 0.4 * frac) * u(1 - noise, 1 + noise)
                else:
                    t = std_time[precision] / u(*params.speedup_optimized)
                    power = base_power * (0.6 + 0.4 * frac) * u(*params.power_ratio_optimized)
                    power *= u(1 - noise, 1 + noise)
                memory = base_memory * (0.25 + 0.75 * frac) * u(1 - 2 * noise, 1 + 2 * noise)
                build = base_build * (0.3 + 0.7 * frac) * u(1 - noise, 1 + noise)
                size = memory * 0.5 * u(1 - noise, 1 + noise)
                if precision is Precision.HALF:
                    power *= u(*params.power_ratio_half)
                    memory *= u(*params.memory_ratio_half)
                    build *= u(*params.build_ratio_half)
                    size *= 0.5
                if reference:
                    acc = 1.0
                else:
                    # non-reference variants lose a little accuracy; never reach 1.0
                    acc = acc_model * (1 - 0.1 * noise * u(0.05, 1.0)) if noise > 0 else acc_model
                    acc = min(acc, 1.0 - 1e-6)
                configs.append(ConfigProfile(
                    task_id=task_id,
                    version_id=version_id,
                    precision=precision,
                    backend=backend,
                    time_per_frame=t,
                    accuracy=acc,
                    power=power,
                    memory=memory,
                    engine_build_time=min(build, MAX_BUILD_TIME),
                    engine_size=size,
                ))
    return ProfilePool(configs)
