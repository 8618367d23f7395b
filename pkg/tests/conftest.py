import random

import pytest

from transprec.profiles import Backend, ConfigProfile, Precision, ProfilePool, SynthesisParams, generate_synthetic


def make_config(task="t1", version="v1", t=0.01, acc=1.0, power=2.0, mem=100.0, build=0.05, size=10.0,
                precision="single", backend="standard"):
    return ConfigProfile(task, version, Precision(precision), Backend(backend), t, acc, power, mem, build, size)


def random_pool(rng: random.Random, tasks: int, per_task: int, grid: bool = False, exact: bool = False) -> ProfilePool:
    """Random pool; ``grid`` snaps values to a coarse grid so ties and duplicates occur."""
    def val(lo, hi):
        x = rng.uniform(lo, hi)
        return round(x, 1) if grid else x

    configs = []
    for ti in range(tasks):
        n = per_task if exact else rng.randint(1, per_task)
        for vi in range(n):
            configs.append(make_config(
                task=f"t{ti}", version=f"v{vi:03d}",
                t=val(0.1, 1.0) / 10, acc=max(0.1, val(0.1, 1.0)), power=val(1.0, 5.0),
                mem=val(10.0, 100.0), build=rng.uniform(0, 0.4),
            ))
    return ProfilePool(configs)


@pytest.fixture(scope="session")
def default_pool():
    return generate_synthetic(SynthesisParams(seed=7))
