import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from transprec.optimizer import (
    Assignment,
    ConstraintSet,
    Objective,
    TaskChoice,
    TaskSpec,
    assignment_feasible,
    brute_force_oracle,
    check_feasible,
    degrade_fps,
    heuristic_fair_fps,
    heuristic_fair_time,
    heuristic_greedy,
    solve,
    solve_exact,
)
from transprec.pareto import ParetoMode, select_front
from transprec.profiles import ProfilePool

from .conftest import make_config, random_pool


@pytest.fixture
def two_by_two():
    return ProfilePool([
        make_config("t1", "A", t=0.02, acc=1.0),
        make_config("t1", "B", t=0.01, acc=0.9),
        make_config("t2", "C", t=0.03, acc=1.0),
        make_config("t2", "D", t=0.015, acc=0.85),
    ])


def test_check_feasible_examples():
    c = ConstraintSet()
    x = make_config("t1", "x", t=0.02)
    assert check_feasible([TaskSpec("t1", 20)], {"t1": x}, {"t1": 20}, c) == (True, [])
    y = make_config("t2", "y", t=0.03)
    x3 = make_config("t1", "x", t=0.03)
    ok, why = check_feasible([TaskSpec("t1", 20), TaskSpec("t2", 20)], {"t1": x3, "t2": y}, {"t1": 20, "t2": 20}, c)
    assert not ok and why == ["time_budget"]
    low = make_config("t1", "z", t=0.01, acc=0.85)
    ok, why = check_feasible([TaskSpec("t1", 10, accuracy_threshold=0.9)], {"t1": low}, {"t1": 10}, c)
    assert not ok and why == ["accuracy[t1]"]


def test_check_feasible_all_clauses():
    c = ConstraintSet(time_budget=0.5, peak_power=3.0, energy_budget=0.1, memory_budget=150)
    cfg = make_config("t1", "a", t=0.02, power=4.0, mem=200)
    ok, why = check_feasible([TaskSpec("t1", 30, min_time_alloc=0.7)], {"t1": cfg}, {"t1": 30}, c)
    assert not ok
    assert set(why) == {"min_time_alloc[t1]", "peak_power[t1]", "time_budget", "energy_budget", "memory_budget"}
    with pytest.raises(ValueError, match="no configuration"):
        check_feasible([TaskSpec("t1", 5)], {}, {"t1": 5}, c)


def test_two_by_two_enumeration(two_by_two):
    tasks = [TaskSpec("t1", 20), TaskSpec("t2", 20)]
    c = ConstraintSet()
    # frozen from enumerating the four combinations
    table = {}
    for a, b in itertools.product(two_by_two.versions("t1"), two_by_two.versions("t2")):
        if check_feasible(tasks, {"t1": a, "t2": b}, {"t1": 20, "t2": 20}, c)[0]:
            table[(a.version_id, b.version_id)] = a.accuracy + b.accuracy
    assert table == pytest.approx({("A", "D"): 1.85, ("B", "C"): 1.9, ("B", "D"): 1.75})
    for fn in (solve_exact, brute_force_oracle):
        a = fn(tasks, two_by_two, c, Objective.MAX_ACCURACY)
        assert [e.config.version_id for e in a.entries] == ["B", "C"]
        assert a.objective_value == pytest.approx(1.9, rel=1e-12)
        assert a.time_used == pytest.approx(0.8, rel=1e-12)
        assert not a.degraded


def test_inactive_only_and_empty():
    pool = ProfilePool([make_config()])
    a = solve_exact([TaskSpec("t1", 0)], pool, ConstraintSet())
    assert a.entries == () and a.objective_value == 0
    assert brute_force_oracle([], pool, ConstraintSet()).entries == ()


def test_oracle_infeasible_when_thresholds_unreachable(two_by_two):
    tasks = [TaskSpec("t1", 5, accuracy_threshold=1.0), TaskSpec("t2", 5, accuracy_threshold=1.0)]
    pool = ProfilePool([c for c in two_by_two.configs if c.accuracy < 1.0])
    assert brute_force_oracle(tasks, pool, ConstraintSet()) is None
    assert solve_exact(tasks, pool, ConstraintSet()) is None


def test_oracle_size_guard():
    pool = ProfilePool(make_config(f"t{i}", f"v{j}") for i in range(8) for j in range(8))
    with pytest.raises(ValueError, match="too large"):
        brute_force_oracle([TaskSpec(f"t{i}", 1) for i in range(8)], pool, ConstraintSet())


def random_instance(rng: random.Random, n_tasks=5, n_cfg=8):
    pool = random_pool(rng, tasks=rng.randint(1, n_tasks), per_task=n_cfg)
    tasks = [
        TaskSpec(t, rng.choice([0, rng.randint(1, 30)]) if rng.random() < 0.15 else rng.randint(1, 30),
                 accuracy_threshold=rng.choice([0.0, rng.uniform(0.1, 0.9)]),
                 min_time_alloc=rng.choice([0.0, 0.0, rng.uniform(0.0, 0.1)]),
                 priority=rng.randint(0, 3))
        for t in pool.task_ids
    ]
    c = ConstraintSet(
        time_budget=rng.uniform(0.3, 1.0),
        peak_power=rng.choice([None, rng.uniform(1.0, 5.0)]),
        energy_budget=rng.choice([None, rng.uniform(0.1, 3.0)]),
        memory_budget=rng.choice([None, rng.uniform(30, 300)]),
    )
    return pool, tasks, c


def assert_same(a, b):
    if a is None or b is None:
        assert a is None and b is None
        return
    assert a.objective_value == b.objective_value
    assert a.entries == b.entries


@pytest.mark.parametrize("obj", list(Objective))
def test_exact_matches_oracle(obj):
    rng = random.Random(1000 + list(Objective).index(obj))
    feasible = 0
    for _ in range(120):
        pool, tasks, c = random_instance(rng)
        a = solve_exact(tasks, pool, c, obj)
        assert_same(a, brute_force_oracle(tasks, pool, c, obj))
        if a is not None:
            feasible += 1
            assert assignment_feasible(tasks, a, c)[0]
            assert a.objective_value == pytest.approx(
                sum(getattr(e, "energy") if obj is Objective.MIN_ENERGY else
                    (e.config.memory if obj is Objective.MIN_MEMORY else e.config.accuracy)
                    for e in a.entries), rel=1e-9)
    assert 10 < feasible < 120


def test_exact_matches_oracle_with_ties():
    # coarse grid values produce exact objective ties; the tie-break must agree
    rng = random.Random(5)
    for _ in range(150):
        pool = random_pool(rng, tasks=3, per_task=6, grid=True)
        tasks = [TaskSpec(t, rng.randint(1, 10)) for t in pool.task_ids]
        c = ConstraintSet(time_budget=rng.uniform(0.2, 1.0), memory_budget=rng.choice([None, 150.0]))
        for obj in Objective:
            assert_same(solve_exact(tasks, pool, c, obj), brute_force_oracle(tasks, pool, c, obj))


def test_keep_inactive_resident_counts_memory():
    pool = ProfilePool([make_config("t1", "a", mem=100), make_config("t2", "b", mem=100)])
    tasks = [TaskSpec("t1", 5), TaskSpec("t2", 0)]
    c = ConstraintSet(memory_budget=150)
    assert solve_exact(tasks, pool, c) is not None
    assert solve_exact(tasks, pool, c, keep_inactive_resident=True) is None


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 10**6), obj=st.sampled_from(list(Objective)))
def test_relaxing_a_budget_never_hurts(seed, obj):
    rng = random.Random(seed)
    pool, tasks, c = random_instance(rng, n_tasks=4, n_cfg=6)
    base = solve_exact(tasks, pool, c, obj)
    looser = ConstraintSet(min(1.0, c.time_budget * 1.3), None, None, None)
    relaxed = solve_exact(tasks, pool, looser, obj)
    if base is not None:
        assert relaxed is not None
        if obj is Objective.MAX_ACCURACY:
            assert relaxed.objective_value >= base.objective_value - 1e-12
        else:
            assert relaxed.objective_value <= base.objective_value + 1e-12


MODE_OBJECTIVES = {
    ParetoMode.TIME: [Objective.MAX_ACCURACY],
    ParetoMode.TIME_MEMORY: [Objective.MAX_ACCURACY, Objective.MIN_MEMORY],
    ParetoMode.MEMORY_ONLY: [Objective.MAX_ACCURACY, Objective.MIN_MEMORY],
    ParetoMode.TIME_ENERGY: [Objective.MAX_ACCURACY, Objective.MIN_ENERGY],
    ParetoMode.ENERGY_ONLY: [Objective.MAX_ACCURACY, Objective.MIN_ENERGY],
}


def covered_instance(rng, mode):
    """Instance whose active constraints only touch the mode's dimensions."""
    pool = random_pool(rng, tasks=rng.randint(1, 4), per_task=8)
    has_time = "time" in mode.cost_dims
    fps_hi = 30 if has_time else 1
    tasks = [TaskSpec(t, rng.randint(1, fps_hi), accuracy_threshold=rng.choice([0.0, rng.uniform(0.1, 0.8)]))
             for t in pool.task_ids]
    # without time in the mode the budget must never bind: 4 tasks * 1 fps * 0.1 s < 0.95
    c = ConstraintSet(
        time_budget=rng.uniform(0.3, 1.0) if has_time else 0.95,
        energy_budget=rng.uniform(0.05, 2.0) if "energy" in mode.cost_dims and rng.random() < 0.7 else None,
        memory_budget=rng.uniform(30, 250) if "memory" in mode.cost_dims and rng.random() < 0.7 else None,
    )
    return pool, tasks, c


@pytest.mark.parametrize("mode", list(ParetoMode))
def test_front_preserves_optimum(mode):
    rng = random.Random(77 + list(ParetoMode).index(mode))
    for _ in range(40):
        pool, tasks, c = covered_instance(rng, mode)
        front = select_front(pool, mode)
        for obj in MODE_OBJECTIVES[mode]:
            full = brute_force_oracle(tasks, pool, c, obj)
            filtered = solve_exact(tasks, front, c, obj)
            if full is None:
                assert filtered is None
            else:
                assert filtered.objective_value == full.objective_value


# -------------------------------------------------------------- degradation


def test_degrade_by_priority():
    pool = ProfilePool([make_config("t1", "a", t=0.03), make_config("t2", "b", t=0.03)])
    tasks = [TaskSpec("t1", 20, priority=1), TaskSpec("t2", 20, priority=2)]
    c = ConstraintSet()
    assert solve_exact(tasks, pool, c) is None
    a = degrade_fps(tasks, pool, c, Objective.MAX_ACCURACY)
    assert a.degraded and a.granted() == {"t1": 20, "t2": 11}
    assert a.time_used == pytest.approx(0.93)
    # the hand arithmetic: one more frame for t2 would not fit
    assert not check_feasible(tasks, a.choice(), {"t1": 20, "t2": 12}, c)[0]
    assert assignment_feasible(tasks, a, c)[0]


def test_degrade_to_zero():
    pool = ProfilePool([make_config("t1", "a", t=2.0)])
    a = degrade_fps([TaskSpec("t1", 1)], pool, ConstraintSet(), Objective.MAX_ACCURACY)
    assert a.degraded and a.entries == () and a.fps("t1") == 0


def test_degrade_round_robin_on_equal_priority():
    pool = ProfilePool([make_config(f"t{i}", "a", t=0.03) for i in range(3)])
    tasks = [TaskSpec(f"t{i}", 12, priority=0) for i in range(3)]
    a = degrade_fps(tasks, pool, ConstraintSet(), Objective.MAX_ACCURACY)
    # 0.03 * 31 = 0.93 fits, 32 frames do not; five reductions spread t0,t1,t2,t0,t1
    assert a.granted() == {"t0": 10, "t1": 10, "t2": 11}


def test_degrade_blocked_falls_back_to_fair_time():
    pool = ProfilePool([make_config("t1", "a", t=0.03), make_config("t2", "b", t=0.03)])
    tasks = [TaskSpec("t1", 20, min_time_alloc=0.6), TaskSpec("t2", 20, min_time_alloc=0.6)]
    a = degrade_fps(tasks, pool, ConstraintSet(), Objective.MAX_ACCURACY)
    fair = heuristic_fair_time(tasks, pool, ConstraintSet())
    assert a.degraded and a.entries == fair.entries
    assert a.granted() == {"t1": 15, "t2": 15}
    assert "min_time_alloc[t1]" in a.violations


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_solve_always_returns_bounded_assignment(seed):
    pool, tasks, c = random_instance(random.Random(seed), n_tasks=4, n_cfg=6)
    a = solve(tasks, pool, c)
    demand = {t.task_id: t.required_fps for t in tasks}
    for e in a.entries:
        assert e.granted_fps <= demand[e.task_id]
    if not a.violations:
        assert assignment_feasible(tasks, a, c)[0]
    assert a.energy == pytest.approx(sum(e.config.power * e.config.time_per_frame * e.granted_fps
                                         for e in a.entries), rel=1e-9, abs=1e-15)


# --------------------------------------------------------------- heuristics


def hpool(*times):
    return ProfilePool([make_config(f"t{i + 1}", "ref", t=t) for i, t in enumerate(times)])


def test_fair_fps_examples():
    c = ConstraintSet()
    a = heuristic_fair_fps([TaskSpec("t1", 30), TaskSpec("t2", 30)], hpool(0.02, 0.03), c)
    assert a.granted() == {"t1": 19, "t2": 19}
    assert heuristic_fair_fps([TaskSpec("t1", 5)], hpool(0.01), c).granted() == {"t1": 5}
    a = heuristic_fair_fps([TaskSpec("t1", 0), TaskSpec("t2", 10)], hpool(0.02, 0.2), c)
    assert a.granted() == {"t2": 4}


def test_fair_time_examples():
    c = ConstraintSet()
    a = heuristic_fair_time([TaskSpec("t1", 30), TaskSpec("t2", 30)], hpool(0.02, 0.03), c)
    assert a.granted() == {"t1": 23, "t2": 15}
    assert heuristic_fair_time([TaskSpec("t1", 30)], hpool(0.05), c).granted() == {"t1": 19}
    a = heuristic_fair_time([TaskSpec("t1", 0), TaskSpec("t2", 30)], hpool(0.02, 0.05), c)
    assert a.granted() == {"t2": 19}


def test_greedy_examples():
    c = ConstraintSet()
    a = heuristic_greedy([TaskSpec("t1", 30), TaskSpec("t2", 10)], hpool(0.03, 0.02), c)
    assert a.granted() == {"t1": 30, "t2": 2}
    a = heuristic_greedy([TaskSpec("t1", 30), TaskSpec("t2", 10)], hpool(0.04, 0.02), c)
    assert a.granted() == {"t1": 23, "t2": 0}
    single = [TaskSpec("t1", 30)]
    assert heuristic_greedy(single, hpool(0.045), c).entries == heuristic_fair_time(single, hpool(0.045), c).entries


def test_greedy_respects_priority_order():
    a = heuristic_greedy([TaskSpec("t1", 30, priority=2), TaskSpec("t2", 30, priority=1)], hpool(0.03, 0.03),
                         ConstraintSet())
    assert a.granted() == {"t1": 1, "t2": 30}


def test_heuristics_use_reference_config(default_pool):
    tasks = [TaskSpec(t, 10) for t in default_pool.task_ids]
    for h in (heuristic_fair_fps, heuristic_fair_time, heuristic_greedy):
        a = h(tasks, default_pool, ConstraintSet())
        assert all(e.config.accuracy == 1.0 for e in a.entries)
        assert a.time_used <= 0.95 + 1e-9


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_heuristics_never_beat_feasible_exact(seed):
    pool, tasks, c = random_instance(random.Random(seed), n_tasks=4, n_cfg=6)
    c = c.time_only()
    tasks = [TaskSpec(t.task_id, t.required_fps) for t in tasks]
    exact = solve_exact(tasks, pool, c)
    if exact is None:
        return
    for h in (heuristic_fair_fps, heuristic_fair_time, heuristic_greedy):
        assert h(tasks, pool, c).total_frames <= exact.total_frames


def test_assignment_rejects_overgrant():
    cfg = make_config()
    with pytest.raises(ValueError):
        Assignment((TaskChoice("t1", cfg, 5, 4),))
    with pytest.raises(ValueError):
        Assignment((TaskChoice("t1", cfg, 3, 4),), degraded=False)


def test_taskspec_validation():
    with pytest.raises(ValueError):
        TaskSpec("t", 31)
    with pytest.raises(ValueError):
        TaskSpec("t", 5, accuracy_threshold=1.5)
    with pytest.raises(ValueError):
        ConstraintSet(time_budget=0)
