import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccdo.g24 import make_variant
from ccdo.local_search import (
    FixedTarget,
    LocalSearchConfig,
    LsMemory,
    local_descent,
    mutation_hill_climb,
    mutation_step,
    run_local_search,
    should_skip,
)
from ccdo.problem import DcopProblem, FeBudgetClock, compare_solutions

from oracles import G24_1_IDEAL, STATIC_BEST

G24_1 = make_variant("G24_1")
STATIC = np.array([1.0])


def quadratic(seed):
    """Random convex quadratic on [-2, 2]^2 with its minimizer inside the box."""
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(2, 2))
    a = b @ b.T + 0.1 * np.eye(2)
    c = rng.uniform(-1.5, 1.5, 2)

    def fn(x, alpha):
        d = x - c
        return np.einsum("...i,ij,...j->...", d, a, d), np.full(x.shape[:-1] + (1,), -1.0)

    return DcopProblem("quad", [-2, -2], [2, 2], [0], [1], fn), c


class Recorder:
    """Target wrapper that remembers every evaluated point."""

    def __init__(self, target):
        self.target, self.lower, self.upper = target, target.lower, target.upper
        self.points = []

    def __call__(self, x):
        self.points.append(np.array(x))
        return self.target(x)


def test_config_defaults_and_validation():
    c = LocalSearchConfig()
    assert (c.max_fes, c.constraint_tolerance, c.honor_bounds, c.mutation_scale) == (20, 0.0, True, 0.1)
    with pytest.raises(ValueError):
        LocalSearchConfig(max_fes=0)
    with pytest.raises(ValueError):
        LocalSearchConfig(strategy="newton")


def test_quadratic_converges_tightly():
    p, c = quadratic(0)
    x, e = local_descent(np.array([-1.9, 1.9]), FixedTarget(p, [0.0]), LocalSearchConfig(max_fes=100))
    assert np.linalg.norm(x - c) < 1e-4


def test_quadratic_family_success_rate():
    hits = 0
    for seed in range(200):
        p, c = quadratic(seed)
        x0 = np.random.default_rng(seed + 1000).uniform(-2, 2, 2)
        x, _ = local_descent(x0, FixedTarget(p, [0.0]), LocalSearchConfig(max_fes=100))
        hits += np.linalg.norm(x - c) < 1e-3
    assert hits >= 190


def test_stationary_start_stays():
    x0 = np.array(G24_1_IDEAL[0])
    x, _ = local_descent(x0, FixedTarget(G24_1, STATIC), LocalSearchConfig(max_fes=20))
    assert np.linalg.norm(x - x0) < 1e-3


def test_near_optimal_start_reaches_static_optimum():
    x, e = local_descent(np.array([2.2, 3.0]), FixedTarget(G24_1, STATIC), LocalSearchConfig(max_fes=20))
    assert e.feasible and e.objective == pytest.approx(STATIC_BEST, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.sampled_from(["G24_1", "G24_3", "G24_5", "G24_6c"]))
def test_budget_and_never_worse(seed, budget, vid):
    p = make_variant(vid)
    rng = np.random.default_rng(seed)
    x0, alpha = p.random_solutions(rng, 1)[0], p.random_envs(rng, 1)[0]
    clock = FeBudgetClock.unbounded()
    target = Recorder(FixedTarget(p, alpha, clock))
    x, e = local_descent(x0, target, LocalSearchConfig(max_fes=budget))
    assert clock.total_fes <= budget
    assert compare_solutions(e, p.evaluate(x0, alpha)) <= 0
    assert e == p.evaluate(x, alpha)
    pts = np.array(target.points)
    assert ((pts >= p.x_lower) & (pts <= p.x_upper)).all()


def test_known_start_evaluation_saves_one_fe():
    clock = FeBudgetClock.unbounded()
    x0 = np.array([1.0, 1.0])
    e0 = G24_1.evaluate(x0, STATIC)
    local_descent(x0, FixedTarget(G24_1, STATIC, clock), LocalSearchConfig(max_fes=3), e0=e0)
    assert clock.total_fes <= 3


def test_mutation_step_keeps_feasible_original():
    # every point other than x0 = 0 is infeasible
    def fn(x, alpha):
        return x[..., 0], np.abs(x[..., :1]) - 0.0

    p = DcopProblem("pin", [-1.0], [1.0], [0.0], [1.0], fn)
    target = FixedTarget(p, [0.0])
    x0 = np.array([0.0])
    e0 = target(x0)
    x, e = mutation_step(x0, e0, target, LocalSearchConfig(), np.random.default_rng(0))
    assert x is x0 and e == e0


def test_mutation_step_zero_scale_is_identity():
    clock = FeBudgetClock.unbounded()
    target = FixedTarget(G24_1, STATIC, clock)
    x0 = np.array([1.0, 2.0])
    e0 = G24_1.evaluate(x0, STATIC)
    x, e = mutation_step(x0, e0, target, LocalSearchConfig(mutation_scale=0.0), np.random.default_rng(0))
    np.testing.assert_array_equal(x, x0)
    assert clock.total_fes == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_repeated_mutation_is_monotone(seed):
    rng = np.random.default_rng(seed)
    p, _ = quadratic(seed)
    target = FixedTarget(p, [0.0])
    x = rng.uniform(-2, 2, 2)
    e = target(x)
    for _ in range(50):
        xn, en = mutation_step(x, e, target, LocalSearchConfig(), rng)
        assert en.objective <= e.objective
        assert ((xn >= -2) & (xn <= 2)).all()
        x, e = xn, en


def test_mutation_only_spends_whole_budget():
    clock = FeBudgetClock.unbounded()
    cfg = LocalSearchConfig(max_fes=20, strategy="mutation_only")
    x, e = run_local_search(np.array([1.0, 1.0]), FixedTarget(G24_1, STATIC, clock), cfg, np.random.default_rng(0))
    assert clock.total_fes == 20
    clock2 = FeBudgetClock.unbounded()
    x0 = np.array([1.0, 1.0])
    mutation_hill_climb(x0, FixedTarget(G24_1, STATIC, clock2), cfg, np.random.default_rng(0),
                        e0=G24_1.evaluate(x0, STATIC))
    assert clock2.total_fes == 20


def test_memory_gate():
    mem = LsMemory()
    x = np.array([1.0, 2.0])
    assert not should_skip(x, mem)
    mem.add(x)
    assert should_skip(x, mem)
    assert not should_skip(x + np.array([1e-2, 0.0]), mem)  # strict inequality
    assert should_skip(x + np.array([0.0, 0.0099]), mem)
    mem.clear()
    assert len(mem) == 0 and not should_skip(x, mem)


@given(st.lists(st.tuples(st.floats(0, 3), st.floats(0, 4)), min_size=1, max_size=10),
       st.tuples(st.floats(0, 3), st.floats(0, 4)))
def test_memory_distance_is_euclidean_min(entries, q):
    mem = LsMemory()
    for e in entries:
        mem.add(np.array(e))
    expected = min(np.hypot(e[0] - q[0], e[1] - q[1]) for e in entries)
    assert mem.min_distance(np.array(q)) == pytest.approx(expected)
    assert should_skip(np.array(q), mem) == (mem.min_distance(np.array(q)) < 1e-2)
