import math

import numpy as np
import pytest

from kobdual.allen_cahn import (
    AllenCahnProblem,
    NodeCapExceeded,
    StabilityError,
    TernaryModelParams,
    _TernaryRule,
    cell_average,
    cubic_identity_residual,
    estimate_field,
    estimate_ternary_field,
    fd_solve,
    initial_condition,
    interpolate,
    reflect_fold,
    simulate_ternary,
    simulate_tree,
    step_profile,
    vote_root,
)
from kobdual.core_random import RandomStream, summarize
from kobdual.registry import get_function

from conftest import within

LINEAR = get_function("linear13")
COS = initial_condition("cos")


def problem(u0=step_profile, rate=1.0, t=0.25, forcing=LINEAR):
    return AllenCahnProblem(forcing, rate, u0, t)


def test_reflect_fold():
    assert reflect_fold(1.3) == pytest.approx(0.7)
    assert reflect_fold(-0.2) == pytest.approx(0.2)
    assert reflect_fold(2.5) == pytest.approx(0.5)
    x = np.linspace(-5, 5, 101)
    assert np.all((reflect_fold(x) >= 0) & (reflect_fold(x) <= 1))


def test_problem_validation():
    with pytest.raises(ValueError):
        AllenCahnProblem(LINEAR, 1.0, lambda x: 2.0 * np.ones_like(x), 0.1)
    with pytest.raises(ValueError):
        AllenCahnProblem(LINEAR, -1.0, step_profile, 0.1)


def test_tie_probability():
    assert TernaryModelParams(0.1, 1.0).tie_probability == pytest.approx(0.2 / 3.3)
    assert TernaryModelParams(0.1, 1.0).tie_probability == pytest.approx(0.06061, abs=1e-5)


def test_cubic_identity():
    p = TernaryModelParams(0.1, 1.0)
    assert cubic_identity_residual(0.0, p) == 0.0
    assert cubic_identity_residual(1.0, p) == 0.0
    half = TernaryModelParams(0.1, 1.0)
    lhs = 0.25 * (0.1 * 1.0) / 0.01
    assert lhs == pytest.approx(2.5)
    assert cubic_identity_residual(0.5, half) <= 1e-12
    for eps in (0.1, 0.5, 1.0):
        for nu in (0.1, 1.0, 3.0):
            for u in np.linspace(0, 1, 11):
                assert cubic_identity_residual(u, TernaryModelParams(eps, nu)) <= 1e-12


def test_ternary_vote_rule():
    rule = _TernaryRule(0.3)
    rng = RandomStream(1)
    ones = np.array([3] * 100 + [0] * 100 + [2] * 100)
    out = rule.vote(None, ones, rng)
    assert out[:100].all() and not out[100:200].any() and out[200:].all()
    tie = rule.vote(None, np.ones(10**5, dtype=np.int64), rng)
    assert within(summarize(tie), 0.3)


def test_ternary_unanimous_leaves():
    params = TernaryModelParams(0.5, 0.5)
    one = lambda x: np.ones_like(np.asarray(x, dtype=float))
    zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    for i in range(20):
        assert simulate_ternary(0.4, 0.05, params, one, RandomStream(2, i)) == 1
        assert simulate_ternary(0.4, 0.05, params, zero, RandomStream(3, i)) == 0


def test_tree_without_branching(linear_table):
    t = 0.01
    disp = []
    for i in range(3000):
        tree = simulate_tree(0.5, problem(rate=0.0, t=t), linear_table, RandomStream(4, i))
        assert tree.size == 1 and tree.is_leaf[0]
        disp.append(tree.position[0] - 0.5)
    assert np.var(disp, ddof=1) == pytest.approx(2 * t, rel=0.1)


def test_tree_zero_horizon(linear_table):
    tree = simulate_tree(0.3, problem(t=0.0), linear_table, RandomStream(5))
    assert tree.size == 1 and tree.position[0] == 0.3


def test_unary_tree_node_count(registry_table):
    table = registry_table("constant-half")
    lam, t = 2.0, 0.5
    sizes = [simulate_tree(0.5, problem(rate=lam, t=t), table, RandomStream(6, i)).size for i in range(4000)]
    assert within(summarize(sizes), 1 + lam * t)


def test_tree_structure(registry_table):
    tree = simulate_tree(0.5, problem(rate=3.0, t=0.5), registry_table("cubic-voting"), RandomStream(7))
    assert tree.parent[0] == -1
    for i in range(1, tree.size):
        p = tree.parent[i]
        assert 0 <= p < i
        assert tree.birth[i] == tree.death[p]
    for i in np.flatnonzero(~tree.is_leaf):
        assert tree.children(i).size == registry_table("cubic-voting").level(int(tree.level[i])).eta
    assert np.all(tree.death[tree.is_leaf] == 0.5)


def test_node_cap(registry_table):
    with pytest.raises(NodeCapExceeded):
        for i in range(50):
            simulate_tree(0.5, problem(rate=20.0, t=1.0), registry_table("cubic-voting"), RandomStream(8, i), node_cap=5)


def test_vote_root_unanimous(registry_table):
    table = registry_table("classical")
    one = lambda x: np.ones_like(np.asarray(x, dtype=float))
    zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    for i in range(30):
        tree = simulate_tree(0.5, problem(rate=2.0, t=0.5, forcing=table.target), table, RandomStream(9, i))
        assert vote_root(tree, table, one, RandomStream(10, i)) == 1
        assert vote_root(tree, table, zero, RandomStream(11, i)) == 0


def test_vote_root_leaf_only(linear_table):
    tree = simulate_tree(0.8, problem(t=0.0), linear_table, RandomStream(12))
    rng = RandomStream(13)
    votes = [vote_root(tree, linear_table, step_profile, rng) for _ in range(4000)]
    assert within(summarize(votes), 0.9)


def test_field_at_time_zero(linear_table):
    snap = estimate_field(problem(t=0.0), linear_table, [0.2, 0.8], 20_000, RandomStream(14))
    for m, se, target in zip(snap.values, snap.std_errors, (0.1, 0.9)):
        assert abs(m - target) <= 4 * se


def test_field_fixed_point(registry_table):
    half = initial_condition("half")
    snap = estimate_field(problem(u0=half, t=0.5), registry_table("linear13"), [0.1, 0.5, 0.9], 20_000, RandomStream(15))
    assert np.all(np.abs(snap.values - 0.5) <= 4 * snap.std_errors)
    assert snap.valid


def test_field_against_fd(registry_table):
    grid = np.array([0.3, 0.5, 0.7])
    pb = problem()
    mc = estimate_field(pb, registry_table("linear13"), grid, 20_000, RandomStream(16))
    fd = interpolate(fd_solve(pb), grid)
    assert np.all(np.abs(mc.values - fd) <= 4 * mc.std_errors + 5e-3)


def test_ternary_field_against_fd():
    params = TernaryModelParams(0.5, 0.5)
    grid = np.array([0.3, 0.7])
    mc = estimate_ternary_field(params, step_profile, 0.1, grid, 20_000, RandomStream(17))
    fd = interpolate(fd_solve(params.problem(step_profile, 0.1)), grid)
    assert np.all(np.abs(mc.values - fd) <= 4 * mc.std_errors + 5e-3)


def test_field_thread_invariant(linear_table):
    a = estimate_field(problem(t=0.1), linear_table, [0.4, 0.6], 9000, RandomStream(18), threads=1)
    b = estimate_field(problem(t=0.1), linear_table, [0.4, 0.6], 9000, RandomStream(18), threads=4)
    assert np.array_equal(a.values, b.values) and a.excluded_fraction == b.excluded_fraction


def test_fd_heat_eigenfunction():
    t = 0.1
    snap = fd_solve(problem(u0=COS, rate=0.0, t=t))
    exact = 0.5 * (1 + math.exp(-math.pi**2 * t) * np.cos(math.pi * snap.grid))
    assert np.abs(snap.values - exact).max() <= 1e-4


def test_fd_equilibrium():
    snap = fd_solve(problem(u0=initial_condition("half"), t=0.5))
    assert np.abs(snap.values - 0.5).max() <= 1e-8


def test_fd_second_order_in_space():
    pb = problem(u0=COS, t=0.1)
    sols = [fd_solve(pb, grid_n=n) for n in (32, 64, 128)]
    coarse = [s.values[:: s.values.size // 32] for s in sols]
    err1 = np.abs(coarse[0] - coarse[1]).max()
    err2 = np.abs(coarse[1] - coarse[2]).max()
    assert 3.0 <= err1 / err2 <= 5.0


def test_fd_rejects_unstable_dt():
    with pytest.raises(StabilityError):
        fd_solve(problem(), grid_n=64, dt=1e-3)


def test_cell_average_preserves_mass():
    x = np.linspace(0, 1, 257)
    h = 1 / 256
    u = cell_average(step_profile, x, h)
    # trapezoid rule over the nodes equals the exact integral 0.5
    assert np.trapezoid(u, x) == pytest.approx(0.5, abs=1e-12)


def test_initial_condition_specs(tmp_path):
    assert initial_condition("const:0.2")(0.7) == pytest.approx(0.2)
    assert initial_condition("step")(0.75) == pytest.approx(0.9)
    path = tmp_path / "u0.csv"
    path.write_text("0,0.2\n1,0.6\n")
    assert initial_condition(str(path))(0.5) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        initial_condition("const:1.5")
