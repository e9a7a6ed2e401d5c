"""Branch-and-bound: statuses, limits, hints, events, gap arithmetic."""

import pytest

from bilevelkit.model import Rel, Sense, SingleLevelModel, affine
from bilevelkit.solver import SolveOptions, SolveStatus, compute_gap, solve_bnb


def _knapsack_like():
    # min -x - y over binaries with 2x + 2y <= 1: LP root is fractional,
    # integer optimum is a single variable at 0 (obj 0 is infeasible to beat)
    slm = SingleLevelModel()
    x = slm.add_variable("x", lb=0.0, ub=1.0, binary=True)
    y = slm.add_variable("y", lb=0.0, ub=1.0, binary=True)
    slm.objective = (Sense.MIN, affine({x: -1.0, y: -1.0}))
    slm.add_linear("cap", affine({x: 2.0, y: 2.0}), Rel.LE, 1.0)
    return slm, x, y


def test_pure_lp_solves_at_root():
    slm = SingleLevelModel()
    x = slm.add_variable("x", lb=0.0, ub=2.0)
    slm.objective = (Sense.MIN, affine({x: -1.0}))
    res = solve_bnb(slm)
    assert res.status is SolveStatus.OPTIMAL
    assert res.objective == pytest.approx(-2.0)
    assert res.nodes == 1
    assert res.gap_pct == pytest.approx(0.0, abs=1e-9)


def test_binary_branching_closes():
    slm, x, y = _knapsack_like()
    res = solve_bnb(slm)
    assert res.status is SolveStatus.OPTIMAL
    assert res.objective == pytest.approx(0.0, abs=1e-9)
    assert res.point[x] == pytest.approx(0.0, abs=1e-7)
    assert res.point[y] == pytest.approx(0.0, abs=1e-7)
    assert res.bound <= res.objective + 1e-9


def test_sos1_branching():
    # min 2a + b with a + b = 1 and SOS1{a, b}: picking b alone is cheaper
    slm = SingleLevelModel()
    a = slm.add_variable("a", lb=0.0)
    b = slm.add_variable("b", lb=0.0)
    slm.objective = (Sense.MIN, affine({a: 2.0, b: 1.0}))
    slm.add_linear("mix", affine({a: 1.0, b: 1.0}), Rel.EQ, 1.0)
    slm.add_sos1("pick", [a, b], [1.0, 2.0])
    res = solve_bnb(slm)
    assert res.status is SolveStatus.OPTIMAL
    assert res.objective == pytest.approx(1.0)
    assert res.point[a] == pytest.approx(0.0, abs=1e-9)
    assert res.point[b] == pytest.approx(1.0)


def test_infeasible_model():
    slm = SingleLevelModel()
    x = slm.add_variable("x", lb=0.0, ub=1.0)
    slm.objective = (Sense.MIN, affine({x: 1.0}))
    slm.add_linear("impossible", affine({x: 1.0}), Rel.GE, 2.0)
    res = solve_bnb(slm)
    assert res.status is SolveStatus.INFEASIBLE
    assert res.point is None


def test_zero_time_limit_reports_root_bound():
    slm, x, y = _knapsack_like()
    res = solve_bnb(slm, SolveOptions(time_limit_s=0.0))
    assert res.status is SolveStatus.TIME_LIMIT
    # the root relaxation (x + y = 0.5 fractional) is still processed
    assert res.bound == pytest.approx(-0.5)
    assert res.point is None
    assert res.objective is None


def test_hint_becomes_starting_incumbent():
    slm, x, y = _knapsack_like()
    opts = SolveOptions(time_limit_s=0.0, hints=[{x: 0, y: 0}])
    res = solve_bnb(slm, opts)
    assert res.status is SolveStatus.TIME_LIMIT
    assert res.objective == pytest.approx(0.0, abs=1e-12)
    assert res.point[x] == pytest.approx(0.0)
    # infeasible hints are discarded silently
    opts = SolveOptions(hints=[{x: 1, y: 1}, {x: 0, y: 0}])
    res = solve_bnb(slm, opts)
    assert res.status is SolveStatus.OPTIMAL
    assert res.objective == pytest.approx(0.0, abs=1e-9)


def test_node_limit():
    slm, x, y = _knapsack_like()
    res = solve_bnb(slm, SolveOptions(node_limit=1))
    assert res.status in (SolveStatus.NODE_LIMIT, SolveStatus.OPTIMAL)
    assert res.nodes <= 2  # the node in flight may finish


def test_events_are_monotone():
    slm, x, y = _knapsack_like()
    res = solve_bnb(slm)
    nodes = [n for n, _, _ in res.events]
    assert nodes == sorted(nodes)
    incumbents = [obj for _, obj, _ in res.events if obj is not None]
    assert incumbents == sorted(incumbents, reverse=True)
    bounds = [b for _, _, b in res.events]
    assert bounds == sorted(bounds)


def test_repeat_solves_identical():
    slm, x, y = _knapsack_like()
    a = solve_bnb(slm)
    b = solve_bnb(slm)
    assert a.objective == b.objective
    assert a.nodes == b.nodes
    assert a.events == b.events
    assert a.point == b.point


def test_gap_formula():
    assert compute_gap(1.0, 0.5) == pytest.approx(100.0)
    assert compute_gap(0.0, 0.0) == 0.0
    # tiny bounds are floored so the gap stays finite
    assert compute_gap(1e-12, 0.0) == pytest.approx(1.0)
    assert compute_gap(2.0, 2.0) == 0.0
