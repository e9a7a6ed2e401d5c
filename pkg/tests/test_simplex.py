"""Bounded-variable simplex: optima, statuses, duals, per-call overrides."""

import math

import numpy as np
import pytest

from bilevelkit.model import Rel
from bilevelkit.solver import LpBuilder, LpStatus


def _build(fn):
    b = LpBuilder()
    out = fn(b)
    return b.build(), out


def test_box_lp_optimum():
    def make(b):
        x = b.add_var(0.0, 1.0, obj=-1.0)
        y = b.add_var(0.0, 1.0, obj=-1.0)
        b.add_row({x: 1.0, y: 1.0}, Rel.LE, 1.5)
        return x, y

    lp, (x, y) = _build(make)
    res = lp.solve()
    assert res.status is LpStatus.OPTIMAL
    assert res.objective == pytest.approx(-1.5)
    assert res.x[x] + res.x[y] == pytest.approx(1.5)


def test_equality_row_and_free_variable():
    def make(b):
        x = b.add_var(-math.inf, math.inf, obj=1.0)
        y = b.add_var(0.0, math.inf, obj=2.0)
        b.add_row({x: 1.0, y: 1.0}, Rel.EQ, 3.0)
        b.add_row({x: 1.0}, Rel.GE, -5.0)
        return x, y

    lp, (x, y) = _build(make)
    res = lp.solve()
    # push everything into the cheap free variable
    assert res.status is LpStatus.OPTIMAL
    assert res.x[x] == pytest.approx(3.0)
    assert res.x[y] == pytest.approx(0.0)
    assert res.objective == pytest.approx(3.0)


def test_infeasible_detected():
    def make(b):
        x = b.add_var(0.0, 1.0)
        b.add_row({x: 1.0}, Rel.GE, 2.0)
        return x

    lp, _ = _build(make)
    assert lp.solve().status is LpStatus.INFEASIBLE


def test_unbounded_detected():
    def make(b):
        x = b.add_var(0.0, math.inf, obj=-1.0)
        return x

    lp, _ = _build(make)
    assert lp.solve().status is LpStatus.UNBOUNDED


def test_candidate_rows_toggle_per_call():
    def make(b):
        x = b.add_var(0.0, 10.0, obj=-1.0)
        cand = b.add_candidate_row({x: 1.0}, Rel.LE, 3.0)
        return x, cand

    lp, (x, cand) = _build(make)
    loose = lp.solve(active_candidates=())
    tight = lp.solve(active_candidates=(cand,))
    assert loose.objective == pytest.approx(-10.0)
    assert tight.objective == pytest.approx(-3.0)
    # toggling back reproduces the loose solve exactly
    again = lp.solve(active_candidates=())
    assert again.objective == loose.objective
    assert np.array_equal(again.x, loose.x)


def test_bound_overrides_pin_variables():
    def make(b):
        x = b.add_var(0.0, 10.0, obj=-1.0)
        y = b.add_var(0.0, 10.0, obj=-1.0)
        b.add_row({x: 1.0, y: 1.0}, Rel.LE, 12.0)
        return x, y

    lp, (x, y) = _build(make)
    res = lp.solve(bound_overrides={y: (0.0, 0.0)})
    assert res.x[y] == pytest.approx(0.0)
    assert res.x[x] == pytest.approx(10.0)


def test_ge_row_dual_sign_and_value():
    # min x s.t. x >= 2: dual of the row prices the rhs, so it is 1
    def make(b):
        x = b.add_var(0.0, math.inf, obj=1.0)
        r = b.add_row({x: 1.0}, Rel.GE, 2.0)
        return x, r

    lp, (x, r) = _build(make)
    res = lp.solve(want_duals=True)
    assert res.objective == pytest.approx(2.0)
    assert res.row_duals[r] == pytest.approx(1.0)


def test_deterministic_repeat_solves():
    def make(b):
        xs = [b.add_var(0.0, 1.0, obj=float((-1) ** k) * (k + 1)) for k in range(6)]
        b.add_row({v: 1.0 for v in xs}, Rel.LE, 3.0)
        b.add_row({xs[0]: 1.0, xs[3]: -2.0}, Rel.GE, -1.0)
        return xs

    lp, _ = _build(make)
    a = lp.solve()
    b2 = lp.solve()
    assert a.objective == b2.objective
    assert np.array_equal(a.x, b2.x)
