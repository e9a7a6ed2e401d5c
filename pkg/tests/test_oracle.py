"""Grid-search upper bound and exact pattern enumeration."""

import numpy as np
import pytest

from bilevelkit.kkt import build_kkt, kkt_residual
from bilevelkit.model import BilevelModel, Level, Rel, Sense, affine, quad
from bilevelkit.oracle import (
    BilevelInfeasibleError,
    GridSpec,
    LowerLevelError,
    OracleError,
    PatternCapError,
    UnboundedPatternError,
    enumerate_patterns,
    grid_search,
    solve_lower,
)
from bilevelkit.svr import build_bilevel, generate_instance, one_sample_instance


@pytest.fixture(scope="module")
def micro_model():
    return build_bilevel(one_sample_instance())


def test_default_grid_shape():
    g = GridSpec.default()
    assert len(g.c_values) == 22  # zero plus 21 log-spaced points
    assert g.c_values[0] == 0.0
    assert g.c_values[1] == pytest.approx(1e-3)
    assert g.c_values[-1] == pytest.approx(1e3)
    assert len(g.eps_values) == 21
    assert g.eps_values[0] == 0.0 and g.eps_values[-1] == 2.0


def test_grid_spec_validation():
    with pytest.raises(OracleError):
        GridSpec(c_values=(), eps_values=(0.0,))
    with pytest.raises(OracleError):
        GridSpec(c_values=(1.0, 0.5), eps_values=(0.0,))  # not ascending
    with pytest.raises(OracleError):
        GridSpec(c_values=(-1.0,), eps_values=(0.0,))


def test_lower_solve_micro_triplet(micro_model):
    model = micro_model
    c_var = model.variable_by_name("C").id
    eps = model.variable_by_name("eps").id
    w = model.variable_by_name("w[0]").id

    # C = 10 presses the fit: w = 1, no slack, objective 1
    sol = solve_lower(model, {c_var: 10.0, eps: 0.0})
    assert sol.objective == pytest.approx(1.0)
    assert sol.point[w] == pytest.approx(1.0)

    # C = 0 ignores the slack entirely: w = 0 exactly
    sol = solve_lower(model, {c_var: 0.0, eps: 0.0})
    assert sol.objective == pytest.approx(0.0, abs=1e-12)
    assert sol.point[w] == pytest.approx(0.0, abs=1e-12)

    # wide tube: w = 0 is feasible with zero slack
    sol = solve_lower(model, {c_var: 10.0, eps: 2.0})
    assert sol.objective == pytest.approx(0.0, abs=1e-12)


def test_lower_solution_is_kkt_consistent(micro_model):
    model = micro_model
    kkt = build_kkt(model)
    c_var = model.variable_by_name("C").id
    eps = model.variable_by_name("eps").id
    sol = solve_lower(model, {c_var: 10.0, eps: 0.0}, kkt=kkt)
    point = dict(sol.point)
    point[c_var] = 10.0
    point[eps] = 0.0
    xi_u = model.variable_by_name("xi_U[1]").id
    point[xi_u] = abs(1.0 - point[model.variable_by_name("w[0]").id])
    assert kkt_residual(kkt, point).max() <= 1e-8


def test_lower_solve_rejects_partial_assignment(micro_model):
    model = micro_model
    c_var = model.variable_by_name("C").id
    with pytest.raises(LowerLevelError):
        solve_lower(model, {c_var: 1.0})  # eps missing


def test_lower_solve_rejects_out_of_bounds(micro_model):
    model = micro_model
    c_var = model.variable_by_name("C").id
    eps = model.variable_by_name("eps").id
    with pytest.raises(LowerLevelError):
        solve_lower(model, {c_var: -1.0, eps: 0.0})


def test_micro_instance_enumeration(micro_model):
    res = enumerate_patterns(micro_model)
    assert res.certificate == "PatternExact"
    assert abs(res.objective) <= 1e-12
    # ties resolve to the lowest bitmask
    assert res.pattern_mask == 0x1
    assert res.patterns_feasible == 6


def test_micro_instance_grid():
    res = grid_search(one_sample_instance())
    assert res.certificate == "GridFeasible"
    assert abs(res.objective) <= 1e-12


def test_grid_point_is_kkt_checkable():
    inst = generate_instance(4, 1, 7)
    res = grid_search(inst)
    kkt = build_kkt(build_bilevel(inst))
    assert kkt_residual(kkt, res.point).max() <= 1e-7


def test_frozen_sandwich_4_01_seed7():
    inst = generate_instance(4, 1, 7)
    exact = enumerate_patterns(build_bilevel(inst))
    upper = grid_search(inst)
    assert exact.objective == pytest.approx(0.03438078986051102, abs=1e-12)
    assert exact.pattern_mask == 0x5
    assert exact.patterns_feasible == 20
    assert upper.objective == pytest.approx(0.0344159891581019, abs=1e-12)
    assert exact.objective <= upper.objective + 1e-9


def test_singleton_grid():
    inst = one_sample_instance()
    res = grid_search(inst, GridSpec(c_values=(2.0,), eps_values=(0.0,)))
    assert abs(res.objective) <= 1e-12


def test_pattern_cap_guard():
    # 18 samples -> 9 in-sample -> 27 pairs, beyond the default cap of 24
    model = build_bilevel(generate_instance(18, 1, 0))
    with pytest.raises(PatternCapError):
        enumerate_patterns(model)


def test_every_pattern_infeasible_raises():
    m = BilevelModel()
    u = m.add_variable("u", Level.UPPER, lb=0.0, ub=1.0)
    w = m.add_variable("w", Level.LOWER)
    m.set_objective(Level.UPPER, Sense.MIN, affine({u: 1.0}))
    m.set_objective(Level.LOWER, Sense.MIN, quad({(w, w): 1.0}, terms={w: -2.0}))
    m.add_constraint("floor", Level.LOWER, affine({w: 1.0}), Rel.GE, 1.0)
    # the lower level forces w = 1 but the upper side forbids it
    m.add_constraint("cap", Level.UPPER, affine({w: 1.0}), Rel.LE, 0.0)
    with pytest.raises(BilevelInfeasibleError):
        enumerate_patterns(m)


def test_unbounded_pattern_is_flagged():
    m = BilevelModel()
    u = m.add_variable("u", Level.UPPER)  # free and unpenalized below
    w = m.add_variable("w", Level.LOWER)
    m.set_objective(Level.UPPER, Sense.MIN, affine({u: -1.0}))
    m.set_objective(Level.LOWER, Sense.MIN, quad({(w, w): 1.0}))
    with pytest.raises(UnboundedPatternError, match="manual review"):
        enumerate_patterns(m)


def test_enumeration_point_is_bilevel_feasible():
    inst = generate_instance(6, 2, 1)
    model = build_bilevel(inst)
    kkt = build_kkt(model)
    res = enumerate_patterns(model, kkt=kkt)
    assert kkt_residual(kkt, res.point).max() <= 1e-7
    # upper objective recomputed from the weights agrees
    w = np.array([res.point[model.variable_by_name(f"w[{j}]").id]
                  for j in range(inst.features)])
    from bilevelkit.svr import upper_loss
    assert upper_loss(inst, w) == pytest.approx(res.objective, abs=1e-8)
