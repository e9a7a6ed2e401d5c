"""Mode table, complementarity encodings, and binary expansion."""

import pytest

from bilevelkit.kkt import build_kkt
from bilevelkit.model import Rel
from bilevelkit.reformulate import (
    CLI_MODE_NAMES,
    ExpansionParams,
    Mode,
    ReformulationError,
    expansion_hints,
    reformulate,
)
from bilevelkit.svr import build_bilevel, generate_instance, one_sample_instance


@pytest.fixture(scope="module")
def ten_two():
    model = build_bilevel(generate_instance(10, 2, 0))
    return model, build_kkt(model)


@pytest.fixture(scope="module")
def micro():
    model = build_bilevel(one_sample_instance())
    return model, build_kkt(model)


def test_cli_names_round_trip():
    for name in CLI_MODE_NAMES:
        assert Mode.from_cli_name(name).cli_name == name
    with pytest.raises(ReformulationError):
        Mode.from_cli_name("kkt")


def test_expansion_flags():
    assert not Mode.product().requires_expansion()
    assert Mode.product(expanded=True).requires_expansion()
    assert Mode.strong_duality(expanded=True).requires_expansion()
    with pytest.raises(ReformulationError):
        Mode(Mode.sos1().kind, expanded=True)


def test_mode_parameter_validation():
    with pytest.raises(ReformulationError):
        Mode.big_m(primal=0.0)
    with pytest.raises(ReformulationError):
        Mode.product(tau=-1.0)


def test_expanded_mode_requires_params(micro):
    model, kkt = micro
    with pytest.raises(ReformulationError):
        reformulate(model, kkt, Mode.product(expanded=True), None)


# frozen sizes for the 10/02 instance (15 complementarity pairs)
TEN_TWO_COUNTS = {
    "sos1": {"variables": 44, "binaries": 0, "linear": 42, "quadratic": 0,
             "sos1": 15, "indicator": 0},
    "indicator": {"variables": 44, "binaries": 15, "linear": 27, "quadratic": 0,
                  "sos1": 0, "indicator": 30},
    "bigm": {"variables": 44, "binaries": 15, "linear": 57, "quadratic": 0,
             "sos1": 0, "indicator": 0},
    "product": {"variables": 29, "binaries": 0, "linear": 27, "quadratic": 15,
                "sos1": 0, "indicator": 0},
    "strong-duality": {"variables": 29, "binaries": 0, "linear": 27, "quadratic": 1,
                       "sos1": 0, "indicator": 0},
}


@pytest.mark.parametrize("name", sorted(TEN_TWO_COUNTS))
def test_frozen_counts_10_02(ten_two, name):
    model, kkt = ten_two
    info = reformulate(model, kkt, Mode.from_cli_name(name))
    assert info.slm.counts() == TEN_TWO_COUNTS[name]
    assert len(info.pairs) == 15


def test_sos1_sets_pair_slack_with_dual(ten_two):
    model, kkt = ten_two
    info = reformulate(model, kkt, Mode.sos1())
    for s in info.slm.sos1_sets:
        assert len(s.members) == 2
    # each pair contributed one set and one explicit slack variable
    assert len(info.pair_slack_vars) == 15


def test_bigm_rows_use_both_caps(micro):
    model, kkt = micro
    info = reformulate(model, kkt, Mode.big_m(primal=7.0, dual=3.0))
    dual_rows = [r for r in info.slm.linear_constraints if r.name.startswith("bigm_dual")]
    slack_rows = [r for r in info.slm.linear_constraints if r.name.startswith("bigm_slack")]
    assert len(dual_rows) == len(slack_rows) == len(info.pairs) == 3
    for idx, row in enumerate(dual_rows):
        z = info.pair_binaries[idx]
        assert row.expr.terms[z] == pytest.approx(-3.0)  # dual - 3z <= 0
        assert row.rel is Rel.LE and row.rhs == 0.0
    for idx, row in enumerate(slack_rows):
        z = info.pair_binaries[idx]
        assert row.expr.terms[z] == pytest.approx(7.0)   # slack <= 7(1-z)
        assert row.rel is Rel.LE


def test_product_rows_carry_tau(micro):
    model, kkt = micro
    info = reformulate(model, kkt, Mode.product(tau=1e-6))
    assert all(q.rhs == pytest.approx(1e-6) for q in info.slm.quadratic_constraints)
    assert all(q.rel is Rel.LE for q in info.slm.quadratic_constraints)


def test_strong_duality_single_gap_row(micro):
    model, kkt = micro
    info = reformulate(model, kkt, Mode.strong_duality())
    (gap_row,) = info.slm.quadratic_constraints
    assert gap_row.rel is Rel.LE
    # primal-minus-dual gap closes at the true optimum (w=1, lam=2, C=2)
    ids = {v.name: v.id for v in info.slm.variables}
    point = {v.id: 0.0 for v in info.slm.variables}
    point[ids["C"]] = 2.0
    point[ids["w[0]"]] = 1.0
    point[ids["dual_in_pos[0]"]] = 2.0
    assert gap_row.expr.evaluate(point) == pytest.approx(0.0, abs=1e-12)


def test_expansion_grid_values_two_bits(micro):
    model, kkt = micro
    params = ExpansionParams(var_lb=-100.0, var_ub=100.0, bits=2)
    info = reformulate(model, kkt, Mode.product(expanded=True), params)
    # duals are bounded below by zero, so their grids live on [0, 100]
    from bilevelkit.solver import LpBuilder, LpStatus
    some_dual = next(iter(info.expansion_binaries))
    bits = info.expansion_binaries[some_dual]
    assert len(bits) == 2
    # the grid-link row pins the expanded variable to lo + step·(sum 2^k b_k)
    link = next(r for r in info.slm.linear_constraints
                if some_dual in r.expr.terms and all(b in r.expr.terms for b in bits))
    coeff = {b: link.expr.terms[b] for b in bits}
    step = 100.0 / 3.0
    assert sorted(abs(c) for c in coeff.values()) == pytest.approx([step, 2 * step])


def test_expansion_bits_get_msb_first_priority(micro):
    model, kkt = micro
    params = ExpansionParams(bits=4)
    info = reformulate(model, kkt, Mode.product(expanded=True), params)
    for bits in info.expansion_binaries.values():
        prios = [info.slm.branch_priority[b] for b in bits]
        assert prios == [1, 2, 3, 4]  # most significant bit branches first


def test_each_product_spawns_four_envelope_rows(micro):
    model, kkt = micro
    base = reformulate(model, kkt, Mode.product())
    info = reformulate(model, kkt, Mode.product(expanded=True), ExpansionParams(bits=3))
    # 7 bilinear terms across the 3 product rows, one product var per bit
    assert len(info.expansion_products) == 7 * 3
    n_replaced = len(base.slm.quadratic_constraints)
    extra = len(info.slm.linear_constraints) - len(base.slm.linear_constraints)
    # four envelope rows per product var, one link per grid, one linear
    # replacement per former quadratic row
    assert extra == 4 * len(info.expansion_products) + len(info.expansion_binaries) + n_replaced
    # expanded leaves replace every quadratic row with linear ones
    assert info.slm.quadratic_constraints == []


def test_hints_snap_reference_onto_grid(micro):
    model, kkt = micro
    params = ExpansionParams(bits=4)
    info = reformulate(model, kkt, Mode.product(expanded=True), params)
    reference = {v.id: 0.0 for v in info.slm.variables}
    hints = expansion_hints(info, reference)
    assert hints  # floor/round/ceil of zero coincide: one deduped hint
    assert len(hints) == 1
    binaries = {b for bits in info.expansion_binaries.values() for b in bits}
    for hint in hints:
        assert set(hint) == binaries
        assert all(val in (0, 1) for val in hint.values())
    # an off-grid value yields distinct floor and ceil assignments
    some_dual = next(iter(info.expansion_binaries))
    reference[some_dual] = 10.0  # grid step is 100/15
    hints = expansion_hints(info, reference)
    assert len(hints) >= 2


def test_shared_expansion_between_rows(ten_two):
    model, kkt = ten_two
    info = reformulate(model, kkt, Mode.strong_duality(expanded=True), ExpansionParams(bits=3))
    # w appears squared and C multiplies every in-sample slack, yet each
    # expanded variable owns exactly one grid
    assert all(len(bits) == 3 for bits in info.expansion_binaries.values())
    names = {info.slm.variable(v).name for v in info.expansion_binaries}
    assert "C" in names
    assert any(n.startswith("w[") for n in names)
    assert not any(n.startswith("dual_lb") for n in names)
