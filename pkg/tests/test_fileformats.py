"""LP text round-trips, MPS export, and byte determinism."""

import math

import pytest

from bilevelkit.fileformats import (
    QuadraticUnsupportedError,
    export_model,
    read_lp,
    sanitize_name,
    write_lp,
    write_mps,
)
from bilevelkit.kkt import build_kkt
from bilevelkit.model import Rel, Sense, SingleLevelModel, affine
from bilevelkit.reformulate import Mode, reformulate
from bilevelkit.svr import build_bilevel, generate_instance


@pytest.fixture(scope="module")
def ten_two():
    model = build_bilevel(generate_instance(10, 2, 0))
    return model, build_kkt(model)


def _reformulated(ten_two, name):
    model, kkt = ten_two
    return reformulate(model, kkt, Mode.from_cli_name(name)).slm


def test_sanitize_brackets():
    assert sanitize_name("xi_U[3]") == "xi_U(3)"
    assert sanitize_name("plain") == "plain"


@pytest.mark.parametrize("name", ["sos1", "indicator", "bigm", "product", "strong-duality"])
def test_lp_round_trip_preserves_counts(ten_two, name):
    slm = _reformulated(ten_two, name)
    text = write_lp(slm)
    back = read_lp(text)
    assert back.counts() == slm.counts()
    # bounds survive: compare the full sorted bound multiset
    orig = sorted((v.lb, v.ub) for v in slm.variables)
    rt = sorted((v.lb, v.ub) for v in back.variables)
    assert rt == pytest.approx(orig)


def test_lp_writer_is_deterministic(ten_two):
    slm = _reformulated(ten_two, "bigm")
    assert write_lp(slm) == write_lp(slm)
    # ids are not part of the text, so the first parse renumbers variables
    # by appearance; from there on the cycle is a fixed point
    once = write_lp(read_lp(write_lp(slm)))
    assert write_lp(read_lp(once)) == once


def test_lp_round_trip_preserves_coefficients(ten_two):
    slm = _reformulated(ten_two, "bigm")
    back = read_lp(write_lp(slm))
    rows = {r.name: r for r in back.linear_constraints}
    for orig in slm.linear_constraints:
        row = rows[sanitize_name(orig.name)]
        assert row.rel is orig.rel
        assert row.rhs == pytest.approx(orig.rhs, abs=1e-12)
        got = {back.variable(v).name: c for v, c in row.expr.terms.items()}
        want = {sanitize_name(slm.variable(v).name): c for v, c in orig.expr.terms.items()}
        assert got == pytest.approx(want)


def test_lp_round_trip_keeps_binaries_and_sos(ten_two):
    sos_model = _reformulated(ten_two, "sos1")
    text = write_lp(sos_model)
    assert text.count("S1::") == 15
    back = read_lp(text)
    assert len(back.sos1_sets) == 15
    assert all(len(s.members) == 2 for s in back.sos1_sets)

    ind_model = _reformulated(ten_two, "indicator")
    back = read_lp(write_lp(ind_model))
    assert len(back.indicator_constraints) == 30
    assert len(back.binaries) == 15


def test_quadratic_objective_and_rows_round_trip(ten_two):
    slm = _reformulated(ten_two, "product")
    back = read_lp(write_lp(slm))
    assert len(back.quadratic_constraints) == 15
    q = back.quadratic_constraints[0]
    assert q.rel is Rel.LE
    assert q.expr.quad  # bilinear terms survived


def test_hand_written_lp_parses():
    text = """\\ tiny example
Minimize
 obj: x + 2 y + 1
Subject To
 r1: x + y <= 10
 r2: 2 x - y >= -3
 curve: [ x ^ 2 + 4 x * y ] <= 9
 link: z = 1 -> x <= 0
Bounds
 -5 <= x <= 5
 y free
 w = 2.5
Binaries
 z
SOS
 pick: S1:: x:1 w:2
End
"""
    slm = read_lp(text)
    assert slm.counts()["variables"] == 4
    x = slm.variable_by_name("x")
    assert (x.lb, x.ub) == (-5.0, 5.0)
    assert slm.variable_by_name("y").is_free()
    w = slm.variable_by_name("w")
    assert w.lb == w.ub == 2.5
    assert slm.variable_by_name("z").id in slm.binaries
    sense, obj = slm.objective
    assert sense is Sense.MIN
    assert obj.constant == 1.0
    assert len(slm.indicator_constraints) == 1
    assert len(slm.sos1_sets) == 1
    r2 = next(r for r in slm.linear_constraints if r.name == "r2")
    assert r2.rhs == -3.0 and r2.rel is Rel.GE
    (curve,) = slm.quadratic_constraints
    assert curve.expr.quad == {(x.id, x.id): 1.0, tuple(sorted((x.id, slm.variable_by_name("y").id))): 4.0}
    assert curve.rhs == 9.0


def test_integer_valued_numbers_print_bare():
    slm = SingleLevelModel()
    x = slm.add_variable("x", lb=0.0, ub=3.0)
    slm.objective = (Sense.MIN, affine({x: 2.0}))
    slm.add_linear("r", affine({x: 1.0}), Rel.LE, 5.0)
    text = write_lp(slm)
    assert "2 x" in text and "<= 5" in text
    assert "2.0 x" not in text


def test_mps_export_linear_modes(ten_two):
    slm = _reformulated(ten_two, "bigm")
    text = write_mps(slm)
    assert "MARKER" in text and "INTORG" in text
    assert text.startswith("NAME")
    assert text.rstrip().endswith("ENDATA")
    for section in ("ROWS", "COLUMNS", "RHS", "BOUNDS"):
        assert f"\n{section}\n" in text

    sos_model = _reformulated(ten_two, "sos1")
    assert "\nSOS\n" in write_mps(sos_model)

    ind_model = _reformulated(ten_two, "indicator")
    assert "\nINDICATORS\n" in write_mps(ind_model)


def test_mps_rejects_quadratic_rows(ten_two):
    slm = _reformulated(ten_two, "product")
    with pytest.raises(QuadraticUnsupportedError, match="prod"):
        write_mps(slm)


def test_export_model_writes_files(tmp_path, ten_two):
    slm = _reformulated(ten_two, "bigm")
    lp_path = tmp_path / "m.lp"
    mps_path = tmp_path / "m.mps"
    export_model(slm, "lp", lp_path)
    export_model(slm, "mps", mps_path)
    assert lp_path.read_text() == write_lp(slm)
    assert mps_path.read_text() == write_mps(slm)


def test_free_and_infinite_bounds_round_trip():
    slm = SingleLevelModel()
    slm.add_variable("a")  # free
    slm.add_variable("b", lb=0.0)  # LP default
    slm.add_variable("c", lb=-math.inf, ub=4.0)
    slm.objective = (Sense.MIN, affine({0: 1.0, 1: 1.0, 2: 1.0}))
    back = read_lp(write_lp(slm))
    assert back.variable_by_name("a").is_free()
    assert back.variable_by_name("b").lb == 0.0
    assert back.variable_by_name("b").ub == math.inf
    c = back.variable_by_name("c")
    assert c.lb == -math.inf and c.ub == 4.0
