"""Two independent ground-truth routes for cross-checking reformulations.

``grid_search`` sweeps (C, ε) over a fixed grid, solves the lower level at
each point and evaluates the upper loss there; every grid point is bilevel-
feasible, so the best one is a certified *upper bound* on the optimum.

``enumerate_patterns`` is the exact route: each complementarity pair is
fixed to one side (dual = 0 or slack = 0), every one of the 2^|pairs|
pattern LPs is solved with all sign constraints, stationarity and both
levels' feasibility included, and the minimum over patterns is the
optimistic bilevel optimum (the lower level is convex and satisfies
Slater's condition on these instances).

The two must sandwich every solver result:  enumerate ≤ solver ≤ grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kkt import KktSystem, build_kkt
from .model import (
    AffineExpr,
    BilevelModel,
    Level,
    QuadExpr,
    Rel,
    Sense,
    VarId,
)
from .solver.lp import LpBuilder, LpStatus
from .solver.qp import ConvexSubproblem, QpStatus, solve_convex
from . import svr


class OracleError(Exception):
    pass


class PatternCapError(OracleError):
    """Too many pairs for exhaustive enumeration; raise the cap knowingly."""


class UnboundedPatternError(OracleError):
    """A pattern LP is unbounded despite in-problem sign constraints; this
    cannot happen on the bundled instances and is flagged for manual review."""


class BilevelInfeasibleError(OracleError):
    """Every complementarity pattern is infeasible."""


class LowerLevelError(OracleError):
    """The parameterized lower level failed to solve."""


@dataclass(frozen=True)
class GridSpec:
    c_values: tuple[float, ...]
    eps_values: tuple[float, ...]

    def __post_init__(self):
        if not self.c_values or not self.eps_values:
            raise OracleError("grid must be nonempty")
        for seq in (self.c_values, self.eps_values):
            if any(v < 0 for v in seq) or list(seq) != sorted(seq):
                raise OracleError("grid values must be sorted and nonnegative")

    @staticmethod
    def default() -> "GridSpec":
        cs = (0.0,) + tuple(float(v) for v in np.logspace(-3.0, 3.0, 21))
        eps = tuple(float(v) for v in np.linspace(0.0, 2.0, 21))
        return GridSpec(cs, eps)


@dataclass
class OracleResult:
    objective: float
    point: dict[VarId, float]
    certificate: str  # "GridFeasible" or "PatternExact"
    pattern_mask: int | None = None
    patterns_feasible: int | None = None


@dataclass
class LowerSolution:
    """Lower-level optimum: the full point (upper values, lower primal and
    every dual, keyed by KKT variable ids) plus the lower objective value."""

    point: dict[VarId, float]
    objective: float


def _substituted(expr: QuadExpr, fixed: dict[VarId, float]) -> QuadExpr:
    """Replace fixed variables by their values; remaining quads must not mix
    fixed×fixed (those fold into the constant)."""
    out = QuadExpr()
    for (a, b), coeff in expr.quad.items():
        a_fixed, b_fixed = a in fixed, b in fixed
        if a_fixed and b_fixed:
            out.affine.constant += coeff * fixed[a] * fixed[b]
        elif a_fixed:
            out.affine.add_term(b, coeff * fixed[a])
        elif b_fixed:
            out.affine.add_term(a, coeff * fixed[b])
        else:
            out.add_quad_term(a, b, coeff)
    for v, coeff in expr.affine.terms.items():
        if v in fixed:
            out.affine.constant += coeff * fixed[v]
        else:
            out.affine.add_term(v, coeff)
    out.affine.constant += expr.affine.constant
    return out


def solve_lower(
    model: BilevelModel,
    upper_assignment: dict[VarId, float],
    kkt: KktSystem | None = None,
    warm: dict[VarId, float] | None = None,
) -> LowerSolution:
    """Solve the lower level with the upper variables fixed.

    The assignment must cover every upper variable that appears in the lower
    objective or a lower constraint, and must respect those variables'
    bounds (for the SVR instances that is exactly C ≥ 0, ε ≥ 0).
    """
    if kkt is None:
        kkt = build_kkt(model)
    for vid, val in upper_assignment.items():
        info = model.variable(vid)
        if val < info.lb - 1e-12 or val > info.ub + 1e-12:
            raise LowerLevelError(
                f"upper value {info.name} = {val} violates its bounds [{info.lb}, {info.ub}]"
            )

    lower_vars = model.level_variables(Level.LOWER)
    lower_ids = {info.id for info in lower_vars}
    objective = _substituted(kkt.lower_min_objective, upper_assignment)
    sub = ConvexSubproblem(lower_vars, objective, warm=warm)
    leftover: set[VarId] = {
        v for v in objective.variables() if v not in lower_ids
    }
    for dual in kkt.duals:
        if dual.kind != "constraint":
            continue  # variable bounds ride along on the VariableInfo
        body = AffineExpr(
            {v: c for v, c in dual.body.terms.items() if v not in upper_assignment},
            sum(c * upper_assignment[v] for v, c in dual.body.terms.items()
                if v in upper_assignment) + dual.body.constant,
        )
        leftover.update(v for v in body.terms if v not in lower_ids)
        sub.add_row(dual.name, body, dual.rel, dual.rhs)
    if leftover:
        names = sorted(model.variable(v).name for v in leftover)
        raise LowerLevelError(f"upper assignment misses {names}")

    res = solve_convex(sub)
    if res.status is QpStatus.INFEASIBLE:
        raise LowerLevelError(f"lower level infeasible (phase-1 residual {res.infeasibility:g})")
    if res.status is not QpStatus.OPTIMAL:
        raise LowerLevelError(f"lower level solve ended with status {res.status.value}")

    point = dict(upper_assignment)
    point.update(res.point)
    for dual in kkt.duals:
        if dual.kind == "constraint":
            point[dual.var] = res.row_duals[dual.name]
        elif dual.kind == "lb":
            point[dual.var] = res.bound_duals[dual.bound_var][0]
        else:
            point[dual.var] = res.bound_duals[dual.bound_var][1]
    return LowerSolution(point, res.objective)


def grid_search(inst: svr.SvrInstance, grid: GridSpec | None = None) -> OracleResult:
    """Best (C, ε) grid point by out-of-sample loss; certified upper bound.

    Deterministic: ties keep the first grid point in (c_values × eps_values)
    iteration order.  The returned point carries the reconstructed
    ξ^U_i = |y_i − x_i·w| together with the lower solution and its duals, so
    it is bilevel-feasible and KKT-checkable as returned.
    """
    grid = grid or GridSpec.default()
    model = svr.build_bilevel(inst)
    kkt = build_kkt(model)
    c_id = model.variable_by_name("C").id
    eps_id = model.variable_by_name("eps").id
    w_ids = [model.variable_by_name(f"w[{j}]").id for j in range(inst.features)]

    best_loss = math.inf
    best_sol: LowerSolution | None = None
    for c_val in grid.c_values:
        warm = None
        for eps_val in grid.eps_values:  # ascending: warm point stays feasible
            sol = solve_lower(model, {c_id: c_val, eps_id: eps_val}, kkt, warm=warm)
            warm = {vid: sol.point[vid] for vid in
                    (v.id for v in model.level_variables(Level.LOWER))}
            w = np.array([sol.point[j] for j in w_ids])
            loss = svr.upper_loss(inst, w)
            if loss < best_loss:  # strict: ties keep the earliest grid point
                best_loss = loss
                best_sol = sol

    assert best_sol is not None
    point = dict(best_sol.point)
    w = np.array([point[j] for j in w_ids])
    for i in inst.out_indices:
        resid = float(inst.y[i] - inst.x[i].dot(w))
        point[model.variable_by_name(f"xi_U[{i}]").id] = abs(resid)
    return OracleResult(best_loss, point, "GridFeasible")


def enumerate_patterns(
    model: BilevelModel,
    kkt: KktSystem | None = None,
    pair_cap: int = 24,
) -> OracleResult:
    """Exact optimistic bilevel optimum by exhausting complementarity
    patterns.

    Bit p of the pattern mask set means pair p's *slack* is pinned to zero
    (its dual stays free); clear means the *dual* is pinned to zero.  Every
    pattern LP carries the sign constraints, so each feasible pattern
    optimum is bilevel-feasible outright.  Among patterns within 1e-9 of
    the best objective the lowest bitmask wins.
    """
    if kkt is None:
        kkt = build_kkt(model)
    pairs = kkt.pairs
    if len(pairs) > pair_cap:
        raise PatternCapError(
            f"{len(pairs)} pairs exceed the cap of {pair_cap}; pass pair_cap explicitly to override"
        )

    sense, upper_expr = model.upper_objective
    flip = -1.0 if sense is Sense.MAX else 1.0

    builder = LpBuilder()
    all_vars = kkt.all_variables()
    for info in all_vars:
        builder.add_var(info.lb, info.ub, flip * upper_expr.affine.terms.get(info.id, 0.0))
    builder.objective_constant = flip * upper_expr.affine.constant

    for cons in model.constraints:
        builder.add_row(cons.body.affine.terms, cons.rel, cons.rhs)
    for _, expr in kkt.stationarity:
        builder.add_row(expr.terms, Rel.EQ, -expr.constant)
    slack_rows = [
        builder.add_candidate_row(pair.slack.terms, Rel.EQ, -pair.slack.constant)
        for pair in pairs
    ]
    lp = builder.build()

    best_obj = math.inf
    best_mask = -1
    best_x = None
    feasible = 0
    n_pairs = len(pairs)
    for mask in range(1 << n_pairs):
        active = [slack_rows[p] for p in range(n_pairs) if mask >> p & 1]
        overrides = {
            pairs[p].dual: (0.0, 0.0) for p in range(n_pairs) if not mask >> p & 1
        }
        res = lp.solve(active_candidates=active, bound_overrides=overrides)
        if res.status is LpStatus.INFEASIBLE:
            continue
        if res.status is LpStatus.UNBOUNDED:
            raise UnboundedPatternError(
                f"pattern {mask:#x} is unbounded; flagged for manual review"
            )
        feasible += 1
        if res.objective < best_obj - 1e-9:
            best_obj = res.objective
            best_mask = mask
            best_x = res.x

    if best_x is None:
        raise BilevelInfeasibleError("every complementarity pattern is infeasible")

    point = {info.id: float(best_x[info.id]) for info in all_vars}
    return OracleResult(flip * best_obj, point, "PatternExact",
                        pattern_mask=best_mask, patterns_feasible=feasible)
