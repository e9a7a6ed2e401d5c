"""Stationarity, complementarity and duality for the lower-level problem.

The lower level is a convex QP parameterized by the upper-level variables.
:func:`build_kkt` materializes its first-order conditions symbolically:

* one dual variable per lower constraint and per finite bound of a lower
  variable, numbered after the model's own variables;
* one affine stationarity expression (== 0) per lower variable;
* one (dual, slack) complementarity pair per sign-restricted dual.

Orientation conventions, used consistently everywhere downstream: every
inequality is normalized to ``body ≥ rhs`` (a ``≤`` row is negated), its
slack is ``body − rhs ≥ 0`` and its dual is ``≥ 0``, entering the Lagrangian
as ``f − Σ λ·slack``.  Equality rows get a free dual and no pair.  A ``max``
lower objective is handled by minimizing its negation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import (
    AffineExpr,
    BilevelModel,
    Constraint,
    InvalidModelError,
    Level,
    QuadExpr,
    Rel,
    Sense,
    VarId,
    VariableInfo,
)


@dataclass
class DualInfo:
    """One dual variable and the normalized primal row it prices.

    ``kind`` is ``"constraint"``, ``"lb"`` or ``"ub"``.  ``body``/``rhs``
    describe the row as ``body ≥ rhs`` (or ``= rhs`` when ``rel`` is EQ);
    bound rows are ``v ≥ lb`` and ``−v ≥ −ub``.
    """

    var: VarId
    name: str
    kind: str
    body: AffineExpr
    rhs: float
    rel: Rel
    sign_restricted: bool
    constraint_id: int | None = None
    bound_var: VarId | None = None

    def slack(self) -> AffineExpr:
        expr = self.body.copy()
        expr.constant -= self.rhs
        return expr


@dataclass
class ComplementarityPair:
    """dual ≥ 0, slack ≥ 0, dual·slack = 0."""

    dual: VarId
    slack: AffineExpr


@dataclass
class KktResidual:
    stationarity: float
    feasibility: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.feasibility, self.complementarity)


@dataclass
class KktSystem:
    model: BilevelModel
    dual_variables: list[VariableInfo]
    duals: list[DualInfo]
    # (lower variable id, affine expression required to equal zero)
    stationarity: list[tuple[VarId, AffineExpr]]
    pairs: list[ComplementarityPair]
    # lower objective in minimization orientation
    lower_min_objective: QuadExpr

    def all_variables(self) -> list[VariableInfo]:
        return self.model.variables + self.dual_variables


def _normalized_rows(cons: Constraint) -> tuple[AffineExpr, float, Rel]:
    body = cons.body.affine
    if cons.rel is Rel.LE:
        return body.scaled(-1.0), -cons.rhs, Rel.GE
    return body.copy(), cons.rhs, cons.rel


def build_kkt(model: BilevelModel) -> KktSystem:
    """Derive the KKT system of the lower level.  Raises
    :class:`InvalidModelError` when the model does not validate."""
    diags = model.validate()
    if diags:
        raise InvalidModelError(diags)

    lower_vars = model.level_variables(Level.LOWER)
    is_lower = {v.id: v.level is Level.LOWER for v in model.variables}

    sense, objective = model.lower_objective
    lower_min = objective.copy() if sense is Sense.MIN else _negated(objective)

    next_id = len(model.variables)
    dual_variables: list[VariableInfo] = []
    duals: list[DualInfo] = []

    def new_dual(name: str, restricted: bool) -> VarId:
        nonlocal next_id
        lb = 0.0 if restricted else -math.inf
        info = VariableInfo(next_id, name, Level.LOWER, lb, math.inf)
        dual_variables.append(info)
        next_id += 1
        return info.id

    # constraint duals, in model constraint order
    for cons in model.constraints:
        if cons.level is not Level.LOWER:
            continue
        body, rhs, rel = _normalized_rows(cons)
        restricted = rel is not Rel.EQ
        vid = new_dual(f"dual_{cons.name}", restricted)
        duals.append(
            DualInfo(vid, f"dual_{cons.name}", "constraint", body, rhs, rel,
                     restricted, constraint_id=cons.id)
        )

    # bound duals, in lower-variable order, lb before ub
    for v in lower_vars:
        if not math.isinf(v.lb):
            vid = new_dual(f"dual_lb_{v.name}", True)
            duals.append(
                DualInfo(vid, f"dual_lb_{v.name}", "lb",
                         AffineExpr({v.id: 1.0}), v.lb, Rel.GE, True, bound_var=v.id)
            )
        if not math.isinf(v.ub):
            vid = new_dual(f"dual_ub_{v.name}", True)
            duals.append(
                DualInfo(vid, f"dual_ub_{v.name}", "ub",
                         AffineExpr({v.id: -1.0}), -v.ub, Rel.GE, True, bound_var=v.id)
            )

    # stationarity: ∂f/∂v − Σ λ·(∂body/∂v) == 0, built by scattering each
    # row's coefficients once so large models stay linear-time
    grads: dict[VarId, AffineExpr] = {v.id: AffineExpr() for v in lower_vars}
    for (a, b), coeff in lower_min.quad.items():
        if a == b:
            if is_lower[a]:
                grads[a].add_term(a, 2.0 * coeff)
        else:
            if is_lower[a]:
                grads[a].add_term(b, coeff)
            if is_lower[b]:
                grads[b].add_term(a, coeff)
    for v, coeff in lower_min.affine.terms.items():
        if is_lower[v]:
            grads[v].constant += coeff

    for dual in duals:
        for v, coeff in dual.body.terms.items():
            if is_lower[v]:
                grads[v].add_term(dual.var, -coeff)

    stationarity = [(v.id, grads[v.id]) for v in lower_vars]

    pairs = [
        ComplementarityPair(d.var, d.slack()) for d in duals if d.sign_restricted
    ]

    return KktSystem(model, dual_variables, duals, stationarity, pairs, lower_min)


def _negated(expr: QuadExpr) -> QuadExpr:
    out = QuadExpr()
    out.add(expr, -1.0)
    return out


def kkt_residual(kkt: KktSystem, point: dict[VarId, float]) -> KktResidual:
    """Worst-case violations of the three KKT condition groups at ``point``.

    The point must assign every model variable and every dual.  Feasibility
    covers the normalized primal rows and the dual sign constraints.
    """
    stat = 0.0
    for _, expr in kkt.stationarity:
        stat = max(stat, abs(expr.evaluate(point)))

    feas = 0.0
    comp = 0.0
    for dual in kkt.duals:
        val = dual.body.evaluate(point)
        if dual.rel is Rel.EQ:
            feas = max(feas, abs(val - dual.rhs))
        else:
            feas = max(feas, dual.rhs - val)
        lam = point[dual.var]
        if dual.sign_restricted:
            feas = max(feas, -lam)
            comp = max(comp, abs(lam * (val - dual.rhs)))
    return KktResidual(stat, max(0.0, feas), comp)


def lower_dual_objective(kkt: KktSystem) -> QuadExpr:
    """The lower problem's dual objective as an expression.

    With the lower objective written ``x'Qx + c(u)'x + d(u)`` over lower
    variables ``x`` and the normalized rows split as
    ``(lower part)(x) + (upper part)(u) ≥ rhs``, the dual objective is

        D = −x'Qx + Σ λ·(rhs − upper part) + d(u).

    Weak duality gives ``primal ≥ D`` on feasible/dual-feasible points, and
    ``primal − D = Σ λ·slack`` whenever stationarity holds, so forcing
    ``primal − D ≤ 0`` is equivalent to all complementarity products being
    zero.  The result is quadratic: it multiplies duals by upper variables.
    """
    is_lower = {v.id: v.level is Level.LOWER for v in kkt.model.variables}
    out = QuadExpr()

    for (a, b), coeff in kkt.lower_min_objective.quad.items():
        if is_lower[a] and is_lower[b]:
            out.add_quad_term(a, b, -coeff)
        # mixed upper×lower terms belong to c(u)'x and cancel out of D
    for v, coeff in kkt.lower_min_objective.affine.terms.items():
        if not is_lower[v]:
            out.affine.add_term(v, coeff)
    out.affine.constant += kkt.lower_min_objective.affine.constant

    for dual in kkt.duals:
        out.affine.add_term(dual.var, dual.rhs)
        for v, coeff in dual.body.terms.items():
            if not is_lower[v]:
                out.add_quad_term(dual.var, v, -coeff)
    return out
