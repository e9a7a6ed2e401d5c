"""Primal active-set method for convex quadratic subproblems.

Handles  min ½ x'H x + g'x + k  over linear rows and variable bounds with H
positive semidefinite, possibly singular (the common case here: the lower
level is strictly convex in the weights but only linear in the slacks).
Steps are computed in the null space of the working set via SVD, and a
spectral split of the reduced Hessian separates Newton directions from flat
descent rays, so singular H and unbounded subproblems are handled exactly
rather than by regularization.

Feasible starting points come from the simplex solver in :mod:`.lp`; a warm
point is accepted whenever it is feasible, which makes parameter sweeps
(like the grid-search oracle) cheap.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ..model import AffineExpr, MissingValueError, QuadExpr, Rel, VariableInfo, VarId
from .lp import CompiledLp, LpBuilder, LpStatus


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ERROR = "error"


class NotConvexError(Exception):
    """The quadratic objective failed the positive-semidefinite check."""


@dataclass
class ConvexSubproblem:
    """A convex QP/LP in expression form over an explicit variable list."""

    variables: list[VariableInfo]
    objective: QuadExpr  # minimized
    rows: list[tuple[str, AffineExpr, Rel, float]] = field(default_factory=list)
    warm: dict[VarId, float] | None = None

    def add_row(self, name: str, expr: AffineExpr, rel: Rel, rhs: float) -> None:
        self.rows.append((name, expr, rel, rhs))


@dataclass
class QpResult:
    status: QpStatus
    point: dict[VarId, float] | None
    objective: float
    # duals keyed by row name; ≥ 0 for GE, ≤ 0 for LE, free for EQ
    row_duals: dict[str, float]
    # (lb multiplier, ub multiplier) per variable id, both ≥ 0
    bound_duals: dict[VarId, tuple[float, float]]
    iterations: int
    stationarity_inf: float
    # phase-1 residual evidence when INFEASIBLE (how far feasibility misses)
    infeasibility: float = 0.0


_RANK_TOL = 1e-10
_ACT_TOL = 1e-9
_DUAL_TOL = 1e-9
_STEP_TOL = 1e-11


def solve_convex(sub: ConvexSubproblem, tol: float = 1e-8) -> QpResult:
    """Solve the subproblem to stationarity ``tol``.

    Raises :class:`NotConvexError` when the Hessian has an eigenvalue below
    ``-1e-9`` relative to its scale.  Unattained infima are reported as
    UNBOUNDED together with no point.
    """
    ids = [v.id for v in sub.variables]
    pos = {vid: i for i, vid in enumerate(ids)}
    n = len(ids)

    H = np.zeros((n, n))
    g = np.zeros(n)
    const = sub.objective.affine.constant
    for (a, b), coeff in sub.objective.quad.items():
        ia, ib = pos[a], pos[b]
        if ia == ib:
            H[ia, ia] += 2.0 * coeff
        else:
            H[ia, ib] += coeff
            H[ib, ia] += coeff
    for v, coeff in sub.objective.affine.terms.items():
        g[pos[v]] += coeff

    if n and np.any(H):
        scale = max(1.0, float(np.abs(H).max()))
        if float(np.linalg.eigvalsh(H)[0]) < -1e-9 * scale:
            raise NotConvexError("quadratic objective is not positive semidefinite")

    # normalized GE rows: eq rows listed first, then inequalities and bounds
    eq_rows: list[tuple[np.ndarray, float, tuple]] = []
    ge_rows: list[tuple[np.ndarray, float, tuple]] = []
    for i, (name, expr, rel, rhs) in enumerate(sub.rows):
        row = np.zeros(n)
        for v, coeff in expr.terms.items():
            if v not in pos:
                raise MissingValueError(f"row {name!r} uses a variable not in the subproblem")
            row[pos[v]] += coeff
        r = rhs - expr.constant
        if rel is Rel.EQ:
            eq_rows.append((row, r, ("row", name, 1.0)))
        elif rel is Rel.GE:
            ge_rows.append((row, r, ("row", name, 1.0)))
        else:
            ge_rows.append((-row, -r, ("row", name, -1.0)))
    for info in sub.variables:
        j = pos[info.id]
        if not math.isinf(info.lb):
            row = np.zeros(n)
            row[j] = 1.0
            ge_rows.append((row, info.lb, ("lb", info.id, 1.0)))
        if not math.isinf(info.ub):
            row = np.zeros(n)
            row[j] = -1.0
            ge_rows.append((row, -info.ub, ("ub", info.id, 1.0)))

    E = np.array([r for r, _, _ in eq_rows]) if eq_rows else np.zeros((0, n))
    e = np.array([b for _, b, _ in eq_rows])
    G = np.array([r for r, _, _ in ge_rows]) if ge_rows else np.zeros((0, n))
    h = np.array([b for _, b, _ in ge_rows])

    x, p1_evidence = _starting_point(sub, ids, n, E, e, G, h)
    if x is None:
        return QpResult(QpStatus.INFEASIBLE, None, math.inf, {}, {}, 0, math.inf,
                        infeasibility=p1_evidence)

    if not np.any(H):
        # pure LP: hand off to the simplex solver for exact duals
        return _lp_route(sub, ids, const)

    n_ge = len(ge_rows)
    active = [i for i in range(n_ge) if abs(G[i].dot(x) - h[i]) <= _ACT_TOL * (1.0 + abs(h[i]))]
    max_iter = 100 + 30 * (n + n_ge + len(eq_rows))

    status = QpStatus.ERROR
    lam_w = np.zeros(0)
    iters = 0
    for iters in range(1, max_iter + 1):
        A_w = np.vstack([E, G[active]]) if (len(eq_rows) or active) else np.zeros((0, n))
        grad = H.dot(x) + g

        # null space of the working set
        if A_w.shape[0]:
            _, s, Vt = np.linalg.svd(A_w)
            rank = int(np.sum(s > _RANK_TOL * (s[0] if s.size else 1.0)))
            Z = Vt[rank:].T
        else:
            Z = np.eye(n)

        d = np.zeros(n)
        ray = None
        if Z.shape[1]:
            Hz = Z.T.dot(H).dot(Z)
            gz = Z.T.dot(grad)
            lam, V = np.linalg.eigh(Hz)
            lmax = max(float(lam[-1]), 0.0)
            cut = 1e-10 * max(1.0, lmax)
            flat = lam <= cut
            gflat = V[:, flat].T.dot(gz)
            if gflat.size and float(np.abs(gflat).max()) > 1e-9 * (1.0 + float(np.abs(g).max())):
                ray = -Z.dot(V[:, flat].dot(gflat))
                ray /= np.linalg.norm(ray)
            else:
                Vp = V[:, ~flat]
                if Vp.shape[1]:
                    d = -Z.dot(Vp.dot(Vp.T.dot(gz) / lam[~flat]))

        if ray is not None:
            # objective decreases linearly along the ray forever unless a row blocks
            alpha, blocker = _blocking(G, h, x, ray, active, n_ge)
            if blocker < 0:
                return QpResult(QpStatus.UNBOUNDED, None, -math.inf, {}, {}, iters, math.inf)
            x = x + alpha * ray
            active.append(blocker)
            active.sort()
            continue

        if float(np.linalg.norm(d)) <= _STEP_TOL * (1.0 + float(np.linalg.norm(x))):
            # multipliers: min-norm solve of A_w' λ = grad
            if A_w.shape[0]:
                lam_w = np.linalg.lstsq(A_w.T, grad, rcond=None)[0]
            else:
                lam_w = np.zeros(0)
            ge_part = lam_w[len(eq_rows):]
            worst = -1
            worst_val = -_DUAL_TOL * (1.0 + float(np.abs(grad).max()))
            for t, a_idx in enumerate(active):
                if ge_part[t] < worst_val:
                    worst_val = ge_part[t]
                    worst = t
            if worst < 0:
                status = QpStatus.OPTIMAL
                break
            del active[worst]
            continue

        alpha, blocker = _blocking(G, h, x, d, active, n_ge)
        if alpha >= 1.0 or blocker < 0:
            x = x + d
        else:
            x = x + alpha * d
            active.append(blocker)
            active.sort()

    if status is not QpStatus.OPTIMAL:
        return QpResult(QpStatus.ERROR, None, math.nan, {}, {}, iters, math.inf)

    point = {vid: float(x[pos[vid]]) for vid in ids}
    obj = float(0.5 * x.dot(H).dot(x) + g.dot(x) + const)

    row_duals: dict[str, float] = {name: 0.0 for name, _, _, _ in sub.rows}
    bound_duals: dict[VarId, tuple[float, float]] = {vid: (0.0, 0.0) for vid in ids}
    for t, (_, _, tag) in enumerate(eq_rows):
        _store_dual(row_duals, bound_duals, tag, float(lam_w[t]))
    ne = len(eq_rows)
    for t, a_idx in enumerate(active):
        _store_dual(row_duals, bound_duals, ge_rows[a_idx][2], float(lam_w[ne + t]))

    A_w = np.vstack([E, G[active]]) if (len(eq_rows) or active) else np.zeros((0, n))
    resid = H.dot(x) + g - (A_w.T.dot(lam_w) if A_w.shape[0] else 0.0)
    stat_inf = float(np.abs(resid).max()) if n else 0.0
    return QpResult(QpStatus.OPTIMAL, point, obj, row_duals, bound_duals, iters, stat_inf)


def _store_dual(row_duals, bound_duals, tag, value: float) -> None:
    kind, key, sign = tag
    if kind == "row":
        row_duals[key] += sign * value
    elif kind == "lb":
        mu = bound_duals[key]
        bound_duals[key] = (mu[0] + value, mu[1])
    else:
        mu = bound_duals[key]
        bound_duals[key] = (mu[0], mu[1] + value)


def _blocking(G, h, x, d, active, n_ge) -> tuple[float, int]:
    """Largest step along d before an inactive GE row becomes violated."""
    alpha = math.inf
    blocker = -1
    active_set = set(active)
    for i in range(n_ge):
        if i in active_set:
            continue
        gd = G[i].dot(d)
        if gd < -1e-12:
            cand = (G[i].dot(x) - h[i]) / (-gd)
            if cand < alpha - 1e-15:
                alpha = cand
                blocker = i
    if blocker >= 0 and alpha < 0.0:
        alpha = 0.0
    return alpha, blocker


def _starting_point(sub, ids, n, E, e, G, h) -> tuple[np.ndarray | None, float]:
    """A feasible point (or None with the phase-1 residual as infeasibility
    evidence): the warm hint if it checks out, else a phase-1 LP."""
    if sub.warm is not None:
        try:
            x = np.array([sub.warm[v] for v in ids])
        except KeyError:
            x = None
        if x is not None:
            ok = True
            if E.shape[0] and float(np.abs(E.dot(x) - e).max()) > 1e-9:
                ok = False
            if ok and G.shape[0] and float((h - G.dot(x)).max()) > 1e-9:
                ok = False
            if ok:
                return x, 0.0

    builder = LpBuilder()
    for info in sub.variables:
        builder.add_var(info.lb, info.ub, 0.0)
    posn = {vid: i for i, vid in enumerate(ids)}
    for name, expr, rel, rhs in sub.rows:
        builder.add_row({posn[v]: c for v, c in expr.terms.items()}, rel, rhs - expr.constant)
    res = builder.build().solve()
    if res.status is not LpStatus.OPTIMAL:
        return None, res.infeasibility
    return res.x, 0.0


def _lp_route(sub: ConvexSubproblem, ids, const) -> QpResult:
    builder = LpBuilder()
    posn = {vid: i for i, vid in enumerate(ids)}
    for info in sub.variables:
        builder.add_var(info.lb, info.ub, sub.objective.affine.terms.get(info.id, 0.0))
    for name, expr, rel, rhs in sub.rows:
        builder.add_row({posn[v]: c for v, c in expr.terms.items()}, rel, rhs - expr.constant)
    builder.objective_constant = const
    res = builder.build().solve(want_duals=True)
    if res.status is LpStatus.INFEASIBLE:
        return QpResult(QpStatus.INFEASIBLE, None, math.inf, {}, {}, res.iterations, math.inf,
                        infeasibility=res.infeasibility)
    if res.status is LpStatus.UNBOUNDED:
        return QpResult(QpStatus.UNBOUNDED, None, -math.inf, {}, {}, res.iterations, math.inf)

    point = {vid: float(res.x[posn[vid]]) for vid in ids}
    row_duals = {name: float(res.row_duals[i]) for i, (name, _, _, _) in enumerate(sub.rows)}
    bound_duals: dict[VarId, tuple[float, float]] = {}
    for info in sub.variables:
        rc = float(res.reduced_costs[posn[info.id]])
        bound_duals[info.id] = (max(rc, 0.0), max(-rc, 0.0))
    return QpResult(QpStatus.OPTIMAL, point, res.objective, row_duals, bound_duals,
                    res.iterations, 0.0)
