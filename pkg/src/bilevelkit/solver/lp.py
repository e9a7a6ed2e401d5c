"""Dense bounded-variable simplex over a compiled problem form.

The solver is deliberately small: desk-scale problems (tens of variables,
tens of rows) solved many thousands of times.  The pivoting loop is a numba
kernel working on one dense tableau; the Python wrapper owns the transform
between the caller's statement (arbitrary bounds, mixed row senses) and the
kernel's computational form (equality rows, finite lower bounds, slack and
artificial columns).

Determinism: entering/leaving rules are fixed (Dantzig with lowest-index
ties, switching to Bland's rule after a pivot budget), so repeated solves of
the same data take the same path bit for bit.

:class:`CompiledLp` additionally supports *candidate rows*: rows compiled up
front but activated per call, plus per-call bound overrides.  Branch-and-
bound nodes and complementarity-pattern enumeration both lean on this to
avoid recompiling anything inside their loops.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..model import Rel

_INF = np.inf

# kernel status codes
_OPTIMAL = 0
_INFEASIBLE = 1
_UNBOUNDED = 2
_STALLED = 3

_DUAL_TOL = 1e-9
_PIV_TOL = 1e-10
_TIE_EPS = 1e-12


@njit(cache=True)
def _simplex_kernel(A, b, c, lo, up, max_iter, bland_from, feas_tol):
    """Two-phase primal simplex for  min c'x  s.t.  A x = b,  lo ≤ x ≤ up.

    Every lower bound must be finite (the wrapper guarantees it); upper
    bounds may be +inf.  Returns a tuple

        (status, x, basis, sigma, iters, ray, p1_residual)

    where ``x`` covers the structural columns plus m artificial columns,
    ``basis`` holds the final basic column of each row, ``sigma`` the row
    sign flips applied to make the starting artificial values nonnegative,
    and ``ray`` an unbounded direction when status is 2.
    """
    m, n = A.shape
    nt = n + m

    sigma = np.empty(m)
    resid = b - A.dot(lo[:n])
    for i in range(m):
        sigma[i] = 1.0 if resid[i] >= 0.0 else -1.0

    W = np.zeros((m, nt))
    for i in range(m):
        for j in range(n):
            W[i, j] = sigma[i] * A[i, j]
        W[i, n + i] = 1.0

    l_full = np.zeros(nt)
    u_full = np.empty(nt)
    for j in range(n):
        l_full[j] = lo[j]
        u_full[j] = up[j]
    for j in range(n, nt):
        u_full[j] = _INF

    vstat = np.zeros(nt, np.int64)  # 0 at-lb, 1 at-ub, 2 basic
    basis = np.empty(m, np.int64)
    beta = np.empty(m)
    for i in range(m):
        basis[i] = n + i
        vstat[n + i] = 2
        beta[i] = sigma[i] * resid[i]

    x = np.zeros(nt)
    ray = np.zeros(nt)
    d = np.zeros(nt)
    cost = np.zeros(nt)

    iters = 0
    p1 = 0.0
    status = _OPTIMAL

    for phase in range(1, 3):
        if phase == 1:
            for j in range(nt):
                cost[j] = 1.0 if j >= n else 0.0
        else:
            for j in range(n):
                cost[j] = c[j]
            for j in range(n, nt):
                cost[j] = 0.0
                u_full[j] = 0.0

        # reduced costs from scratch at phase start
        for j in range(nt):
            d[j] = cost[j]
        for i in range(m):
            cb = cost[basis[i]]
            if cb != 0.0:
                for j in range(nt):
                    d[j] -= cb * W[i, j]

        while True:
            if iters >= max_iter:
                status = _STALLED
                break
            use_bland = iters >= bland_from

            # entering column
            q = -1
            best = -_DUAL_TOL
            for j in range(n):  # artificials never re-enter
                vs = vstat[j]
                if vs == 2:
                    continue
                if u_full[j] - l_full[j] <= 0.0:
                    continue
                score = d[j] if vs == 0 else -d[j]
                if score < best:
                    best = score
                    q = j
                    if use_bland:
                        break
            if q == -1:
                break  # phase optimal

            delta = 1.0 if vstat[q] == 0 else -1.0
            tmax = u_full[q] - l_full[q]

            # ratio test over basic variables
            t = _INF
            leave_row = -1
            leave_hit = 0
            for i in range(m):
                wi = delta * W[i, q]
                k = basis[i]
                if wi > _PIV_TOL:
                    cand = (beta[i] - l_full[k]) / wi
                    hit = 0
                elif wi < -_PIV_TOL and u_full[k] < _INF:
                    cand = (beta[i] - u_full[k]) / wi
                    hit = 1
                else:
                    continue
                if cand < 0.0:
                    cand = 0.0
                take = False
                if leave_row == -1 or cand < t - _TIE_EPS:
                    take = True
                elif cand <= t + _TIE_EPS:
                    if use_bland:
                        take = k < basis[leave_row]
                    else:
                        take = abs(W[i, q]) > abs(W[leave_row, q])
                if take:
                    t = cand
                    leave_row = i
                    leave_hit = hit

            if tmax < t - _TIE_EPS:
                # bound flip, no basis change
                iters += 1
                for i in range(m):
                    beta[i] -= delta * tmax * W[i, q]
                vstat[q] = 1 - vstat[q]
                continue

            if leave_row == -1:
                # no blocking row and no opposite bound
                status = _UNBOUNDED
                ray[q] = delta
                for i in range(m):
                    ray[basis[i]] = -delta * W[i, q]
                break

            iters += 1
            for i in range(m):
                beta[i] -= delta * t * W[i, q]
            k = basis[leave_row]
            vstat[k] = leave_hit
            beta[leave_row] = (l_full[q] + t) if delta > 0.0 else (u_full[q] - t)
            vstat[q] = 2
            basis[leave_row] = q

            piv = W[leave_row, q]
            inv = 1.0 / piv
            for j in range(nt):
                W[leave_row, j] *= inv
            for i in range(m):
                if i != leave_row:
                    f = W[i, q]
                    if f != 0.0:
                        for j in range(nt):
                            W[i, j] -= f * W[leave_row, j]
            dq = d[q]
            if dq != 0.0:
                for j in range(nt):
                    d[j] -= dq * W[leave_row, j]

        if status != _OPTIMAL:
            break
        if phase == 1:
            p1 = 0.0
            for i in range(m):
                if basis[i] >= n and beta[i] > 0.0:
                    p1 += beta[i]
            if p1 > feas_tol:
                status = _INFEASIBLE
                break

    # assemble the primal point
    for j in range(nt):
        if vstat[j] == 0:
            x[j] = l_full[j]
        elif vstat[j] == 1:
            x[j] = u_full[j]
    for i in range(m):
        x[basis[i]] = beta[i]

    return status, x, basis, sigma, iters, ray, p1


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    STALLED = "stalled"


class SolverFailure(Exception):
    """Numerical breakdown: the pivot loop hit its iteration budget."""


@dataclass
class LpResult:
    status: LpStatus
    x: np.ndarray | None
    objective: float
    row_duals: np.ndarray | None
    reduced_costs: np.ndarray | None
    iterations: int
    infeasibility: float
    ray: np.ndarray | None


# column kinds in the compiled form
_DIRECT = 0   # finite lb: one column, same sign
_NEGATED = 1  # lb = -inf, ub finite: x = -col
_SPLIT = 2    # free: x = pos - neg


class LpBuilder:
    """Collects an LP statement in caller coordinates, then compiles it."""

    def __init__(self):
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._obj: list[float] = []
        self._rows: list[tuple[dict[int, float], Rel, float]] = []
        self._candidates: list[tuple[dict[int, float], Rel, float]] = []
        self.objective_constant = 0.0

    def add_var(self, lb: float = 0.0, ub: float = math.inf, obj: float = 0.0) -> int:
        if math.isnan(lb) or math.isnan(ub) or lb > ub:
            raise ValueError(f"invalid bounds [{lb}, {ub}]")
        self._lb.append(lb)
        self._ub.append(ub)
        self._obj.append(obj)
        return len(self._lb) - 1

    def add_row(self, terms: dict[int, float], rel: Rel, rhs: float) -> int:
        self._rows.append((dict(terms), rel, rhs))
        return len(self._rows) - 1

    def add_candidate_row(self, terms: dict[int, float], rel: Rel, rhs: float) -> int:
        """A row excluded by default; activate it per solve call."""
        self._candidates.append((dict(terms), rel, rhs))
        return len(self._candidates) - 1

    def build(self) -> "CompiledLp":
        return CompiledLp(self)


class CompiledLp:
    """The kernel-ready form of an :class:`LpBuilder` statement."""

    def __init__(self, builder: LpBuilder):
        n_orig = len(builder._lb)
        self.n_orig = n_orig
        self.n_rows = len(builder._rows)
        self.n_candidates = len(builder._candidates)
        self.objective_constant = builder.objective_constant

        kind = np.zeros(n_orig, np.int64)
        col_of = np.zeros(n_orig, np.int64)  # first kernel column of each var
        cols = 0
        for j in range(n_orig):
            lb, ub = builder._lb[j], builder._ub[j]
            if not math.isinf(lb):
                kind[j] = _DIRECT
                col_of[j] = cols
                cols += 1
            elif not math.isinf(ub):
                kind[j] = _NEGATED
                col_of[j] = cols
                cols += 1
            else:
                kind[j] = _SPLIT
                col_of[j] = cols
                cols += 2
        self._kind = kind
        self._col_of = col_of

        # one slack column per inequality row, candidates included
        n_slack = sum(1 for _, rel, _ in builder._rows if rel is not Rel.EQ)
        n_slack += sum(1 for _, rel, _ in builder._candidates if rel is not Rel.EQ)
        nt = cols + n_slack
        self.n_cols = nt

        lo = np.zeros(nt)
        up = np.full(nt, _INF)
        c = np.zeros(nt)
        for j in range(n_orig):
            k, col = kind[j], col_of[j]
            lb, ub, obj = builder._lb[j], builder._ub[j], builder._obj[j]
            if k == _DIRECT:
                lo[col], up[col], c[col] = lb, ub, obj
            elif k == _NEGATED:
                lo[col], up[col], c[col] = -ub, _INF, -obj
            else:
                c[col], c[col + 1] = obj, -obj
        self._base_lo = lo
        self._base_up = up
        self._c = c

        next_slack = cols
        self._row_sign = np.ones(self.n_rows)

        def compile_row(terms: dict[int, float], rel: Rel, rhs: float, out_A, out_b, i):
            nonlocal next_slack
            sign = -1.0 if rel is Rel.LE else 1.0
            for var, coeff in terms.items():
                coeff *= sign
                k, col = kind[var], col_of[var]
                if k == _DIRECT:
                    out_A[i, col] += coeff
                elif k == _NEGATED:
                    out_A[i, col] -= coeff
                else:
                    out_A[i, col] += coeff
                    out_A[i, col + 1] -= coeff
            out_b[i] = sign * rhs
            if rel is not Rel.EQ:
                out_A[i, next_slack] = -1.0  # body - slack = rhs, slack >= 0
                next_slack += 1
            return sign

        A = np.zeros((self.n_rows, nt))
        b = np.zeros(self.n_rows)
        for i, (terms, rel, rhs) in enumerate(builder._rows):
            self._row_sign[i] = compile_row(terms, rel, rhs, A, b, i)
        self._A = A
        self._b = b

        CA = np.zeros((self.n_candidates, nt))
        cb = np.zeros(self.n_candidates)
        self._cand_sign = np.ones(self.n_candidates)
        for i, (terms, rel, rhs) in enumerate(builder._candidates):
            self._cand_sign[i] = compile_row(terms, rel, rhs, CA, cb, i)
        self._cand_A = CA
        self._cand_b = cb

        self._rels = [rel for _, rel, _ in builder._rows]

    def _map_bound_override(
        self, lo: np.ndarray, up: np.ndarray, var: int, new_lb: float, new_ub: float
    ) -> None:
        k, col = self._kind[var], self._col_of[var]
        if k == _DIRECT:
            lo[col], up[col] = new_lb, new_ub
        elif k == _NEGATED:
            lo[col], up[col] = -new_ub, -new_lb
        else:
            raise ValueError("bound override on a free (split) variable is unsupported")

    def solve(
        self,
        active_candidates: np.ndarray | list[int] | None = None,
        bound_overrides: dict[int, tuple[float, float]] | None = None,
        want_duals: bool = False,
        max_iter: int = 0,
    ) -> LpResult:
        if active_candidates is not None and len(active_candidates) > 0:
            sel = np.asarray(active_candidates, np.int64)
            A = np.concatenate((self._A, self._cand_A[sel]))
            b = np.concatenate((self._b, self._cand_b[sel]))
        else:
            A = self._A
            b = self._b
        if bound_overrides:
            lo = self._base_lo.copy()
            up = self._base_up.copy()
            for var, (nl, nu) in bound_overrides.items():
                self._map_bound_override(lo, up, var, nl, nu)
        else:
            lo = self._base_lo
            up = self._base_up

        m = A.shape[0]
        if max_iter <= 0:
            max_iter = 2000 + 200 * m
        bland_from = 500 + 20 * m
        b_scale = float(np.abs(b).max()) if m else 0.0
        feas_tol = 1e-9 * (1.0 + b_scale)

        status, x_full, basis, sigma, iters, ray, p1 = _simplex_kernel(
            np.ascontiguousarray(A), b, self._c, lo, up,
            max_iter, bland_from, feas_tol,
        )

        if status == _STALLED:
            raise SolverFailure(f"simplex hit its pivot budget ({max_iter} iterations)")

        if status == _INFEASIBLE:
            return LpResult(LpStatus.INFEASIBLE, None, math.inf, None, None, iters, p1, None)

        x = self._recover_x(x_full)
        if status == _UNBOUNDED:
            return LpResult(
                LpStatus.UNBOUNDED, x, -math.inf, None, None, iters, 0.0,
                self._recover_x(ray, direction=True),
            )

        obj = float(self._c[: self.n_cols].dot(x_full[: self.n_cols])) + self.objective_constant

        row_duals = reduced = None
        if want_duals:
            row_duals, reduced = self._exact_duals(A, basis, sigma, m)
        return LpResult(LpStatus.OPTIMAL, x, obj, row_duals, reduced, iters, 0.0, None)

    def _recover_x(self, x_full: np.ndarray, direction: bool = False) -> np.ndarray:
        out = np.empty(self.n_orig)
        for j in range(self.n_orig):
            k, col = self._kind[j], self._col_of[j]
            if k == _DIRECT:
                out[j] = x_full[col]
            elif k == _NEGATED:
                out[j] = -x_full[col]
            else:
                out[j] = x_full[col] - x_full[col + 1]
        return out

    def _exact_duals(self, A: np.ndarray, basis: np.ndarray, sigma: np.ndarray, m: int):
        """Row duals and reduced costs from the final basis, solved fresh so
        they carry no pivoting drift.  Only the base rows' duals are kept."""
        nt = self.n_cols
        B = np.zeros((m, m))
        cb = np.zeros(m)
        for t in range(m):
            j = basis[t]
            if j < nt:
                B[:, t] = A[:, j]
                cb[t] = self._c[j]
            else:
                B[j - nt, t] = sigma[j - nt]
        try:
            y = np.linalg.solve(B.T, cb)
        except np.linalg.LinAlgError:
            y = np.linalg.lstsq(B.T, cb, rcond=None)[0]

        d = self._c - A.T.dot(y)

        row_duals = np.empty(self.n_rows)
        for i in range(self.n_rows):
            row_duals[i] = self._row_sign[i] * y[i]

        reduced = np.empty(self.n_orig)
        for j in range(self.n_orig):
            k, col = self._kind[j], self._col_of[j]
            if k == _DIRECT:
                reduced[j] = d[col]
            elif k == _NEGATED:
                reduced[j] = -d[col]
            else:
                reduced[j] = d[col]
        return row_duals, reduced


def warm_up() -> None:
    """Force the numba kernel to compile on a toy problem."""
    builder = LpBuilder()
    x = builder.add_var(0.0, math.inf, 1.0)
    y = builder.add_var(-math.inf, math.inf, 2.0)
    builder.add_row({x: 1.0, y: 1.0}, Rel.GE, 1.0)
    builder.add_row({x: 1.0, y: -1.0}, Rel.EQ, 0.0)
    lp = builder.build()
    res = lp.solve(want_duals=True)
    assert res.status is LpStatus.OPTIMAL
