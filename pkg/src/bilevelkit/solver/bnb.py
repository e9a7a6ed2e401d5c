"""Branch-and-bound over the flattened single-level problems.

Node relaxations are LPs solved by the bundled simplex: binaries relax to
[0,1], SOS1 sets and indicator implications are ignored until branching
activates them, and quadratic rows are dropped entirely and handled through
their complementarity annotations, each pair branched as the disjunction
``dual = 0  ∨  slack = 0``.  A node therefore never contains anything the
LP kernel cannot express: bound fixes plus pre-compiled candidate rows.

Branching precedence: most-violated complementarity pair, then most-violated
SOS1 set, then binaries (most fractional; an integral binary whose indicator
row is violated counts too, since its row only activates once the binary is
fixed).  Ties pick the lowest index.  Node selection is best-bound with
FIFO tie-breaking, so runs are deterministic end to end.

Quadratic rows are enforced at zero complementarity: a ``product`` row with
τ > 0 is solved to the exact τ = 0 answer, never to a looser one.
"""

from __future__ import annotations

import enum
import heapq
import math
import time
from dataclasses import dataclass, field

from ..model import (
    AffineExpr,
    Rel,
    Sense,
    SingleLevelModel,
    VarId,
)
from ..reformulate import ModeKind, ReformulationInfo
from .lp import CompiledLp, LpBuilder, LpStatus, SolverFailure


class UnsupportedProblemError(Exception):
    """The problem contains a quadratic row with no complementarity
    annotation; the bundled solver cannot branch it away."""


class SolveStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    TIME_LIMIT = "TimeLimit"
    NODE_LIMIT = "NodeLimit"
    ERROR = "Error"


@dataclass
class SolveOptions:
    time_limit_s: float = 600.0
    gap_tol: float = 1e-6  # relative gap at which the search stops
    node_limit: int | None = None
    feas_tol: float = 1e-8
    int_tol: float = 1e-6
    # candidate incumbents: binary assignments tried once before the search
    # starts (each solves one LP with those binaries fixed); losers are
    # discarded silently, so speculative hints are harmless
    hints: list[dict[VarId, int]] | None = None


@dataclass
class SolveResult:
    status: SolveStatus
    point: dict[VarId, float] | None
    objective: float | None
    bound: float | None
    gap_pct: float | None
    time_s: float
    nodes: int
    warnings: list[str] = field(default_factory=list)
    # (nodes processed, incumbent objective or None, best bound) snapshots,
    # appended whenever either side improves
    events: list[tuple[int, float | None, float]] = field(default_factory=list)


def compute_gap(objective: float, bound: float) -> float:
    """Relative gap in percent: 100·|objective − bound| / max(|bound|, 1e-10)."""
    return 100.0 * abs(objective - bound) / max(abs(bound), 1e-10)


@dataclass
class _Node:
    node_id: int
    bound: float
    bin_fixes: tuple[tuple[VarId, int], ...] = ()
    dual_zero: tuple[int, ...] = ()   # pair indexes with the dual fixed to 0
    slack_zero: tuple[int, ...] = ()  # pair indexes with the slack row active
    sos_zero: tuple[tuple[int, int], ...] = ()  # (set index, member position)


class _Engine:
    def __init__(self, slm: SingleLevelModel, options: SolveOptions):
        self.slm = slm
        self.options = options
        self.sense, objective = slm.objective
        self.flip = -1.0 if self.sense is Sense.MAX else 1.0

        builder = LpBuilder()
        for info in slm.variables:
            coeff = self.flip * objective.terms.get(info.id, 0.0)
            builder.add_var(info.lb, info.ub, coeff)
        builder.objective_constant = self.flip * objective.constant
        for row in slm.linear_constraints:
            builder.add_row(row.expr.terms, row.rel, row.rhs)

        # one candidate row per distinct complementarity pair: slack == 0
        self.pairs: list[tuple[VarId, AffineExpr]] = []
        seen: set[int] = set()
        for qrow in slm.quadratic_constraints:
            if not qrow.complementarity:
                raise UnsupportedProblemError(
                    f"quadratic row {qrow.name!r} has no complementarity annotation"
                )
            for dual, slack in qrow.complementarity:
                tag = hash((dual, tuple(sorted(slack.terms.items())), slack.constant))
                if tag in seen:
                    continue
                seen.add(tag)
                self.pairs.append((dual, slack))
        self.pair_rows = [
            builder.add_candidate_row(slack.terms, Rel.EQ, -slack.constant)
            for _, slack in self.pairs
        ]

        self.indicator_rows: list[int] = []
        self.ind_by_binary: dict[VarId, list[int]] = {}
        for k, ind in enumerate(slm.indicator_constraints):
            cand = builder.add_candidate_row(ind.expr.terms, ind.rel, ind.rhs)
            self.indicator_rows.append(cand)
            self.ind_by_binary.setdefault(ind.binary, []).append(k)

        for sos in slm.sos1_sets:
            if len(sos.members) != 2:
                raise UnsupportedProblemError("only two-member SOS1 sets are supported")
            for m in sos.members:
                v = slm.variable(m)
                if v.lb > 0.0 or v.ub < 0.0:
                    raise UnsupportedProblemError(
                        f"SOS1 member {v.name!r} cannot be fixed to zero"
                    )

        self.binaries = sorted(slm.binaries)
        self.lp: CompiledLp = builder.build()

    # -- node assembly ----------------------------------------------------

    def _node_lp_args(self, node: _Node):
        overrides: dict[VarId, tuple[float, float]] = {}
        for var, val in node.bin_fixes:
            overrides[var] = (float(val), float(val))
        for idx in node.dual_zero:
            overrides[self.pairs[idx][0]] = (0.0, 0.0)
        for set_idx, pos in node.sos_zero:
            member = self.slm.sos1_sets[set_idx].members[pos]
            overrides[member] = (0.0, 0.0)
        active = [self.pair_rows[idx] for idx in node.slack_zero]
        for var, val in node.bin_fixes:
            for k in self.ind_by_binary.get(var, ()):
                ind = self.slm.indicator_constraints[k]
                if ind.active_value == val:
                    active.append(self.indicator_rows[k])
        return active, overrides

    # -- candidate inspection ----------------------------------------------

    def _violations(self, node: _Node, point: dict[VarId, float]):
        tol = self.options.feas_tol
        pair_viol: list[tuple[float, int]] = []
        decided = set(node.dual_zero) | set(node.slack_zero)
        for idx, (dual, slack) in enumerate(self.pairs):
            if idx in decided:
                continue
            d = point[dual]
            s = slack.evaluate(point)
            if abs(d * s) > tol * max(1.0, abs(d), abs(s)):
                pair_viol.append((abs(d * s), idx))

        sos_fixed = {set_idx for set_idx, _ in node.sos_zero}
        sos_viol: list[tuple[float, int]] = []
        for set_idx, sos in enumerate(self.slm.sos1_sets):
            if set_idx in sos_fixed:
                continue
            a = abs(point[sos.members[0]])
            b = abs(point[sos.members[1]])
            if min(a, b) > tol * max(1.0, a, b):
                sos_viol.append((min(a, b), set_idx))

        fixed_bins = {var for var, _ in node.bin_fixes}
        # binaries score (branch priority, fractionality) so high-priority
        # ones split first regardless of how fractional they sit
        prio = self.slm.branch_priority
        bin_viol: list[tuple[tuple[int, float], VarId]] = []
        for var in self.binaries:
            if var in fixed_bins:
                continue
            frac = abs(point[var] - round(point[var]))
            if frac > self.options.int_tol:
                bin_viol.append(((prio.get(var, 0), frac), var))
            else:
                # integral but its indicator rows may be silently violated
                val = int(round(point[var]))
                worst = 0.0
                for k in self.ind_by_binary.get(var, ()):
                    ind = self.slm.indicator_constraints[k]
                    if ind.active_value != val:
                        continue
                    v = ind.expr.evaluate(point)
                    if ind.rel is Rel.LE:
                        worst = max(worst, v - ind.rhs)
                    elif ind.rel is Rel.GE:
                        worst = max(worst, ind.rhs - v)
                    else:
                        worst = max(worst, abs(v - ind.rhs))
                if worst > tol:
                    bin_viol.append(((prio.get(var, 0), 0.0), var))
        return pair_viol, sos_viol, bin_viol

    @staticmethod
    def _pick(viols):
        best_score, best_idx = viols[0]
        for score, idx in viols[1:]:
            if score > best_score or (score == best_score and idx < best_idx):
                best_score, best_idx = score, idx
        return best_idx

    def _first_unfixed_branch(self, node: _Node):
        """Deterministic fallback when a node relaxation is unbounded."""
        decided = set(node.dual_zero) | set(node.slack_zero)
        for idx in range(len(self.pairs)):
            if idx not in decided:
                return ("pair", idx)
        sos_fixed = {s for s, _ in node.sos_zero}
        for set_idx in range(len(self.slm.sos1_sets)):
            if set_idx not in sos_fixed:
                return ("sos", set_idx)
        fixed = {var for var, _ in node.bin_fixes}
        for var in self.binaries:
            if var not in fixed:
                return ("bin", var)
        return None


def solve_bnb(slm: SingleLevelModel, options: SolveOptions | None = None) -> SolveResult:
    """Solve the single-level problem exactly (see the module docstring for
    what "exactly" means for quadratic rows).  Deterministic for fixed
    inputs and options."""
    options = options or SolveOptions()
    engine = _Engine(slm, options)
    start = time.perf_counter()

    next_id = 0
    root = _Node(node_id=0, bound=-math.inf)
    next_id += 1
    heap: list[tuple[float, int, _Node]] = [(-math.inf, 0, root)]

    incumbent: dict[VarId, float] | None = None
    incumbent_obj = math.inf
    global_bound = -math.inf
    nodes = 0
    warnings: list[str] = []
    events: list[tuple[int, float | None, float]] = []
    status: SolveStatus | None = None

    def record_event():
        inc = None if incumbent is None else engine.flip * incumbent_obj
        events.append((nodes, inc, engine.flip * global_bound))

    def raise_bound(candidate: float) -> None:
        # the global bound never exceeds the incumbent objective
        nonlocal global_bound
        capped = min(candidate, incumbent_obj)
        if capped > global_bound:
            global_bound = capped
            record_event()

    def push(node: _Node):
        heapq.heappush(heap, (node.bound, node.node_id, node))

    def spawn(node: _Node, bound: float, **changes) -> _Node:
        nonlocal next_id
        child = _Node(
            node_id=next_id,
            bound=bound,
            bin_fixes=changes.get("bin_fixes", node.bin_fixes),
            dual_zero=changes.get("dual_zero", node.dual_zero),
            slack_zero=changes.get("slack_zero", node.slack_zero),
            sos_zero=changes.get("sos_zero", node.sos_zero),
        )
        next_id += 1
        return child

    # try the hints first; a surviving one becomes the starting incumbent
    for hint in options.hints or ():
        hnode = _Node(node_id=-1, bound=-math.inf,
                      bin_fixes=tuple(sorted(hint.items())))
        active, overrides = engine._node_lp_args(hnode)
        try:
            res = engine.lp.solve(active_candidates=active, bound_overrides=overrides)
        except SolverFailure:
            continue
        if res.status is not LpStatus.OPTIMAL or res.objective >= incumbent_obj - 1e-12:
            continue
        point = {info.id: float(res.x[info.id]) for info in engine.slm.variables}
        pair_viol, sos_viol, bin_viol = engine._violations(hnode, point)
        if pair_viol or sos_viol or bin_viol:
            continue
        if engine.slm.check_point(point, tol=max(options.feas_tol, 1e-7)):
            continue
        incumbent = point
        incumbent_obj = res.objective
        record_event()

    while heap:
        if nodes > 0:
            if options.node_limit is not None and nodes >= options.node_limit:
                status = SolveStatus.NODE_LIMIT
                break
            if time.perf_counter() - start >= options.time_limit_s:
                status = SolveStatus.TIME_LIMIT
                break

        bound, _, node = heapq.heappop(heap)
        raise_bound(bound)
        if incumbent is not None and bound >= incumbent_obj - 1e-9 * max(1.0, abs(incumbent_obj)):
            # everything left is at least as bad as the incumbent
            raise_bound(incumbent_obj)
            status = SolveStatus.OPTIMAL
            break
        nodes += 1

        active, overrides = engine._node_lp_args(node)
        try:
            res = engine.lp.solve(active_candidates=active, bound_overrides=overrides)
        except SolverFailure as exc:
            warnings.append(f"relaxation breakdown at node {node.node_id}: {exc}")
            status = SolveStatus.ERROR
            break

        if res.status is LpStatus.INFEASIBLE:
            continue
        if res.status is LpStatus.UNBOUNDED:
            choice = engine._first_unfixed_branch(node)
            if choice is None:
                return SolveResult(
                    SolveStatus.UNBOUNDED, None, None, None, None,
                    time.perf_counter() - start, nodes, warnings, events,
                )
            _branch(engine, node, choice, -math.inf, spawn, push)
            continue

        node_bound = max(res.objective, node.bound)
        if incumbent is not None and node_bound >= incumbent_obj - 1e-9 * max(1.0, abs(incumbent_obj)):
            continue

        point = {info.id: float(res.x[info.id]) for info in engine.slm.variables}
        pair_viol, sos_viol, bin_viol = engine._violations(node, point)

        if not pair_viol and not sos_viol and not bin_viol:
            bad = engine.slm.check_point(point, tol=max(options.feas_tol, 1e-7))
            if bad:
                warnings.append(
                    f"candidate at node {node.node_id} rejected: violates {bad[0]}"
                )
                continue
            if res.objective < incumbent_obj - 1e-12:
                incumbent = point
                incumbent_obj = res.objective
                record_event()
            continue

        if pair_viol:
            choice = ("pair", engine._pick(pair_viol))
        elif sos_viol:
            choice = ("sos", engine._pick(sos_viol))
        else:
            choice = ("bin", engine._pick(bin_viol))
        _branch(engine, node, choice, node_bound, spawn, push)

        if incumbent is not None and heap:
            frontier = min(h[0] for h in heap)
            if compute_gap(incumbent_obj, frontier) <= 100.0 * options.gap_tol:
                raise_bound(frontier)
                status = SolveStatus.OPTIMAL
                break

    elapsed = time.perf_counter() - start

    if status is None:
        # the tree was exhausted
        if incumbent is None:
            return SolveResult(SolveStatus.INFEASIBLE, None, None, None, None,
                               elapsed, nodes, warnings, events)
        status = SolveStatus.OPTIMAL
        raise_bound(incumbent_obj)
    elif status in (SolveStatus.TIME_LIMIT, SolveStatus.NODE_LIMIT) and heap:
        # the frontier min is the honest bound when stopping early
        raise_bound(min(b for b, _, _ in heap))

    objective = None if incumbent is None else engine.flip * incumbent_obj
    bound_out = None if math.isinf(global_bound) else engine.flip * global_bound
    gap = None
    if objective is not None and bound_out is not None:
        gap = compute_gap(objective, bound_out)
    return SolveResult(status, incumbent, objective, bound_out, gap,
                       elapsed, nodes, warnings, events)


def _branch(engine: _Engine, node: _Node, choice, bound: float, spawn, push) -> None:
    kind, idx = choice
    if kind == "pair":
        push(spawn(node, bound, dual_zero=node.dual_zero + (idx,)))
        push(spawn(node, bound, slack_zero=node.slack_zero + (idx,)))
    elif kind == "sos":
        push(spawn(node, bound, sos_zero=node.sos_zero + ((idx, 0),)))
        push(spawn(node, bound, sos_zero=node.sos_zero + ((idx, 1),)))
    else:
        push(spawn(node, bound, bin_fixes=node.bin_fixes + ((idx, 0),)))
        push(spawn(node, bound, bin_fixes=node.bin_fixes + ((idx, 1),)))


def polish_incumbent(result: SolveResult, info: ReformulationInfo) -> None:
    """Replace a big-M incumbent by the equal-objective point of least
    dual-plus-slack mass.

    Big-M models are often dual-degenerate: a continuum of (dual, slack)
    values supports the same optimum and the node LP happily parks some of
    them at their caps, which then reads as the caps being binding.  With
    the binaries frozen to their incumbent values the disjunction is fully
    decided, so adding ``objective ≤ incumbent`` and minimizing
    Σ(dual + slack) over that polytope is exact: the objective cannot move,
    only the degenerate freedom is spent.  Caps that remain pressed after
    this are genuinely forced (see :func:`check_bigm_tightness`)."""
    if (
        info.mode.kind is not ModeKind.BIG_M
        or result.point is None
        or info.slm.quadratic_constraints
        or info.slm.sos1_sets
    ):
        return
    slm = info.slm
    point = result.point
    sense, objective = slm.objective
    flip = -1.0 if sense is Sense.MAX else 1.0

    builder = LpBuilder()
    secondary: dict[VarId, float] = {}
    for pair in info.pairs:
        secondary[pair.dual] = secondary.get(pair.dual, 0.0) + 1.0
        for vid, coeff in pair.slack.terms.items():
            secondary[vid] = secondary.get(vid, 0.0) + coeff
    for v in slm.variables:
        if v.id in slm.binaries:
            val = float(round(point[v.id]))
            builder.add_var(val, val, 0.0)
        else:
            builder.add_var(v.lb, v.ub, secondary.get(v.id, 0.0))
    for row in slm.linear_constraints:
        builder.add_row(row.expr.terms, row.rel, row.rhs)
    for ind in slm.indicator_constraints:
        if int(round(point[ind.binary])) == ind.active_value:
            builder.add_row(ind.expr.terms, ind.rel, ind.rhs)
    cap = flip * (result.objective - objective.constant)
    builder.add_row(
        {vid: flip * c for vid, c in objective.terms.items()},
        Rel.LE,
        cap + 1e-9 * max(1.0, abs(cap)),
    )
    try:
        res = builder.build().solve()
    except SolverFailure:
        return
    if res.status is not LpStatus.OPTIMAL:
        return
    new_point = {v.id: float(res.x[v.id]) for v in slm.variables}
    if slm.check_point(new_point, tol=1e-7):
        return
    result.point = new_point


def check_bigm_tightness(
    result: SolveResult,
    info: ReformulationInfo,
    margin: float = 1e-6,
) -> list[str]:
    """Warnings for big-M values the incumbent presses against.

    A dual at its M (or a slack at its M) means the chosen constants may be
    cutting off better solutions; the reported "optimum" is then only an
    optimum for the truncated problem.
    """
    if info.mode.kind is not ModeKind.BIG_M or result.point is None:
        return []
    out: list[str] = []
    point = result.point
    for idx, pair in enumerate(info.pairs):
        dual_m, primal_m = info.mode.dual_big_m, info.mode.primal_big_m
        dval = point[pair.dual]
        sval = pair.slack.evaluate(point)
        if dual_m - dval <= margin * max(1.0, dual_m):
            out.append(
                f"BigMBoundActive: dual of pair {idx} sits at its bound {dual_m:g}"
            )
        if primal_m - sval <= margin * max(1.0, primal_m):
            out.append(
                f"BigMBoundActive: slack of pair {idx} sits at its bound {primal_m:g}"
            )
    return out
