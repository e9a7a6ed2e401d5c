"""Single-level reformulations of the KKT system.

Every mode starts from the same base: upper objective, upper and lower
constraints, stationarity rows, and sign bounds on the duals.  What differs
is how each complementarity pair ``dual·slack = 0`` is encoded:

* ``SOS1``       - slack variable s = slack, SOS1 set {dual, s};
* ``INDICATOR``  - binary z with  z=1 ⇒ dual ≤ 0  and  z=0 ⇒ slack ≤ 0;
* ``BIG_M``      - binary z with  dual ≤ M_dual·z,  slack ≤ M_primal·(1−z);
* ``PRODUCT``    - quadratic row  dual·slack ≤ τ;
* ``STRONG_DUALITY`` - one aggregate row  primal − dual objective ≤ 0.

The last two are quadratic; with ``expanded=True`` their bilinear terms are
rewritten over binary grids (:func:`binary_expand`), which yields a MIP at
the cost of restricting each expanded variable to its grid.

Per expanded variable: ``bits`` binaries plus one linking equality.  Per
bilinear term p·q: ``bits`` product variables y_k = b_k·q, four exact
McCormick inequalities each (exact because b_k is binary), so 4·bits rows.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

from .kkt import ComplementarityPair, KktSystem, lower_dual_objective
from .model import (
    AffineExpr,
    Level,
    QuadExpr,
    Rel,
    Sense,
    SingleLevelModel,
    Sos1Set,
    IndicatorConstraint,
    VarId,
)

DEFAULT_TAU = 1e-9
DEFAULT_BIG_M = 100.0


class ReformulationError(Exception):
    pass


class ModeKind(enum.Enum):
    SOS1 = "sos1"
    INDICATOR = "indicator"
    BIG_M = "bigm"
    PRODUCT = "product"
    STRONG_DUALITY = "strong-duality"


@dataclass(frozen=True)
class Mode:
    """A complementarity-handling mode plus its parameters.

    ``expanded`` applies to PRODUCT and STRONG_DUALITY only and requests
    binary expansion of their quadratic rows.
    """

    kind: ModeKind
    primal_big_m: float = DEFAULT_BIG_M
    dual_big_m: float = DEFAULT_BIG_M
    tau: float = DEFAULT_TAU
    expanded: bool = False

    def __post_init__(self):
        if self.kind is ModeKind.BIG_M and (self.primal_big_m <= 0 or self.dual_big_m <= 0):
            raise ReformulationError("big-M values must be positive")
        if self.tau < 0:
            raise ReformulationError("tau must be nonnegative")
        if self.expanded and self.kind not in (ModeKind.PRODUCT, ModeKind.STRONG_DUALITY):
            raise ReformulationError(f"mode {self.kind.value} has no expanded form")

    @staticmethod
    def sos1() -> "Mode":
        return Mode(ModeKind.SOS1)

    @staticmethod
    def indicator() -> "Mode":
        return Mode(ModeKind.INDICATOR)

    @staticmethod
    def big_m(primal: float = DEFAULT_BIG_M, dual: float = DEFAULT_BIG_M) -> "Mode":
        return Mode(ModeKind.BIG_M, primal_big_m=primal, dual_big_m=dual)

    @staticmethod
    def product(tau: float = DEFAULT_TAU, expanded: bool = False) -> "Mode":
        return Mode(ModeKind.PRODUCT, tau=tau, expanded=expanded)

    @staticmethod
    def strong_duality(expanded: bool = False) -> "Mode":
        return Mode(ModeKind.STRONG_DUALITY, expanded=expanded)

    @property
    def cli_name(self) -> str:
        if self.kind in (ModeKind.PRODUCT, ModeKind.STRONG_DUALITY) and self.expanded:
            return self.kind.value + "-bin"
        return self.kind.value

    @staticmethod
    def from_cli_name(name: str, *, primal_big_m: float = DEFAULT_BIG_M,
                      dual_big_m: float = DEFAULT_BIG_M, tau: float = DEFAULT_TAU) -> "Mode":
        base = {
            "sos1": Mode.sos1(),
            "indicator": Mode.indicator(),
            "bigm": Mode.big_m(primal_big_m, dual_big_m),
            "product": Mode.product(tau),
            "product-bin": Mode.product(tau, expanded=True),
            "strong-duality": Mode.strong_duality(),
            "strong-duality-bin": Mode.strong_duality(expanded=True),
        }.get(name)
        if base is None:
            raise ReformulationError(f"unknown mode {name!r}")
        return base

    def requires_expansion(self) -> bool:
        return self.expanded


CLI_MODE_NAMES = [
    "sos1", "indicator", "bigm", "product", "product-bin",
    "strong-duality", "strong-duality-bin",
]


@dataclass(frozen=True)
class ExpansionParams:
    """Binary-expansion grid: variables are clamped into
    ``[var_lb, var_ub]`` and restricted to ``2**bits`` evenly spaced values."""

    var_lb: float = -100.0
    var_ub: float = 100.0
    bits: int = 8

    def __post_init__(self):
        if not (self.var_lb < self.var_ub):
            raise ReformulationError("expansion bounds must satisfy var_lb < var_ub")
        if not math.isfinite(self.var_lb) or not math.isfinite(self.var_ub):
            raise ReformulationError("expansion bounds must be finite")
        if self.bits < 1:
            raise ReformulationError("bits must be at least 1")

    def spacing(self, lo: float, hi: float) -> float:
        return (hi - lo) / (2 ** self.bits - 1)


@dataclass
class ReformulationInfo:
    """The reformulated model plus traceability for every auxiliary object."""

    slm: SingleLevelModel
    mode: Mode
    pairs: list[ComplementarityPair]
    pair_binaries: dict[int, VarId] = field(default_factory=dict)
    pair_slack_vars: dict[int, VarId] = field(default_factory=dict)
    expansion_binaries: dict[VarId, list[VarId]] = field(default_factory=dict)
    expansion_products: dict[tuple[VarId, int, VarId], VarId] = field(default_factory=dict)


def reformulate(
    model,
    kkt: KktSystem,
    mode: Mode,
    expansion: ExpansionParams | None = None,
) -> ReformulationInfo:
    """Flatten the bilevel model into a single-level problem under ``mode``.

    ``expansion`` must be given exactly when the mode requires it
    (``product-bin``/``strong-duality-bin``).
    """
    if mode.requires_expansion() and expansion is None:
        raise ReformulationError(f"mode {mode.cli_name} requires expansion parameters")
    if not mode.requires_expansion() and expansion is not None:
        raise ReformulationError(f"mode {mode.cli_name} takes no expansion parameters")

    slm = SingleLevelModel(name=model.name)
    for info in kkt.all_variables():
        slm.adopt_variable(replace(info))

    sense, upper_expr = model.upper_objective
    slm.objective = (sense, upper_expr.affine.copy())

    for cons in model.constraints:
        slm.add_linear(cons.name, cons.body.affine, cons.rel, cons.rhs)
    for var_id, expr in kkt.stationarity:
        slm.add_linear(f"stat_{slm.variable(var_id).name}", expr, Rel.EQ, 0.0)

    info = ReformulationInfo(slm, mode, list(kkt.pairs))

    quad_rows = []
    if mode.kind is ModeKind.SOS1:
        for idx, pair in enumerate(kkt.pairs):
            apply_sos1(slm, pair, idx, info)
    elif mode.kind is ModeKind.INDICATOR:
        for idx, pair in enumerate(kkt.pairs):
            apply_indicator(slm, pair, idx, info)
    elif mode.kind is ModeKind.BIG_M:
        for idx, pair in enumerate(kkt.pairs):
            apply_bigm(slm, pair, idx, mode.primal_big_m, mode.dual_big_m, info)
    elif mode.kind is ModeKind.PRODUCT:
        for idx, pair in enumerate(kkt.pairs):
            quad_rows.append(apply_product(slm, pair, idx, mode.tau))
    else:
        quad_rows.append(apply_strong_duality(slm, kkt))

    if mode.requires_expansion():
        dual_ids = frozenset(d.var for d in kkt.duals)
        upper_ids = frozenset(
            v.id for v in model.variables if v.level is Level.UPPER
        )
        binary_expand(slm, quad_rows, expansion, info, dual_ids, upper_ids)

    return info


def apply_sos1(slm: SingleLevelModel, pair: ComplementarityPair, idx: int,
               info: ReformulationInfo) -> None:
    """Materialize the slack as a variable and pair it with the dual in an
    SOS1 set (weights 1 and 2)."""
    s = slm.add_variable(f"comp_s[{idx}]", lb=0.0, level=Level.LOWER)
    link = AffineExpr({s: 1.0})
    link.add(pair.slack, -1.0)
    slm.add_linear(f"sos1_link[{idx}]", link, Rel.EQ, 0.0)
    slm.sos1_sets.append(Sos1Set(f"sos1[{idx}]", [pair.dual, s], [1.0, 2.0]))
    info.pair_slack_vars[idx] = s


def apply_indicator(slm: SingleLevelModel, pair: ComplementarityPair, idx: int,
                    info: ReformulationInfo) -> None:
    """Binary z: z = 1 forces the dual to zero, z = 0 forces the slack to
    zero (each side already has a ≥ 0 bound, so ≤ 0 pins it)."""
    z = slm.add_variable(f"comp_z[{idx}]", lb=0.0, ub=1.0, binary=True)
    slm.indicator_constraints.append(
        IndicatorConstraint(f"ind_dual[{idx}]", z, 1, AffineExpr({pair.dual: 1.0}), Rel.LE, 0.0)
    )
    slack = pair.slack
    slm.indicator_constraints.append(
        IndicatorConstraint(f"ind_slack[{idx}]", z, 0,
                            AffineExpr(dict(slack.terms)), Rel.LE, -slack.constant)
    )
    info.pair_binaries[idx] = z


def apply_bigm(slm: SingleLevelModel, pair: ComplementarityPair, idx: int,
               primal_m: float, dual_m: float, info: ReformulationInfo) -> None:
    """Fortuny-Amat rows:  dual ≤ M_dual·z  and  slack ≤ M_primal·(1−z)."""
    z = slm.add_variable(f"comp_z[{idx}]", lb=0.0, ub=1.0, binary=True)
    slm.add_linear(f"bigm_dual[{idx}]", AffineExpr({pair.dual: 1.0, z: -dual_m}), Rel.LE, 0.0)
    row = pair.slack.copy()
    row.add_term(z, primal_m)
    slm.add_linear(f"bigm_slack[{idx}]", row, Rel.LE, primal_m)
    info.pair_binaries[idx] = z


def apply_product(slm: SingleLevelModel, pair: ComplementarityPair, idx: int,
                  tau: float):
    """Quadratic row  dual·slack ≤ τ, annotated with its pair so the solver
    can branch it as a disjunction."""
    expr = QuadExpr()
    for v, coeff in pair.slack.terms.items():
        expr.add_quad_term(pair.dual, v, coeff)
    expr.affine.add_term(pair.dual, pair.slack.constant)
    return slm.add_quadratic(f"prod[{idx}]", expr, Rel.LE, tau,
                             complementarity=[(pair.dual, pair.slack.copy())])


def apply_strong_duality(slm: SingleLevelModel, kkt: KktSystem):
    """One aggregate row  primal objective − dual objective ≤ 0.

    Under stationarity the left side equals the sum of all complementarity
    products, so the row is annotated with every pair at once."""
    expr = kkt.lower_min_objective.copy()
    expr.add(lower_dual_objective(kkt), -1.0)
    pairs = [(p.dual, p.slack.copy()) for p in kkt.pairs]
    return slm.add_quadratic("strong_duality", expr, Rel.LE, 0.0,
                             complementarity=pairs, aggregate=True)


def binary_expand(
    slm: SingleLevelModel,
    quad_rows,
    params: ExpansionParams,
    info: ReformulationInfo,
    dual_ids: frozenset[VarId],
    upper_ids: frozenset[VarId],
) -> None:
    """Rewrite each quadratic row as linear rows over binary grids.

    For every bilinear term p·q one factor is designated for expansion: a
    dual if either factor is one, else an upper-level variable, else the
    smaller id (squares expand their single variable).  The designated
    factor is clamped into the expansion range, tied to the grid

        p = lo + Δ·Σ_k 2^k b_k,   Δ = (hi − lo)/(2^bits − 1),

    and each product b_k·q is linearized exactly with four McCormick rows.
    Expansion binaries are shared across terms and rows; product variables
    are shared per (p, bit, q).
    """

    def clamp(var: VarId) -> tuple[float, float]:
        v = slm.variable(var)
        lo = max(v.lb, params.var_lb)
        hi = min(v.ub, params.var_ub)
        if not lo < hi:
            raise ReformulationError(
                f"variable {v.name!r} has empty expansion range [{lo}, {hi}]"
            )
        v.lb, v.ub = lo, hi
        return lo, hi

    def ensure_grid(p: VarId) -> list[VarId]:
        existing = info.expansion_binaries.get(p)
        if existing is not None:
            return existing
        lo, hi = clamp(p)
        pname = slm.variable(p).name
        bits = [
            slm.add_variable(f"expb_{pname}[{k}]", lb=0.0, ub=1.0, binary=True)
            for k in range(params.bits)
        ]
        delta = params.spacing(lo, hi)
        link = AffineExpr({p: 1.0})
        for k, b in enumerate(bits):
            link.add_term(b, -delta * (2 ** k))
            # high bits pin large chunks of the grid range: branch them first
            slm.branch_priority[b] = k + 1
        slm.add_linear(f"explink_{pname}", link, Rel.EQ, lo)
        info.expansion_binaries[p] = bits
        return bits

    for row in quad_rows:
        new_expr = row.expr.affine.copy()
        for (a, b), coeff in sorted(row.expr.quad.items()):
            p = _designated_factor(a, b, dual_ids, upper_ids)
            q = b if p == a else a
            bits = ensure_grid(p)
            ql, qu = clamp(q)
            pv = slm.variable(p)
            delta = params.spacing(pv.lb, pv.ub)
            # p·q  =  lo_p·q + Δ·Σ 2^k (b_k·q)
            new_expr.add_term(q, coeff * pv.lb)
            for k, bvar in enumerate(bits):
                y = info.expansion_products.get((p, k, q))
                if y is None:
                    pname, qname = pv.name, slm.variable(q).name
                    y = slm.add_variable(
                        f"expy_{pname}[{k}]_{qname}",
                        lb=min(0.0, ql), ub=max(0.0, qu), level=Level.LOWER,
                    )
                    info.expansion_products[(p, k, q)] = y
                    tag = f"{pname}[{k}]_{qname}"
                    slm.add_linear(f"mc1_{tag}", AffineExpr({y: 1.0, bvar: -ql}), Rel.GE, 0.0)
                    slm.add_linear(f"mc2_{tag}", AffineExpr({y: 1.0, bvar: -qu}), Rel.LE, 0.0)
                    slm.add_linear(f"mc3_{tag}",
                                   AffineExpr({y: 1.0, q: -1.0, bvar: -ql}), Rel.LE, -ql)
                    slm.add_linear(f"mc4_{tag}",
                                   AffineExpr({y: 1.0, q: -1.0, bvar: -qu}), Rel.GE, -qu)
                new_expr.add_term(y, coeff * delta * (2 ** k))
        slm.add_linear(row.name, new_expr, row.rel, row.rhs)
        slm.quadratic_constraints.remove(row)


def _designated_factor(a: VarId, b: VarId, dual_ids, upper_ids) -> VarId:
    a_dual, b_dual = a in dual_ids, b in dual_ids
    if a_dual != b_dual:
        return a if a_dual else b
    if not a_dual:
        a_up, b_up = a in upper_ids, b in upper_ids
        if a_up != b_up:
            return a if a_up else b
    return min(a, b)


def expansion_hints(
    info: ReformulationInfo,
    reference: dict[VarId, float],
) -> list[dict[VarId, int]]:
    """Binary assignments that snap a reference point onto the expansion
    grids: floor, nearest and ceiling per expanded variable.

    The reference usually comes from solving the un-expanded counterpart
    exactly; whichever snap stays feasible is a strong starting incumbent
    for the branch-and-bound search (see ``SolveOptions.hints``).
    """
    if not info.expansion_binaries:
        return []
    hints: list[dict[VarId, int]] = []
    seen: set[tuple] = set()
    for snap in (math.floor, round, math.ceil):
        hint: dict[VarId, int] = {}
        for p, bits in info.expansion_binaries.items():
            v = info.slm.variable(p)
            delta = (v.ub - v.lb) / (2 ** len(bits) - 1)
            val = min(max(reference.get(p, v.lb), v.lb), v.ub)
            k = int(snap((val - v.lb) / delta))
            k = min(max(k, 0), 2 ** len(bits) - 1)
            for j, b in enumerate(bits):
                hint[b] = (k >> j) & 1
        key = tuple(sorted(hint.items()))
        if key not in seen:
            seen.add(key)
            hints.append(hint)
    return hints
