"""Algebraic model layer.

Two model classes live here.  :class:`BilevelModel` states a bilevel program
directly: every variable and constraint is tagged with the level it belongs
to, the upper objective is affine, and the lower objective is convex
quadratic.  :class:`SingleLevelModel` is the flattened form produced by the
reformulation step: one objective, plain variables, and constraint classes
rich enough to express each reformulation mode (linear rows, quadratic rows,
SOS1 sets, indicator implications).

Expressions are dictionaries keyed by variable id, so models stay cheap to
build, inspect and rewrite.  Nothing in this module solves anything.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

# Variables are identified by dense integer ids handed out by the model.
VarId = int


class Level(enum.Enum):
    UPPER = "upper"
    LOWER = "lower"


class Sense(enum.Enum):
    MIN = "min"
    MAX = "max"


class Rel(enum.Enum):
    """Constraint relation."""

    LE = "<="
    GE = ">="
    EQ = "="


class ModelError(Exception):
    """Base class for modelling mistakes detected eagerly."""


class UnknownVariableError(ModelError):
    pass


class DuplicateNameError(ModelError):
    pass


class InvertedBoundsError(ModelError):
    pass


class MissingValueError(ModelError):
    """An evaluation point does not cover every variable of an expression."""


class InvalidModelError(ModelError):
    """Raised when an operation requires a model that passes validation."""

    def __init__(self, diagnostics: list["Diagnostic"]):
        self.diagnostics = diagnostics
        lines = "; ".join(f"{d.code}: {d.message}" for d in diagnostics)
        super().__init__(f"model failed validation: {lines}")


@dataclass
class AffineExpr:
    """Σ coeff·var + constant, with zero coefficients dropped."""

    terms: dict[VarId, float] = field(default_factory=dict)
    constant: float = 0.0

    def copy(self) -> "AffineExpr":
        return AffineExpr(dict(self.terms), self.constant)

    def add_term(self, var: VarId, coeff: float) -> None:
        new = self.terms.get(var, 0.0) + coeff
        if new == 0.0:
            self.terms.pop(var, None)
        else:
            self.terms[var] = new

    def add(self, other: "AffineExpr", scale: float = 1.0) -> None:
        """In-place self += scale * other."""
        for var, coeff in other.terms.items():
            self.add_term(var, scale * coeff)
        self.constant += scale * other.constant

    def scaled(self, scale: float) -> "AffineExpr":
        return AffineExpr({v: scale * c for v, c in self.terms.items()}, scale * self.constant)

    def variables(self) -> set[VarId]:
        return set(self.terms)

    def evaluate(self, point: dict[VarId, float]) -> float:
        total = self.constant
        for var, coeff in self.terms.items():
            try:
                total += coeff * point[var]
            except KeyError:
                raise MissingValueError(f"no value for variable id {var}") from None
        return total

    def is_zero(self) -> bool:
        return not self.terms and self.constant == 0.0


def affine(terms: dict[VarId, float] | None = None, constant: float = 0.0) -> AffineExpr:
    """Build an AffineExpr, dropping explicit zeros."""
    expr = AffineExpr({}, constant)
    if terms:
        for var, coeff in terms.items():
            expr.add_term(var, coeff)
    return expr


def _key(a: VarId, b: VarId) -> tuple[VarId, VarId]:
    # quadratic term keys are stored with the smaller id first
    return (a, b) if a <= b else (b, a)


@dataclass
class QuadExpr:
    """Σ coeff·var_a·var_b + affine part.

    Quadratic keys are canonical ``(min_id, max_id)`` pairs, so ``x*y`` and
    ``y*x`` accumulate into one coefficient and ``x*x`` is keyed ``(x, x)``.
    """

    quad: dict[tuple[VarId, VarId], float] = field(default_factory=dict)
    affine: AffineExpr = field(default_factory=AffineExpr)

    def copy(self) -> "QuadExpr":
        return QuadExpr(dict(self.quad), self.affine.copy())

    def add_quad_term(self, a: VarId, b: VarId, coeff: float) -> None:
        key = _key(a, b)
        new = self.quad.get(key, 0.0) + coeff
        if new == 0.0:
            self.quad.pop(key, None)
        else:
            self.quad[key] = new

    def add(self, other: "QuadExpr", scale: float = 1.0) -> None:
        for (a, b), coeff in other.quad.items():
            self.add_quad_term(a, b, scale * coeff)
        self.affine.add(other.affine, scale)

    def is_affine(self) -> bool:
        return not self.quad

    def variables(self) -> set[VarId]:
        out = self.affine.variables()
        for a, b in self.quad:
            out.add(a)
            out.add(b)
        return out

    def evaluate(self, point: dict[VarId, float]) -> float:
        total = self.affine.evaluate(point)
        for (a, b), coeff in self.quad.items():
            try:
                total += coeff * point[a] * point[b]
            except KeyError:
                missing = a if a not in point else b
                raise MissingValueError(f"no value for variable id {missing}") from None
        return total

    def partial(self, var: VarId) -> AffineExpr:
        """Gradient component ∂expr/∂var as an affine expression."""
        grad = AffineExpr({}, self.affine.terms.get(var, 0.0))
        for (a, b), coeff in self.quad.items():
            if a == b == var:
                grad.add_term(var, 2.0 * coeff)
            elif a == var:
                grad.add_term(b, coeff)
            elif b == var:
                grad.add_term(a, coeff)
        return grad


def quad(
    quad_terms: dict[tuple[VarId, VarId], float] | None = None,
    terms: dict[VarId, float] | None = None,
    constant: float = 0.0,
) -> QuadExpr:
    expr = QuadExpr({}, affine(terms, constant))
    if quad_terms:
        for (a, b), coeff in quad_terms.items():
            expr.add_quad_term(a, b, coeff)
    return expr


def to_quad(expr: "QuadExpr | AffineExpr") -> QuadExpr:
    if isinstance(expr, AffineExpr):
        return QuadExpr({}, expr.copy())
    return expr.copy()


@dataclass
class VariableInfo:
    id: VarId
    name: str
    level: Level
    lb: float = -math.inf
    ub: float = math.inf

    def is_free(self) -> bool:
        return math.isinf(self.lb) and math.isinf(self.ub)


@dataclass
class Constraint:
    """body rel rhs.  The body carries no constant: it is folded into rhs."""

    id: int
    name: str
    level: Level
    body: QuadExpr
    rel: Rel
    rhs: float


@dataclass
class Diagnostic:
    """One validation finding.  ``code`` is a stable machine-checkable tag."""

    code: str
    message: str


def _check_bounds(lb: float, ub: float, name: str) -> None:
    if math.isnan(lb) or math.isnan(ub) or lb > ub:
        raise InvertedBoundsError(f"variable {name!r}: invalid bounds [{lb}, {ub}]")


class BilevelModel:
    """A bilevel program with linear upper level and quadratic lower level.

    The class only records structure; semantic requirements (affine upper
    objective, convex lower objective, affine constraints, no upper×upper
    products in the lower objective) are reported by :meth:`validate` so a
    caller can surface every problem at once instead of failing on the first.
    """

    def __init__(self, name: str = "bilevel"):
        self.name = name
        self.variables: list[VariableInfo] = []
        self.constraints: list[Constraint] = []
        self.upper_objective: tuple[Sense, QuadExpr] = (Sense.MIN, QuadExpr())
        self.lower_objective: tuple[Sense, QuadExpr] = (Sense.MIN, QuadExpr())
        self._names: dict[str, VarId] = {}

    # -- construction -----------------------------------------------------

    def add_variable(
        self,
        name: str,
        level: Level,
        lb: float = -math.inf,
        ub: float = math.inf,
    ) -> VarId:
        if name in self._names:
            raise DuplicateNameError(f"variable name {name!r} already used")
        _check_bounds(lb, ub, name)
        vid = len(self.variables)
        self.variables.append(VariableInfo(vid, name, level, lb, ub))
        self._names[name] = vid
        return vid

    def add_constraint(
        self,
        name: str,
        level: Level,
        body: QuadExpr | AffineExpr,
        rel: Rel,
        rhs: float,
    ) -> int:
        body = to_quad(body)
        self._check_vars(body.variables(), name)
        # fold the body constant into the right-hand side
        rhs = rhs - body.affine.constant
        body.affine.constant = 0.0
        cid = len(self.constraints)
        self.constraints.append(Constraint(cid, name, level, body, rel, rhs))
        return cid

    def set_objective(self, level: Level, sense: Sense, expr: QuadExpr | AffineExpr) -> None:
        expr = to_quad(expr)
        self._check_vars(expr.variables(), f"{level.value} objective")
        if level is Level.UPPER:
            self.upper_objective = (sense, expr)
        else:
            self.lower_objective = (sense, expr)

    def _check_vars(self, vars_used: set[VarId], where: str) -> None:
        n = len(self.variables)
        for v in vars_used:
            if not (0 <= v < n):
                raise UnknownVariableError(f"{where}: unknown variable id {v}")

    # -- lookups ----------------------------------------------------------

    def variable(self, vid: VarId) -> VariableInfo:
        return self.variables[vid]

    def variable_by_name(self, name: str) -> VariableInfo:
        try:
            return self.variables[self._names[name]]
        except KeyError:
            raise UnknownVariableError(f"no variable named {name!r}") from None

    def level_variables(self, level: Level) -> list[VariableInfo]:
        return [v for v in self.variables if v.level is level]

    def level_constraints(self, level: Level) -> list[Constraint]:
        return [c for c in self.constraints if c.level is level]

    # -- validation -------------------------------------------------------

    def validate(self) -> list[Diagnostic]:
        """Check the structural rules; empty list means the model is usable."""
        diags: list[Diagnostic] = []
        level_of = {v.id: v.level for v in self.variables}

        up_sense, up_expr = self.upper_objective
        if not up_expr.is_affine():
            diags.append(Diagnostic("NonAffineUpperObjective", "upper objective has quadratic terms"))

        lo_sense, lo_expr = self.lower_objective
        lower_quad: dict[tuple[VarId, VarId], float] = {}
        for (a, b), coeff in lo_expr.quad.items():
            a_low = level_of[a] is Level.LOWER
            b_low = level_of[b] is Level.LOWER
            if a_low and b_low:
                lower_quad[(a, b)] = coeff
            elif not a_low and not b_low:
                diags.append(
                    Diagnostic(
                        "UpperQuadraticInLowerObjective",
                        f"lower objective multiplies upper variables "
                        f"{self.variables[a].name!r} and {self.variables[b].name!r}",
                    )
                )
        # convexity of the lower-lower block, in minimization orientation
        if lower_quad:
            sign = 1.0 if lo_sense is Sense.MIN else -1.0
            if not _psd_check(lower_quad, sign):
                diags.append(
                    Diagnostic(
                        "NonConvexLower",
                        "lower objective quadratic in lower variables is not "
                        "positive semidefinite (eigenvalue below -1e-9)",
                    )
                )

        for cons in self.constraints:
            if cons.level is Level.LOWER and not cons.body.is_affine():
                diags.append(
                    Diagnostic(
                        "NonAffineLowerConstraint",
                        f"lower constraint {cons.name!r} has quadratic terms",
                    )
                )
            if cons.level is Level.UPPER and not cons.body.is_affine():
                # allowed in the IR but flagged: downstream steps keep these as
                # quadratic rows and the bundled solver will not handle them
                diags.append(
                    Diagnostic(
                        "QuadraticUpperConstraint",
                        f"upper constraint {cons.name!r} has quadratic terms",
                    )
                )
        return diags

    def validated(self) -> "BilevelModel":
        diags = self.validate()
        if diags:
            raise InvalidModelError(diags)
        return self


def _psd_check(quad_terms: dict[tuple[VarId, VarId], float], sign: float) -> bool:
    """Smallest eigenvalue of the symmetric coefficient matrix ≥ -1e-9·scale."""
    import numpy as np

    ids = sorted({v for key in quad_terms for v in key})
    pos = {v: i for i, v in enumerate(ids)}
    n = len(ids)
    mat = np.zeros((n, n))
    for (a, b), coeff in quad_terms.items():
        coeff *= sign
        if a == b:
            mat[pos[a], pos[a]] += coeff
        else:
            mat[pos[a], pos[b]] += coeff / 2.0
            mat[pos[b], pos[a]] += coeff / 2.0
    if n == 0:
        return True
    eigmin = float(np.linalg.eigvalsh(mat)[0])
    scale = max(1.0, float(abs(mat).max()))
    return eigmin >= -1e-9 * scale


# -------------------------------------------------------------------------
# flattened single-level form
# -------------------------------------------------------------------------


@dataclass
class LinearConstraint:
    name: str
    expr: AffineExpr
    rel: Rel
    rhs: float


@dataclass
class QuadraticConstraint:
    """A quadratic row, optionally annotated with the complementarity pairs
    it encodes so a branch-and-bound solver can treat it as a disjunction.

    ``aggregate`` marks the single strong-duality row, whose annotation lists
    every pair at once.
    """

    name: str
    expr: QuadExpr
    rel: Rel
    rhs: float
    complementarity: list[tuple[VarId, AffineExpr]] = field(default_factory=list)
    aggregate: bool = False


@dataclass
class Sos1Set:
    """At most one member may be nonzero.  Members here are always a
    (dual, slack-variable) pair with weights (1, 2)."""

    name: str
    members: list[VarId]
    weights: list[float]


@dataclass
class IndicatorConstraint:
    """binary = active_value  implies  expr rel rhs."""

    name: str
    binary: VarId
    active_value: int
    expr: AffineExpr
    rel: Rel
    rhs: float


class SingleLevelModel:
    """Flattened problem: min/max one affine objective over mixed constraint
    classes.  Binary variables are listed in ``binaries``; every variable id
    indexes ``variables`` densely, continuing the numbering of whatever model
    the variables were copied from."""

    def __init__(self, name: str = "single_level"):
        self.name = name
        self.variables: list[VariableInfo] = []
        self.binaries: set[VarId] = set()
        self.objective: tuple[Sense, AffineExpr] = (Sense.MIN, AffineExpr())
        self.linear_constraints: list[LinearConstraint] = []
        self.quadratic_constraints: list[QuadraticConstraint] = []
        self.sos1_sets: list[Sos1Set] = []
        self.indicator_constraints: list[IndicatorConstraint] = []
        # higher value = branch earlier; absent means 0
        self.branch_priority: dict[VarId, int] = {}
        self._names: dict[str, VarId] = {}

    def add_variable(
        self,
        name: str,
        lb: float = -math.inf,
        ub: float = math.inf,
        level: Level = Level.UPPER,
        binary: bool = False,
    ) -> VarId:
        if name in self._names:
            raise DuplicateNameError(f"variable name {name!r} already used")
        _check_bounds(lb, ub, name)
        vid = len(self.variables)
        self.variables.append(VariableInfo(vid, name, level, lb, ub))
        self._names[name] = vid
        if binary:
            self.binaries.add(vid)
        return vid

    def adopt_variable(self, info: VariableInfo) -> None:
        """Append an existing VariableInfo; its id must equal the next slot."""
        if info.id != len(self.variables):
            raise ModelError(f"variable id {info.id} does not continue the numbering")
        if info.name in self._names:
            raise DuplicateNameError(f"variable name {info.name!r} already used")
        self.variables.append(info)
        self._names[info.name] = info.id

    def variable(self, vid: VarId) -> VariableInfo:
        return self.variables[vid]

    def variable_by_name(self, name: str) -> VariableInfo:
        try:
            return self.variables[self._names[name]]
        except KeyError:
            raise UnknownVariableError(f"no variable named {name!r}") from None

    def add_linear(self, name: str, expr: AffineExpr, rel: Rel, rhs: float) -> LinearConstraint:
        rhs = rhs - expr.constant
        expr = AffineExpr(dict(expr.terms), 0.0)
        row = LinearConstraint(name, expr, rel, rhs)
        self.linear_constraints.append(row)
        return row

    def add_quadratic(
        self,
        name: str,
        expr: QuadExpr,
        rel: Rel,
        rhs: float,
        complementarity: list[tuple[VarId, AffineExpr]] | None = None,
        aggregate: bool = False,
    ) -> QuadraticConstraint:
        rhs = rhs - expr.affine.constant
        expr = QuadExpr(dict(expr.quad), AffineExpr(dict(expr.affine.terms), 0.0))
        row = QuadraticConstraint(name, expr, rel, rhs, list(complementarity or []), aggregate)
        self.quadratic_constraints.append(row)
        return row

    def add_sos1(self, name: str, members: list[VarId], weights: list[float]) -> Sos1Set:
        if len(members) != len(weights):
            raise ModelError(f"SOS1 set {name!r}: members and weights differ in length")
        sos = Sos1Set(name, list(members), list(weights))
        self.sos1_sets.append(sos)
        return sos

    def add_indicator(
        self,
        name: str,
        binary: VarId,
        active_value: int,
        expr: AffineExpr,
        rel: Rel,
        rhs: float,
    ) -> IndicatorConstraint:
        if active_value not in (0, 1):
            raise ModelError(f"indicator {name!r}: active value must be 0 or 1")
        rhs = rhs - expr.constant
        expr = AffineExpr(dict(expr.terms), 0.0)
        ind = IndicatorConstraint(name, binary, active_value, expr, rel, rhs)
        self.indicator_constraints.append(ind)
        return ind

    def counts(self) -> dict[str, int]:
        """Size summary used by tests and the export headers."""
        return {
            "variables": len(self.variables),
            "binaries": len(self.binaries),
            "linear": len(self.linear_constraints),
            "quadratic": len(self.quadratic_constraints),
            "sos1": len(self.sos1_sets),
            "indicator": len(self.indicator_constraints),
        }

    def check_point(self, point: dict[VarId, float], tol: float = 1e-8) -> list[str]:
        """Names of constraints/bounds the point violates beyond ``tol``.

        Indicator implications are checked only when the binary is within
        ``tol`` of its active value; SOS1 sets require all but one member to
        be within ``tol`` of zero.
        """
        bad: list[str] = []
        for info in self.variables:
            val = point[info.id]
            if val < info.lb - tol or val > info.ub + tol:
                bad.append(f"bound:{info.name}")
            if info.id in self.binaries and min(abs(val), abs(val - 1.0)) > tol:
                bad.append(f"integrality:{info.name}")
        for row in self.linear_constraints:
            if _row_violation(row.expr.evaluate(point), row.rel, row.rhs) > tol:
                bad.append(f"linear:{row.name}")
        for qrow in self.quadratic_constraints:
            if _row_violation(qrow.expr.evaluate(point), qrow.rel, qrow.rhs) > tol:
                bad.append(f"quadratic:{qrow.name}")
        for sos in self.sos1_sets:
            nonzero = [m for m in sos.members if abs(point[m]) > tol]
            if len(nonzero) > 1:
                bad.append(f"sos1:{sos.name}")
        for ind in self.indicator_constraints:
            if abs(point[ind.binary] - ind.active_value) <= tol:
                if _row_violation(ind.expr.evaluate(point), ind.rel, ind.rhs) > tol:
                    bad.append(f"indicator:{ind.name}")
        return bad


def _row_violation(value: float, rel: Rel, rhs: float) -> float:
    if rel is Rel.LE:
        return max(0.0, value - rhs)
    if rel is Rel.GE:
        return max(0.0, rhs - value)
    return abs(value - rhs)
