"""LP and MPS writers plus a reader for the LP dialect written here.

The LP dialect is CPLEX-flavoured: ``Minimize``/``Subject To``/``Bounds``/
``Binaries``/``SOS``/``End`` sections, quadratic parts inside ``[ ... ]``
brackets, indicator rows as ``z = 1 -> expr <= rhs``, SOS1 lines as
``name: S1:: member:weight ...``.  One entity per line, every variable
listed in ``Bounds``, terms ordered by variable id, numbers in shortest
round-trip form, so identical models produce byte-identical files.

Variable names pass through a documented transform: ``[`` and ``]`` become
``(`` and ``)`` (LP grammars reserve brackets for quadratic groups).  The
transform is injective on the names this package generates, so re-parsing
keeps names, bounds, structure and counts; original variable *levels* and
complementarity annotations are not representable and read back as plain
structure.

MPS output is the classic column-oriented layout (whitespace-separated
fields, names longer than 8 characters allowed, as modern readers accept)
with ``INTORG`` markers, an ``SOS`` section and an ``INDICATORS`` extension
section.  MPS has no quadratic-constraint syntax: writing one raises
:class:`QuadraticUnsupportedError`.  There is no MPS reader.
"""

from __future__ import annotations

import math

from .model import (
    AffineExpr,
    QuadExpr,
    Rel,
    Sense,
    SingleLevelModel,
    VarId,
)


class FormatError(Exception):
    pass


class QuadraticUnsupportedError(FormatError):
    """The target format cannot express a quadratic constraint."""


_REL_TOKEN = {Rel.LE: "<=", Rel.GE: ">=", Rel.EQ: "="}
_TOKEN_REL = {"<=": Rel.LE, ">=": Rel.GE, "=": Rel.EQ, "<": Rel.LE, ">": Rel.GE}


def sanitize_name(name: str) -> str:
    return name.replace("[", "(").replace("]", ")")


def _num(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def _affine_tokens(expr: AffineExpr, names: dict[VarId, str]) -> list[str]:
    parts: list[str] = []
    for vid in sorted(expr.terms):
        coeff = expr.terms[vid]
        if coeff == 0.0:
            continue
        sign = "-" if coeff < 0 else "+"
        mag = abs(coeff)
        if parts or sign == "-":
            parts.append(sign)
        parts.append(names[vid] if mag == 1.0 else f"{_num(mag)} {names[vid]}")
    if expr.constant != 0.0:
        sign = "-" if expr.constant < 0 else "+"
        if parts or sign == "-":
            parts.append(sign)
        parts.append(_num(abs(expr.constant)))
    if not parts:
        parts.append("0")
    return parts


def _quad_tokens(expr: QuadExpr, names: dict[VarId, str]) -> list[str]:
    parts = _affine_tokens(expr.affine, names) if not expr.affine.is_zero() else []
    inner: list[str] = []
    for (a, b) in sorted(expr.quad):
        coeff = expr.quad[(a, b)]
        if coeff == 0.0:
            continue
        sign = "-" if coeff < 0 else "+"
        mag = abs(coeff)
        if inner or sign == "-":
            inner.append(sign)
        lead = "" if mag == 1.0 else f"{_num(mag)} "
        if a == b:
            inner.append(f"{lead}{names[a]} ^ 2")
        else:
            inner.append(f"{lead}{names[a]} * {names[b]}")
    if inner:
        parts += ["[", *inner, "]"]
    return parts or ["0"]


# -- LP writer --------------------------------------------------------------


def write_lp(slm: SingleLevelModel) -> str:
    names = {info.id: sanitize_name(info.name) for info in slm.variables}
    sense, objective = slm.objective
    out: list[str] = [f"\\ {slm.name}"]
    out.append("Maximize" if sense is Sense.MAX else "Minimize")
    out.append(" obj: " + " ".join(_affine_tokens(objective, names)))
    out.append("Subject To")
    for row in slm.linear_constraints:
        body = " ".join(_affine_tokens(row.expr, names))
        out.append(f" {sanitize_name(row.name)}: {body} {_REL_TOKEN[row.rel]} {_num(row.rhs)}")
    for row in slm.quadratic_constraints:
        body = " ".join(_quad_tokens(row.expr, names))
        out.append(f" {sanitize_name(row.name)}: {body} {_REL_TOKEN[row.rel]} {_num(row.rhs)}")
    for ind in slm.indicator_constraints:
        body = " ".join(_affine_tokens(ind.expr, names))
        out.append(
            f" {sanitize_name(ind.name)}: {names[ind.binary]} = {ind.active_value} "
            f"-> {body} {_REL_TOKEN[ind.rel]} {_num(ind.rhs)}"
        )
    out.append("Bounds")
    for info in slm.variables:
        name = names[info.id]
        lo_fin, up_fin = math.isfinite(info.lb), math.isfinite(info.ub)
        if not lo_fin and not up_fin:
            out.append(f" {name} free")
        elif lo_fin and up_fin:
            if info.lb == info.ub:
                out.append(f" {name} = {_num(info.lb)}")
            else:
                out.append(f" {_num(info.lb)} <= {name} <= {_num(info.ub)}")
        elif lo_fin:
            out.append(f" {_num(info.lb)} <= {name}")
        else:
            # a bare "x <= u" would keep the default lower bound of zero
            out.append(f" -inf <= {name} <= {_num(info.ub)}")
    if slm.binaries:
        out.append("Binaries")
        for vid in sorted(slm.binaries):
            out.append(f" {names[vid]}")
    if slm.sos1_sets:
        out.append("SOS")
        for sos in slm.sos1_sets:
            members = " ".join(
                f"{names[m]}:{_num(w)}" for m, w in zip(sos.members, sos.weights)
            )
            out.append(f" {sanitize_name(sos.name)}: S1:: {members}")
    out.append("End")
    return "\n".join(out) + "\n"


# -- LP reader --------------------------------------------------------------


class _LpParser:
    def __init__(self, text: str, name: str):
        self.slm = SingleLevelModel(name)
        self._ids: dict[str, VarId] = {}
        self._seen_bounds: set[VarId] = set()
        self._parse(text)

    def _var(self, name: str) -> VarId:
        vid = self._ids.get(name)
        if vid is None:
            # LP-format default bounds; Bounds lines overwrite later
            vid = self.slm.add_variable(name, lb=0.0, ub=math.inf)
            self._ids[name] = vid
        return vid

    @staticmethod
    def _is_number(tok: str) -> bool:
        try:
            float(tok)
            return True
        except ValueError:
            return False

    def _parse_expr(self, tokens: list[str]) -> QuadExpr:
        """Tokens of an expression: signs, coefficients, names, [ ] groups,
        ``*`` products and ``^ 2`` squares."""
        expr = QuadExpr()
        sign = 1.0
        coeff: float | None = None
        i = 0
        in_quad = False
        while i < len(tokens):
            tok = tokens[i]
            if tok == "+":
                sign = 1.0
            elif tok == "-":
                sign = -1.0
            elif tok == "[":
                in_quad = True
            elif tok == "]":
                in_quad = False
            elif self._is_number(tok):
                coeff = float(tok) if coeff is None else coeff * float(tok)
            else:
                c = sign * (1.0 if coeff is None else coeff)
                if i + 2 < len(tokens) and tokens[i + 1] == "*":
                    if not in_quad:
                        raise FormatError(f"product outside [ ] near {tok!r}")
                    expr.add_quad_term(self._var(tok), self._var(tokens[i + 2]), c)
                    i += 2
                elif i + 2 < len(tokens) and tokens[i + 1] == "^":
                    if not in_quad or tokens[i + 2] != "2":
                        raise FormatError(f"unsupported power near {tok!r}")
                    expr.add_quad_term(self._var(tok), self._var(tok), c)
                    i += 2
                else:
                    expr.affine.add_term(self._var(tok), c)
                sign, coeff = 1.0, None
            i += 1
        if coeff is not None:  # trailing bare number = constant term
            expr.affine.constant += sign * coeff
        return expr

    def _add_constraint(self, line: str) -> None:
        label, _, rest = line.partition(":")
        if not rest:
            raise FormatError(f"constraint without label: {line!r}")
        name = label.strip()
        tokens = rest.split()
        if "->" in tokens:  # z = activeval -> body rel rhs
            arrow = tokens.index("->")
            head = tokens[:arrow]
            if len(head) != 3 or head[1] != "=":
                raise FormatError(f"malformed indicator head in {line!r}")
            binary = self._var(head[0])
            active = int(head[2])
            body, rel, rhs = self._split_relation(tokens[arrow + 1:], line)
            expr = self._parse_expr(body)
            if expr.quad:
                raise FormatError(f"quadratic indicator body in {line!r}")
            self.slm.add_indicator(name, binary, active, expr.affine, rel, rhs)
            return
        body, rel, rhs = self._split_relation(tokens, line)
        expr = self._parse_expr(body)
        if expr.quad:
            self.slm.add_quadratic(name, expr, rel, rhs, complementarity=None)
        else:
            self.slm.add_linear(name, expr.affine, rel, rhs)

    @staticmethod
    def _split_relation(tokens: list[str], line: str) -> tuple[list[str], Rel, float]:
        for i in range(len(tokens) - 1, -1, -1):
            rel = _TOKEN_REL.get(tokens[i])
            if rel is not None:
                return tokens[:i], rel, float(tokens[i + 1])
        raise FormatError(f"no relation in constraint {line!r}")

    def _add_bound(self, line: str) -> None:
        tokens = line.split()
        if len(tokens) == 2 and tokens[1].lower() == "free":
            info = self.slm.variable(self._var(tokens[0]))
            info.lb, info.ub = -math.inf, math.inf
        elif len(tokens) == 3 and tokens[1] == "=":
            info = self.slm.variable(self._var(tokens[0]))
            info.lb = info.ub = float(tokens[2])
        elif len(tokens) == 3 and tokens[1] in ("<=", ">="):
            lo_side = tokens[1] == ">="
            if self._is_number(tokens[0]):  # "0 <= x" style
                info = self.slm.variable(self._var(tokens[2]))
                val, on_lb = float(tokens[0]), not lo_side
            else:
                info = self.slm.variable(self._var(tokens[0]))
                val, on_lb = float(tokens[2]), lo_side
            if on_lb:
                info.lb = val
            else:
                info.ub = val
        elif len(tokens) == 5 and tokens[1] == "<=" and tokens[3] == "<=":
            info = self.slm.variable(self._var(tokens[2]))
            info.lb, info.ub = float(tokens[0]), float(tokens[4])
        else:
            raise FormatError(f"unrecognized bound line {line!r}")

    def _add_sos(self, line: str) -> None:
        label, _, rest = line.partition(":")
        tokens = rest.split()
        if not tokens or tokens[0] != "S1::":
            raise FormatError(f"only S1 SOS sets are supported: {line!r}")
        members: list[VarId] = []
        weights: list[float] = []
        for entry in tokens[1:]:
            mname, _, w = entry.rpartition(":")
            members.append(self._var(mname))
            weights.append(float(w))
        self.slm.add_sos1(label.strip(), members, weights)

    def _parse(self, text: str) -> None:
        section = None
        objective_lines: list[str] = []
        obj_sense = Sense.MIN
        for raw in text.splitlines():
            line = raw.split("\\", 1)[0].strip()
            if not line:
                continue
            low = line.lower()
            if low in ("minimize", "maximize"):
                section, obj_sense = "obj", (Sense.MAX if low == "maximize" else Sense.MIN)
                continue
            if low == "subject to":
                section = "rows"
                continue
            if low in ("bounds", "binaries", "sos", "end"):
                section = low
                continue
            if section == "obj":
                objective_lines.append(line)
            elif section == "rows":
                self._add_constraint(line)
            elif section == "bounds":
                self._add_bound(line)
            elif section == "binaries":
                vid = self._var(line)
                self.slm.binaries.add(vid)
            elif section == "sos":
                self._add_sos(line)
            elif section == "end":
                raise FormatError(f"content after End: {line!r}")
            else:
                raise FormatError(f"line outside any section: {line!r}")
        obj_tokens = " ".join(objective_lines).partition(":")[2].split()
        if not obj_tokens:
            obj_tokens = " ".join(objective_lines).split()
        expr = self._parse_expr(obj_tokens)
        if expr.quad:
            raise FormatError("quadratic objectives are not supported")
        self.slm.objective = (obj_sense, expr.affine)


def read_lp(text: str, name: str = "parsed_lp") -> SingleLevelModel:
    return _LpParser(text, name).slm


# -- MPS writer ------------------------------------------------------------


def write_mps(slm: SingleLevelModel) -> str:
    if slm.quadratic_constraints:
        row = slm.quadratic_constraints[0]
        raise QuadraticUnsupportedError(
            f"MPS cannot express quadratic constraint {row.name!r}"
        )
    names = {info.id: sanitize_name(info.name) for info in slm.variables}
    sense, objective = slm.objective
    rel_tag = {Rel.LE: "L", Rel.GE: "G", Rel.EQ: "E"}

    out: list[str] = [f"NAME          {sanitize_name(slm.name)}"]
    if sense is Sense.MAX:
        out.append("OBJSENSE\n    MAX")
    out.append("ROWS")
    out.append(" N  obj")
    rows: list[tuple[str, AffineExpr, Rel, float]] = [
        (sanitize_name(r.name), r.expr, r.rel, r.rhs) for r in slm.linear_constraints
    ] + [
        (sanitize_name(r.name), r.expr, r.rel, r.rhs) for r in slm.indicator_constraints
    ]
    for rname, _, rel, _ in rows:
        out.append(f" {rel_tag[rel]}  {rname}")

    # column-major coefficient lists
    by_var: dict[VarId, list[tuple[str, float]]] = {info.id: [] for info in slm.variables}
    for vid, coeff in objective.terms.items():
        by_var[vid].append(("obj", coeff))
    for rname, expr, _, _ in rows:
        for vid, coeff in expr.terms.items():
            by_var[vid].append((rname, coeff))
    out.append("COLUMNS")
    in_int = False
    for info in slm.variables:
        is_bin = info.id in slm.binaries
        if is_bin != in_int:
            marker = "'INTORG'" if is_bin else "'INTEND'"
            out.append(f"    MARKER    'MARKER'    {marker}")
            in_int = is_bin
        for rname, coeff in by_var[info.id]:
            out.append(f"    {names[info.id]}  {rname}  {_num(coeff)}")
    if in_int:
        out.append("    MARKER    'MARKER'    'INTEND'")

    out.append("RHS")
    for rname, _, _, rhs in rows:
        if rhs != 0.0:
            out.append(f"    RHS  {rname}  {_num(rhs)}")
    if objective.constant != 0.0:
        # MPS convention: objective constant enters negated through the RHS
        out.append(f"    RHS  obj  {_num(-objective.constant)}")

    out.append("BOUNDS")
    for info in slm.variables:
        name = names[info.id]
        if info.id in slm.binaries:
            out.append(f" BV BND  {name}")
            continue
        lo_fin, up_fin = math.isfinite(info.lb), math.isfinite(info.ub)
        if not lo_fin and not up_fin:
            out.append(f" FR BND  {name}")
            continue
        if lo_fin and up_fin and info.lb == info.ub:
            out.append(f" FX BND  {name}  {_num(info.lb)}")
            continue
        if not lo_fin:
            out.append(f" MI BND  {name}")
        elif info.lb != 0.0:
            out.append(f" LO BND  {name}  {_num(info.lb)}")
        if up_fin:
            out.append(f" UP BND  {name}  {_num(info.ub)}")

    if slm.sos1_sets:
        out.append("SOS")
        for k, sos in enumerate(slm.sos1_sets):
            out.append(f" S1 SOS  {sanitize_name(sos.name)}  {k + 1}")
            for m, w in zip(sos.members, sos.weights):
                out.append(f"    {names[m]}  {_num(w)}")
    if slm.indicator_constraints:
        out.append("INDICATORS")
        for ind in slm.indicator_constraints:
            out.append(
                f" IF {sanitize_name(ind.name)}  {names[ind.binary]}  {ind.active_value}"
            )
    out.append("ENDATA")
    return "\n".join(out) + "\n"


def export_model(slm: SingleLevelModel, fmt: str, path) -> None:
    """Write ``slm`` to ``path`` as ``"lp"`` or ``"mps"``; byte-deterministic."""
    fmt = fmt.lower()
    if fmt == "lp":
        text = write_lp(slm)
    elif fmt == "mps":
        text = write_mps(slm)
    else:
        raise FormatError(f"unknown export format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
