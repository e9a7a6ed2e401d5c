"""One-call composition: bilevel model -> KKT -> reformulation -> solve.

The expanded modes get special treatment: their un-expanded counterpart is
solved first (cheap, since pair branching closes desk-scale instances in
milliseconds) and the optimum is snapped onto the expansion grids to seed
the search with strong incumbents.  The grid restriction usually makes the
snapped points slightly suboptimal for the *expanded* problem, but they are
feasible far more often than anything a relaxation dive finds, and the
search then only has to prove or beat them.
"""

from __future__ import annotations

import time
from dataclasses import replace

from .kkt import KktSystem, build_kkt
from .model import BilevelModel
from .reformulate import (
    ExpansionParams,
    Mode,
    ReformulationInfo,
    expansion_hints,
    reformulate,
)
from .solver.bnb import (
    SolveOptions,
    SolveResult,
    check_bigm_tightness,
    polish_incumbent,
    solve_bnb,
)


def solve_bilevel(
    model: BilevelModel,
    mode: Mode,
    expansion: ExpansionParams | None = None,
    options: SolveOptions | None = None,
    kkt: KktSystem | None = None,
) -> tuple[SolveResult, ReformulationInfo]:
    """Reformulate ``model`` under ``mode`` and solve it.

    Returns the solve result (big-M tightness warnings already merged in)
    together with the reformulation bookkeeping.  ``result.time_s`` covers
    the whole pipeline including the hint pre-solve for expanded modes.
    """
    options = options or SolveOptions()
    start = time.perf_counter()
    if kkt is None:
        kkt = build_kkt(model)

    needs_exp = mode.requires_expansion()
    if needs_exp and expansion is None:
        expansion = ExpansionParams()
    info = reformulate(model, kkt, mode, expansion if needs_exp else None)

    hints = None
    if needs_exp:
        sibling = reformulate(model, kkt, replace(mode, expanded=False), None)
        sib_res = solve_bnb(sibling.slm, replace(options, hints=None))
        if sib_res.point is not None:
            hints = expansion_hints(info, sib_res.point)

    remaining = max(0.0, options.time_limit_s - (time.perf_counter() - start))
    res = solve_bnb(info.slm, replace(options, time_limit_s=remaining, hints=hints))
    polish_incumbent(res, info)
    res.warnings.extend(check_bigm_tightness(res, info))
    res.time_s = time.perf_counter() - start
    return res, info
