"""Acceptance gate: the nine contract criteria, one test each.

Each test prints a single PASS/FAIL line (bypassing capture, so the line
always reaches the console) and then asserts.  Tolerances are pinned here
and nowhere else; loosening them is a contract change, not a fix.
"""

import time
import tracemalloc

import numpy as np
import pytest

from bilevelkit.bench import BenchConfig, ModeSpec, OutputFormat, render_table, run_benchmark
from bilevelkit.fileformats import read_lp, write_lp
from bilevelkit.kkt import build_kkt, kkt_residual
from bilevelkit.oracle import enumerate_patterns, grid_search, solve_lower
from bilevelkit.pipeline import solve_bilevel
from bilevelkit.reformulate import ExpansionParams, Mode, reformulate
from bilevelkit.solver import SolveOptions, SolveStatus
from bilevelkit.svr import build_bilevel, generate_instance, one_sample_instance

FIVE_MODES = ["sos1", "indicator", "bigm", "product", "strong-duality"]
TWENTY = [(s, f, seed) for s in (2, 4, 6, 8, 10) for f in (1, 2) for seed in (0, 1)]


def _verdict(capsys, num: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {num}: {'PASS' if ok else 'FAIL'} ({detail})"
    with capsys.disabled():
        print(line, flush=True)
    assert ok, line


@pytest.fixture(scope="module")
def exact_twenty():
    """Enumeration-oracle objective for each of the twenty instances."""
    out = {}
    for s, f, seed in TWENTY:
        model = build_bilevel(generate_instance(s, f, seed))
        out[(s, f, seed)] = enumerate_patterns(model).objective
    return out


def test_criterion_1_mode_agreement(capsys, exact_twenty):
    start = time.perf_counter()
    worst = 0.0
    for s, f, seed in TWENTY:
        model = build_bilevel(generate_instance(s, f, seed))
        kkt = build_kkt(model)
        objs = []
        for name in FIVE_MODES:
            res, _ = solve_bilevel(model, Mode.from_cli_name(name), kkt=kkt)
            assert res.status is SolveStatus.OPTIMAL, (s, f, seed, name, res.status)
            objs.append(res.objective)
        ref = exact_twenty[(s, f, seed)]
        spread = max(objs) - min(objs)
        dev = max(abs(o - ref) for o in objs)
        worst = max(worst, spread, dev)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 60.0
    _verdict(capsys, 1, ok, f"20 instances x 5 modes, worst deviation {worst:.3e} <= 1e-6, "
                    f"{elapsed:.1f}s < 60s")


def test_criterion_2_oracle_sandwich(capsys, exact_twenty):
    sandwich_ok = 0
    close = 0
    for s, f, seed in TWENTY:
        exact = exact_twenty[(s, f, seed)]
        upper = grid_search(generate_instance(s, f, seed)).objective
        if exact <= upper + 1e-9:
            sandwich_ok += 1
        if abs(upper - exact) <= 0.1:
            close += 1
    ok = sandwich_ok == 20 and close >= 15
    _verdict(capsys, 2, ok, f"exact <= grid + 1e-9 on {sandwich_ok}/20, "
                    f"|grid - exact| <= 0.1 on {close}/20 (need >= 15)")


def test_criterion_3_lower_solver_kkt_residuals(capsys):
    rng = np.random.default_rng(20240817)
    worst = 0.0
    for _ in range(50):
        s = int(rng.integers(2, 11))
        f = int(rng.integers(1, 4))
        seed = int(rng.integers(0, 1000))
        inst = generate_instance(s, f, seed)
        model = build_bilevel(inst)
        kkt = build_kkt(model)
        c_val = float(10.0 ** rng.uniform(-2.0, 2.0))
        eps_val = float(rng.uniform(0.0, 2.0))
        c_var = model.variable_by_name("C").id
        eps = model.variable_by_name("eps").id
        sol = solve_lower(model, {c_var: c_val, eps: eps_val}, kkt=kkt)
        point = dict(sol.point)
        point[c_var] = c_val
        point[eps] = eps_val
        for i in inst.out_indices:
            resid = float(inst.y[i]) - sum(
                float(inst.x[i, j]) * point[model.variable_by_name(f"w[{j}]").id]
                for j in range(f)
            )
            point[model.variable_by_name(f"xi_U[{i}]").id] = abs(resid)
        worst = max(worst, kkt_residual(kkt, point).max())
    ok = worst <= 1e-7
    _verdict(capsys, 3, ok, f"50 random lower solves, worst KKT residual {worst:.3e} <= 1e-7")


def test_criterion_4_bigm_distortion_and_silence(capsys):
    model = build_bilevel(one_sample_instance())
    exact = enumerate_patterns(model).objective

    tight, _ = solve_bilevel(model, Mode.big_m(primal=1.0, dual=1.0))
    tight_warned = any("BigMBoundActive" in w for w in tight.warnings)
    tight_off = abs(tight.objective - exact) > 1e-3

    wide, _ = solve_bilevel(model, Mode.big_m(primal=100.0, dual=100.0))
    wide_match = abs(wide.objective - exact) <= 1e-6
    wide_silent = wide.warnings == []

    ok = tight_off and tight_warned and wide_match and wide_silent
    _verdict(capsys, 4, ok, f"M=1: off by {abs(tight.objective - exact):.4f} > 1e-3, "
                    f"warned={tight_warned}; M=100: off by "
                    f"{abs(wide.objective - exact):.2e} <= 1e-6, "
                    f"warnings={wide.warnings!r}")


def test_criterion_5_expansion_quality_improves_with_bits(capsys):
    model = build_bilevel(one_sample_instance())
    exact = enumerate_patterns(model).objective
    errors = []
    viol_ok = True
    detail = []
    for bits in (4, 8, 12):
        res, info = solve_bilevel(
            model,
            Mode.product(expanded=True),
            expansion=ExpansionParams(bits=bits),
            options=SolveOptions(time_limit_s=8.0),
        )
        assert res.point is not None, f"bits={bits} returned no incumbent"
        for pair in info.pairs:
            dual_var = info.slm.variable(pair.dual)
            spacing = (dual_var.ub - dual_var.lb) / (2 ** bits - 1)
            violation = abs(res.point[pair.dual] * pair.slack.evaluate(res.point))
            if violation > spacing * 100.0:
                viol_ok = False
        errors.append(abs(res.objective - exact))
        detail.append(f"bits={bits}: obj={res.objective:.6f} ({res.status.value})")
    monotone = all(errors[i + 1] <= errors[i] + 1e-9 for i in range(len(errors) - 1))
    ok = viol_ok and monotone
    _verdict(capsys, 5, ok, "; ".join(detail) + f"; errors {[f'{e:.4f}' for e in errors]} "
                    f"nonincreasing={monotone}, complementarity within grid tolerance={viol_ok}")


GOLDEN_10_01 = """# Benchmark

Obj at two decimals, Gap in percent (%), Time in seconds (s); "-" marks a blank entry.

## sos1

| Inst | Obj | Gap | Time |
| --- | --- | --- | --- |
| 10/01 | 0.14 | 0 | 0 |

## indicator

| Inst | Obj | Gap | Time |
| --- | --- | --- | --- |
| 10/01 | 0.14 | 0 | 0 |

## bigm

| Inst | Obj | Gap | Time |
| --- | --- | --- | --- |
| 10/01 | 0.14 | 0 | 0 |

## product

| Inst | Obj | Gap | Time |
| --- | --- | --- | --- |
| 10/01 | 0.14 | 0 | 0 |

## strong-duality

| Inst | Obj | Gap | Time |
| --- | --- | --- | --- |
| 10/01 | 0.14 | 0 | 0 |
"""


def test_criterion_6_golden_benchmark_table(capsys):
    cfg = BenchConfig(
        instances=[(10, 1, 42)],
        modes=[ModeSpec(Mode.from_cli_name(n)) for n in FIVE_MODES],
        time_limit_s=600.0,
    )
    text = render_table(run_benchmark(cfg), OutputFormat.MARKDOWN)
    ok = text == GOLDEN_10_01
    _verdict(capsys, 6, ok, "10/01 markdown table matches the golden rendering byte for byte"
             if ok else f"table drifted:\n{text}")


def test_criterion_7_benchmark_csv_is_reproducible(capsys):
    def run() -> str:
        cfg = BenchConfig(
            instances=[(4, 1, 7), (2, 1, 0)],
            modes=[ModeSpec(Mode.from_cli_name("sos1")),
                   ModeSpec(Mode.from_cli_name("bigm"))],
            time_limit_s=600.0,
        )
        return render_table(run_benchmark(cfg), OutputFormat.CSV)

    first, second = run(), run()
    ok = first == second
    _verdict(capsys, 7, ok, f"two benchmark runs, {len(first)} CSV bytes, byte-identical={ok}")


def test_criterion_8_lp_round_trip_and_sos_section(capsys):
    model = build_bilevel(generate_instance(10, 2, 0))
    kkt = build_kkt(model)

    bigm_slm = reformulate(model, kkt, Mode.big_m()).slm
    back = read_lp(write_lp(bigm_slm))
    counts_match = back.counts() == bigm_slm.counts()

    sos_text = write_lp(reformulate(model, kkt, Mode.sos1()).slm)
    n_sets = sos_text.count("S1::")

    ok = counts_match and n_sets == 15
    _verdict(capsys, 8, ok, f"bigm 10/02 round-trip counts match={counts_match}, "
                    f"SOS section has {n_sets} S1 sets (need exactly 15)")


def test_criterion_9_thousand_sample_build(capsys):
    tracemalloc.start()
    start = time.perf_counter()
    model = build_bilevel(generate_instance(1000, 5, 0))
    kkt = build_kkt(model)
    info = reformulate(model, kkt, Mode.big_m())
    elapsed = time.perf_counter() - start
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    counts = info.slm.counts()
    shape_ok = counts["variables"] == 4007 and counts["linear"] == 5505
    ok = elapsed < 5.0 and peak < 1024 ** 3 and shape_ok
    _verdict(capsys, 9, ok, f"1000/05 build+reformulate {elapsed:.2f}s < 5s, "
                    f"peak {peak / 1e6:.0f} MB < 1024 MB, "
                    f"{counts['variables']} vars / {counts['linear']} rows")
