"""Command-line interface.

Subcommands: ``generate`` (write an instance CSV), ``solve`` (one instance
and mode), ``bench`` (full sweep from a TOML config), ``oracle`` (ground
truth by grid search or pattern enumeration), ``export`` (LP/MPS files).

Exit codes: 0 success, 1 any cell/solve error, 2 usage or configuration
error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bench as bench_mod
from . import oracle as oracle_mod
from . import svr
from .bench import Backend, BenchConfig, ModeSpec, OutputFormat
from .fileformats import export_model
from .kkt import build_kkt, kkt_residual
from .pipeline import solve_bilevel
from .reformulate import CLI_MODE_NAMES, ExpansionParams, Mode, reformulate
from .solver.bnb import SolveOptions


def _add_instance_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--samples", type=int, required=True, help="sample count S (>= 2)")
    p.add_argument("--features", type=int, required=True, help="feature count F (>= 1)")
    p.add_argument("--seed", type=int, default=0, help="instance seed (default 0)")


def _add_mode_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=CLI_MODE_NAMES, required=True)
    p.add_argument("--time-limit", type=float, default=600.0,
                   help="solve time limit in seconds (default 600)")
    p.add_argument("--big-m", type=float, default=100.0,
                   help="primal and dual big-M constant (default 100)")
    p.add_argument("--bounds", type=float, default=100.0,
                   help="expansion variable range [-bounds, bounds] (default 100)")
    p.add_argument("--bits", type=int, default=8,
                   help="binary expansion bits (default 8)")
    p.add_argument("--tau", type=float, default=1e-9,
                   help="product complementarity threshold (default 1e-9)")


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="bilevelkit",
        description="Bilevel hyperparameter tuning: reformulate, solve, cross-check.",
    )
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write an instance as CSV (+ JSON sidecar)")
    _add_instance_args(p)
    p.add_argument("--noise-amp", type=float, default=0.1)
    p.add_argument("--out", required=True, help="CSV path to write")

    p = sub.add_parser("solve", help="solve one instance under one mode")
    _add_instance_args(p)
    _add_mode_args(p)

    p = sub.add_parser("bench", help="run an instance x mode sweep from a config file")
    p.add_argument("--config", required=True, help="TOML config path")
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--big-m", type=float, default=None)
    p.add_argument("--bounds", type=float, default=None)
    p.add_argument("--bits", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--backend", choices=["internal", "export-only"], default=None)
    p.add_argument("--output", choices=["markdown", "csv"], default=None)
    p.add_argument("--out", default=None, help="output directory (overrides out_dir)")

    p = sub.add_parser("oracle", help="ground-truth objective for one instance")
    _add_instance_args(p)
    p.add_argument("--method", choices=["grid", "enumerate"], default="enumerate")

    p = sub.add_parser("export", help="write the reformulated model to LP or MPS")
    _add_instance_args(p)
    _add_mode_args(p)
    p.add_argument("--format", choices=["lp", "mps"], default="lp")
    p.add_argument("--out", required=True, help="file path to write")
    return top


def _mode_of(args) -> tuple[Mode, ExpansionParams | None]:
    mode = Mode.from_cli_name(args.mode, primal_big_m=args.big_m,
                              dual_big_m=args.big_m, tau=args.tau)
    exp = None
    if mode.requires_expansion():
        exp = ExpansionParams(-args.bounds, args.bounds, args.bits)
    return mode, exp


def _cmd_generate(args) -> int:
    inst = svr.generate_instance(args.samples, args.features, args.seed,
                                 noise_amp=args.noise_amp)
    svr.save_instance(inst, args.out)
    print(f"{inst.name} (seed {inst.seed}) -> {args.out}")
    return 0


def _cmd_solve(args) -> int:
    inst = svr.generate_instance(args.samples, args.features, args.seed)
    model = svr.build_bilevel(inst)
    kkt = build_kkt(model)
    mode, exp = _mode_of(args)
    res, _ = solve_bilevel(model, mode, exp,
                           SolveOptions(time_limit_s=args.time_limit), kkt)

    obj = "-" if res.objective is None else f"{res.objective:.2f}"
    gap = "-" if res.gap_pct is None else str(int(round(res.gap_pct)))
    tim = "-" if res.time_s >= args.time_limit else str(int(res.time_s))
    print("| Inst | Obj | Gap | Time |")
    print(f"| {inst.name} | {obj} | {gap} | {tim} |")
    print(f"status: {res.status.value}  nodes: {res.nodes}  mode: {mode.cli_name}")
    for w in res.warnings:
        print(f"warning: {w}")
    if res.point is not None:
        resid = kkt_residual(kkt, res.point)
        print(
            "KKT residuals at returned point: "
            f"stationarity {resid.stationarity:.2e}, "
            f"feasibility {resid.feasibility:.2e}, "
            f"complementarity {resid.complementarity:.2e}"
        )
    return 0 if res.status.value != "Error" else 1


def _cmd_bench(args) -> int:
    overrides = {
        "time_limit_s": args.time_limit,
        "big_m": args.big_m,
        "bounds": args.bounds,
        "bits": args.bits,
        "tau": args.tau,
        "backend": args.backend,
        "output": args.output,
        "out_dir": args.out,
    }
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    cfg = bench_mod.parse_config(text, overrides)
    records = bench_mod.run_benchmark(cfg)
    table = bench_mod.render_table(records, cfg.output)
    print(table, end="")
    if cfg.out_dir is not None:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        ext = "csv" if cfg.output is OutputFormat.CSV else "md"
        out_path = cfg.out_dir / f"bench.{ext}"
        out_path.write_text(table, encoding="utf-8")
        print(f"written: {out_path}", file=sys.stderr)
    return 1 if any(r.status == "Error" for r in records) else 0


def _cmd_oracle(args) -> int:
    inst = svr.generate_instance(args.samples, args.features, args.seed)
    if args.method == "grid":
        res = oracle_mod.grid_search(inst)
        print(f"{inst.name} grid-search objective: {res.objective!r} "
              f"(certificate {res.certificate})")
    else:
        model = svr.build_bilevel(inst)
        res = oracle_mod.enumerate_patterns(model)
        print(f"{inst.name} exact objective: {res.objective!r} "
              f"(certificate {res.certificate}, pattern {res.pattern_mask:#x}, "
              f"{res.patterns_feasible} feasible patterns)")
    return 0


def _cmd_export(args) -> int:
    inst = svr.generate_instance(args.samples, args.features, args.seed)
    model = svr.build_bilevel(inst)
    kkt = build_kkt(model)
    mode, exp = _mode_of(args)
    info = reformulate(model, kkt, mode, exp)
    export_model(info.slm, args.format, args.out)
    counts = info.slm.counts()
    print(f"{inst.name} {mode.cli_name} -> {args.out} "
          f"({counts['variables']} vars, {counts['linear']} linear rows)")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "solve": _cmd_solve,
    "bench": _cmd_bench,
    "oracle": _cmd_oracle,
    "export": _cmd_export,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (bench_mod.ConfigError, svr.InstanceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solve/export cell failures
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
