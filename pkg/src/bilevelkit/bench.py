"""Benchmark harness: instance × mode sweeps rendered as Obj/Gap/Time tables.

Table conventions: one block per mode with columns Inst | Obj | Gap | Time;
Obj printed to two decimals, Gap as integer percent, Time as integer
seconds; "-" marks a blank.  An entry is blank when the quantity does not
exist: time once it reaches the limit, gap when no bound is available, obj
without an incumbent.

CSV output carries the same rendered cells plus full-precision metadata
columns.  Wall-clock time never enters the CSV except through the rendered
integer Time cell, so identical configs give byte-identical files as long
as no cell straddles a whole-second boundary or the time limit (desk-scale
cells finish in milliseconds).
"""

from __future__ import annotations

import csv
import enum
import io
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .fileformats import export_model
from .kkt import build_kkt
from .pipeline import solve_bilevel
from .reformulate import ExpansionParams, Mode, ReformulationError, reformulate
from .solver.bnb import SolveOptions
from . import svr

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(Exception):
    pass


class Backend(enum.Enum):
    INTERNAL = "internal"
    EXPORT_ONLY = "export-only"


class OutputFormat(enum.Enum):
    MARKDOWN = "markdown"
    CSV = "csv"


@dataclass(frozen=True)
class ModeSpec:
    mode: Mode
    expansion: ExpansionParams | None = None

    @property
    def label(self) -> str:
        return self.mode.cli_name


@dataclass
class BenchConfig:
    instances: list[tuple[int, int, int]]  # (samples, features, seed)
    modes: list[ModeSpec]
    time_limit_s: float = 600.0
    backend: Backend = Backend.INTERNAL
    output: OutputFormat = OutputFormat.MARKDOWN
    out_dir: Path | None = None

    def __post_init__(self):
        if not self.instances or not self.modes:
            raise ConfigError("instances and modes must be nonempty")
        if self.time_limit_s < 0:
            raise ConfigError("time limit must be nonnegative")
        if self.backend is Backend.EXPORT_ONLY and self.out_dir is None:
            raise ConfigError("export-only runs need out_dir")


@dataclass
class BenchRecord:
    instance: str
    mode: str
    obj: float | None
    gap_pct: float | None
    time_s: float | None  # None once the limit is reached (the blank rule)
    status: str
    warnings: list[str]
    seed: int
    solver_meta: dict = field(default_factory=dict)


def _meta(spec: ModeSpec, time_limit_s: float) -> dict:
    mode = spec.mode
    meta = {
        "gap_formula": "100*|obj-bound|/max(|bound|,1e-10)",
        "time_limit_s": time_limit_s,
    }
    if mode.kind.value == "bigm":
        meta["big_m_primal"] = mode.primal_big_m
        meta["big_m_dual"] = mode.dual_big_m
    if mode.kind.value == "product":
        meta["tau"] = mode.tau
    if spec.expansion is not None:
        exp = spec.expansion
        meta["bits"] = exp.bits
        meta["grid_spacing"] = exp.spacing(exp.var_lb, exp.var_ub)
    return meta


def run_benchmark(cfg: BenchConfig) -> list[BenchRecord]:
    """One record per (instance, mode) cell, instance-major order.  A
    failing cell yields a status "Error" record; the sweep never aborts."""
    records: list[BenchRecord] = []
    for samples, features, seed in cfg.instances:
        name = svr.instance_name(samples, features)
        try:
            inst = svr.generate_instance(samples, features, seed)
            model = svr.build_bilevel(inst)
            kkt = build_kkt(model)
            build_err = None
        except Exception as exc:
            build_err = f"{type(exc).__name__}: {exc}"
        for spec in cfg.modes:
            meta = _meta(spec, cfg.time_limit_s)
            if build_err is not None:
                records.append(BenchRecord(name, spec.label, None, None, None,
                                           "Error", [build_err], seed, meta))
                continue
            try:
                records.append(
                    _run_cell(cfg, name, seed, model, kkt, spec, meta)
                )
            except Exception as exc:
                records.append(BenchRecord(
                    name, spec.label, None, None, None, "Error",
                    [f"{type(exc).__name__}: {exc}"], seed, meta,
                ))
    return records


def _run_cell(cfg, name, seed, model, kkt, spec: ModeSpec, meta: dict) -> BenchRecord:
    if cfg.backend is Backend.EXPORT_ONLY:
        info = reformulate(model, kkt, spec.mode,
                           spec.expansion if spec.mode.requires_expansion() else None)
        stem = f"{name.replace('/', '_')}_{seed}_{spec.label}"
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        files = [str(cfg.out_dir / f"{stem}.lp")]
        export_model(info.slm, "lp", files[0])
        if not info.slm.quadratic_constraints:
            files.append(str(cfg.out_dir / f"{stem}.mps"))
            export_model(info.slm, "mps", files[1])
        meta = dict(meta, files=files)
        return BenchRecord(name, spec.label, None, None, None, "Exported",
                           [], seed, meta)

    res, _ = solve_bilevel(
        model, spec.mode, spec.expansion,
        SolveOptions(time_limit_s=cfg.time_limit_s), kkt,
    )
    time_s = None if res.time_s >= cfg.time_limit_s else res.time_s
    meta = dict(meta, obj_full=res.objective, bound_full=res.bound)
    return BenchRecord(name, spec.label, res.objective, res.gap_pct, time_s,
                       res.status.value, list(res.warnings), seed, meta)


# -- rendering ---------------------------------------------------------------


def _obj_cell(rec: BenchRecord) -> str:
    return "-" if rec.obj is None else f"{rec.obj:.2f}"


def _gap_cell(rec: BenchRecord) -> str:
    return "-" if rec.gap_pct is None else str(int(round(rec.gap_pct)))


def _time_cell(rec: BenchRecord) -> str:
    return "-" if rec.time_s is None else str(int(rec.time_s))


def render_table(records: list[BenchRecord], fmt: OutputFormat) -> str:
    if not records:
        raise ValueError("no records to render")
    if fmt is OutputFormat.CSV:
        return _render_csv(records)
    return _render_markdown(records)


def _render_markdown(records: list[BenchRecord]) -> str:
    order: list[str] = []
    blocks: dict[str, list[BenchRecord]] = {}
    for rec in records:
        if rec.mode not in blocks:
            order.append(rec.mode)
            blocks[rec.mode] = []
        blocks[rec.mode].append(rec)
    out = [
        "# Benchmark",
        "",
        'Obj at two decimals, Gap in percent (%), Time in seconds (s); "-" marks a blank entry.',
    ]
    for mode in order:
        out += ["", f"## {mode}", "", "| Inst | Obj | Gap | Time |", "| --- | --- | --- | --- |"]
        for rec in blocks[mode]:
            out.append(
                f"| {rec.instance} | {_obj_cell(rec)} | {_gap_cell(rec)} | {_time_cell(rec)} |"
            )
        notes = [w for rec in blocks[mode] for w in rec.warnings]
        if any(rec.status not in ("Optimal", "Exported") for rec in blocks[mode]) or notes:
            out.append("")
            for rec in blocks[mode]:
                if rec.status not in ("Optimal", "Exported") or rec.warnings:
                    line = f"- {rec.instance}: {rec.status}"
                    if rec.warnings:
                        line += " (" + "; ".join(rec.warnings) + ")"
                    out.append(line)
    return "\n".join(out) + "\n"


_CSV_FIELDS = [
    "Inst", "Mode", "Obj", "Gap", "Time", "Status", "Seed",
    "ObjFull", "BoundFull", "Bits", "GridSpacing", "BigMPrimal", "BigMDual",
    "Tau", "TimeLimitS", "GapFormula", "Warnings",
]


def _render_csv(records: list[BenchRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_FIELDS)
    for rec in records:
        meta = rec.solver_meta

        def full(key: str) -> str:
            return "" if meta.get(key) is None else repr(meta[key])

        writer.writerow([
            rec.instance, rec.mode, _obj_cell(rec), _gap_cell(rec), _time_cell(rec),
            rec.status, rec.seed,
            full("obj_full"), full("bound_full"), full("bits"), full("grid_spacing"),
            full("big_m_primal"), full("big_m_dual"), full("tau"), full("time_limit_s"),
            meta.get("gap_formula", ""), "; ".join(rec.warnings),
        ])
    return buf.getvalue()


# -- configuration -----------------------------------------------------------


def parse_config(text: str, overrides: dict | None = None) -> BenchConfig:
    """Flat TOML: scalar keys plus ``instances`` / ``modes`` arrays (schema
    in the README).  ``overrides`` maps the same keys to CLI-provided values
    that win over the file."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad config syntax: {exc}") from None
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})

    known = {"instances", "modes", "time_limit_s", "backend", "output",
             "out_dir", "big_m", "tau", "bits", "bounds"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        instances = [
            (int(s), int(f), int(seed)) for s, f, seed in data.get("instances", [])
        ]
    except (TypeError, ValueError):
        raise ConfigError("instances must be an array of [samples, features, seed]") from None

    big_m = float(data.get("big_m", 100.0))
    tau = float(data.get("tau", 1e-9))
    bits = int(data.get("bits", 8))
    bounds = float(data.get("bounds", 100.0))
    specs: list[ModeSpec] = []
    for mname in data.get("modes", []):
        try:
            mode = Mode.from_cli_name(str(mname), primal_big_m=big_m,
                                      dual_big_m=big_m, tau=tau)
        except ReformulationError as exc:
            raise ConfigError(str(exc)) from None
        exp = ExpansionParams(-bounds, bounds, bits) if mode.requires_expansion() else None
        specs.append(ModeSpec(mode, exp))

    try:
        backend = Backend(data.get("backend", "internal"))
        output = OutputFormat(data.get("output", "markdown"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out_dir = data.get("out_dir")
    return BenchConfig(
        instances=instances,
        modes=specs,
        time_limit_s=float(data.get("time_limit_s", 600.0)),
        backend=backend,
        output=output,
        out_dir=None if out_dir is None else Path(out_dir),
    )
