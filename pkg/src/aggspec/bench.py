"""Experiment runner: scenario files, sweeps, ablations, CSV/text reports."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .core import AggSpecError, EngineConfig, Request, seeded_rng, validate_config
from .engine import RunMetrics, TraceEvent, run_pipelined, run_sequential, write_trace
from .oracles import CostModel, MarkovOracle, PerturbedOracle

ABLATION_STAGES = ("default", "majority", "selector", "pipeline")


class ParseError(AggSpecError):
    pass


@dataclass(frozen=True)
class OracleSpec:
    order: int = 2
    seed: int = 7
    concentration: float = 0.5


@dataclass(frozen=True)
class SSMSpec:
    fidelity: float
    noise_seed: int


@dataclass(frozen=True)
class Workload:
    num_requests: int = 8
    prompt_len_min: int = 4
    prompt_len_max: int = 8
    max_new_tokens: int = 128


@dataclass(frozen=True)
class Sweep:
    axis: str  # "s" | "batch" | "ablation"
    values: tuple = ()


@dataclass
class Scenario:
    name: str
    cfg: EngineConfig
    llm: OracleSpec
    ssms: list[SSMSpec]
    cost: CostModel
    workload: Workload
    mode: str = "pipelined"  # "sequential" | "pipelined"
    sweep: Sweep | None = None


def _take(raw: dict, section: str, fields: dict):
    """Pull known fields out of a dict, rejecting unknown ones."""
    for key in raw:
        if key not in fields:
            raise ParseError(f"unknown field {key!r} in {section!r}")
    return {k: raw[k] for k in raw}


_ENGINE_FIELDS = {f: None for f in EngineConfig.__dataclass_fields__}


def scenario_from_dict(doc: dict, *, name: str = "scenario") -> Scenario:
    top = {
        "name",
        "engine",
        "llm",
        "ssms",
        "cost",
        "workload",
        "mode",
        "sweep",
    }
    for key in doc:
        if key not in top:
            raise ParseError(f"unknown field {key!r} at top level")
    if "engine" not in doc:
        raise ParseError("missing required section 'engine'")
    if "ssms" not in doc or not doc["ssms"]:
        raise ParseError("at least one entry is required in 'ssms'")
    if "cost" not in doc:
        raise ParseError("missing required section 'cost'")

    ssms = [
        SSMSpec(**_take(s, f"ssms[{i}]", {"fidelity": None, "noise_seed": None}))
        for i, s in enumerate(doc["ssms"])
    ]

    engine_raw = _take(doc["engine"], "engine", _ENGINE_FIELDS)
    if "initial_weights" in engine_raw:
        engine_raw["initial_weights"] = tuple(engine_raw["initial_weights"])
    else:
        engine_raw["initial_weights"] = tuple(1.0 for _ in ssms)
    if "vocab_size" not in engine_raw:
        raise ParseError("engine.vocab_size is required")
    cfg = validate_config(EngineConfig(**engine_raw))

    llm = OracleSpec(
        **_take(doc.get("llm", {}), "llm", {"order": None, "seed": None, "concentration": None})
    )
    cost = CostModel(
        **_take(doc["cost"], "cost", {k: None for k in ("c0", "c1", "d0", "d1", "d2")})
    )
    workload = Workload(
        **_take(
            doc.get("workload", {}),
            "workload",
            {k: None for k in Workload.__dataclass_fields__},
        )
    )
    mode = doc.get("mode", "pipelined")
    if mode not in ("sequential", "pipelined"):
        raise ParseError(f"mode must be 'sequential' or 'pipelined', got {mode!r}")
    sweep = None
    if "sweep" in doc and doc["sweep"] is not None:
        raw = _take(doc["sweep"], "sweep", {"axis": None, "values": None})
        axis = raw.get("axis")
        if axis not in ("s", "batch", "ablation"):
            raise ParseError(f"sweep.axis must be 's', 'batch' or 'ablation', got {axis!r}")
        values = tuple(raw.get("values", ()))
        if axis == "ablation" and not values:
            values = ABLATION_STAGES
        if axis in ("s", "batch"):
            if not values:
                raise ParseError(f"sweep.values is required for axis {axis!r}")
            bad = [v for v in values if not isinstance(v, int) or v < 1]
            if bad:
                raise ParseError(f"sweep.values must be positive integers, got {bad}")
            if axis == "s" and any(v > cfg.s_max or v < cfg.s_min for v in values):
                raise ParseError("sweep.values must lie within [s_min, s_max]")
        sweep = Sweep(axis=axis, values=values)

    return Scenario(
        name=doc.get("name", name),
        cfg=cfg,
        llm=llm,
        ssms=ssms,
        cost=cost,
        workload=workload,
        mode=mode,
        sweep=sweep,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: scenario file must contain a JSON object")
    return scenario_from_dict(doc, name=path.stem)


def build_oracles(scenario: Scenario):
    llm = MarkovOracle(
        scenario.cfg.vocab_size,
        order=scenario.llm.order,
        seed=scenario.llm.seed,
        concentration=scenario.llm.concentration,
        context_cap=scenario.cfg.context_cap,
    )
    ssms = [PerturbedOracle(llm, spec.fidelity, spec.noise_seed) for spec in scenario.ssms]
    return ssms, llm


def make_requests(workload: Workload, vocab_size: int, seed: int) -> list[Request]:
    rng = seeded_rng(seed, "workload")
    requests = []
    for i in range(workload.num_requests):
        n = int(rng.integers(workload.prompt_len_min, workload.prompt_len_max + 1))
        prompt = [int(t) for t in rng.integers(0, vocab_size, size=n)]
        requests.append(
            Request(id=f"req-{i:03d}", prompt=prompt, max_new_tokens=workload.max_new_tokens)
        )
    return requests


def cell_seed(base_seed: int, axis: str, value) -> int:
    digest = hashlib.sha256(f"{base_seed}/{axis}/{value}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class ResultRow:
    scenario_id: str
    sweep_value: str
    throughput: float
    normalized_latency: float
    mean_acceptance: float
    final_s: int
    llm_utilization: float


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)


_COLUMNS = (
    "scenario_id",
    "sweep_value",
    "throughput",
    "normalized_latency",
    "mean_acceptance",
    "final_s",
    "llm_utilization",
)


def _row_from_metrics(scenario: Scenario, value, metrics: RunMetrics) -> ResultRow:
    final_s = metrics.s_trajectory[-1][1] if metrics.s_trajectory else scenario.cfg.s_init
    return ResultRow(
        scenario_id=scenario.name,
        sweep_value=str(value),
        throughput=metrics.throughput,
        normalized_latency=metrics.normalized_latency,
        mean_acceptance=metrics.mean_acceptance,
        final_s=final_s,
        llm_utilization=metrics.llm_utilization,
    )


def run_cell(
    scenario: Scenario,
    *,
    cfg: EngineConfig | None = None,
    mode: str | None = None,
    ssm_indices: list[int] | None = None,
    adaptive: bool = True,
    max_rounds: int | None = None,
) -> tuple[RunMetrics, list[TraceEvent]]:
    """Run one engine configuration of a scenario and return metrics plus trace."""
    cfg = cfg or scenario.cfg
    mode = mode or scenario.mode
    ssms, llm = build_oracles(replace(scenario, cfg=cfg))
    if ssm_indices is not None:
        ssms = [ssms[i] for i in ssm_indices]
        cfg = replace(cfg, initial_weights=tuple(cfg.initial_weights[i] for i in ssm_indices))
    requests = make_requests(scenario.workload, cfg.vocab_size, cfg.seed)
    runner = run_pipelined if mode == "pipelined" else run_sequential
    return runner(requests, ssms, llm, scenario.cost, cfg, adaptive=adaptive, max_rounds=max_rounds)


def _ablation_cells(scenario: Scenario, values):
    for stage in values:
        if stage not in ABLATION_STAGES:
            raise ParseError(f"unknown ablation stage {stage!r}")
        seed = cell_seed(scenario.cfg.seed, "ablation", stage)
        cfg = replace(scenario.cfg, seed=seed)
        if stage == "default":
            yield stage, dict(cfg=cfg, mode="sequential", ssm_indices=[0], adaptive=False)
        elif stage == "majority":
            yield stage, dict(cfg=cfg, mode="sequential", adaptive=False)
        elif stage == "selector":
            yield stage, dict(cfg=cfg, mode="sequential", adaptive=True)
        else:
            yield stage, dict(cfg=cfg, mode="pipelined", adaptive=True)


def run_sweep(scenario: Scenario, out_dir=None) -> ResultTable:
    """Run one engine per sweep cell (or a single cell for sweepless scenarios),
    writing per-cell traces next to the table when out_dir is given."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    cells: list[tuple[str, dict]] = []
    if scenario.sweep is None:
        cells.append(("-", dict()))
    elif scenario.sweep.axis == "s":
        for v in scenario.sweep.values:
            cfg = replace(
                scenario.cfg,
                s_init=v,
                s_min=v,
                s_max=v,
                seed=cell_seed(scenario.cfg.seed, "s", v),
            )
            cells.append((str(v), dict(cfg=cfg, adaptive=False)))
    elif scenario.sweep.axis == "batch":
        for v in scenario.sweep.values:
            cfg = replace(
                scenario.cfg,
                b_llm=v,
                b_ssm=v,
                seed=cell_seed(scenario.cfg.seed, "batch", v),
            )
            cells.append((str(v), dict(cfg=cfg)))
    else:
        cells.extend(_ablation_cells(scenario, scenario.sweep.values or ABLATION_STAGES))

    table = ResultTable()
    for value, kwargs in cells:
        metrics, trace = run_cell(scenario, **kwargs)
        table.rows.append(_row_from_metrics(scenario, value, metrics))
        if out is not None:
            safe = value.replace("/", "_")
            write_trace(trace, out / f"{scenario.name}-{safe}.trace.jsonl")
    return table


def format_report(table: ResultTable, fmt: str = "text") -> str:
    """Render the table as CSV (RFC-4180 quoting) or an aligned text table."""
    if not table.rows:
        raise ValueError("cannot format an empty result table")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_COLUMNS)
        for row in table.rows:
            writer.writerow(
                [
                    row.scenario_id,
                    row.sweep_value,
                    repr(row.throughput),
                    repr(row.normalized_latency),
                    repr(row.mean_acceptance),
                    row.final_s,
                    repr(row.llm_utilization),
                ]
            )
        return buf.getvalue()
    if fmt == "text":
        data = [_COLUMNS] + [
            (
                r.scenario_id,
                r.sweep_value,
                f"{r.throughput:.2f}",
                f"{r.normalized_latency:.3f}",
                f"{r.mean_acceptance:.3f}",
                str(r.final_s),
                f"{r.llm_utilization:.3f}",
            )
            for r in table.rows
        ]
        widths = [max(len(row[i]) for row in data) for i in range(len(_COLUMNS))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in data]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def emit_report(table: ResultTable, fmt: str, path) -> Path:
    """Write the rendered table to path; empty tables are an error and write nothing."""
    text = format_report(table, fmt)
    path = Path(path)
    path.write_text(text)
    return path


def read_report(path) -> ResultTable:
    """Parse a CSV report back into a ResultTable (inverse of emit_report)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != _COLUMNS:
            raise ParseError(f"unexpected CSV header {header}")
        rows = [
            ResultRow(
                scenario_id=r[0],
                sweep_value=r[1],
                throughput=float(r[2]),
                normalized_latency=float(r[3]),
                mean_acceptance=float(r[4]),
                final_s=int(r[5]),
                llm_utilization=float(r[6]),
            )
            for r in reader
        ]
    return ResultTable(rows=rows)


def measure_vl_curve(scenario: Scenario, *, max_rounds: int = 60) -> dict[int, float]:
    """Empirical mean verified length per fixed speculation length, from short
    sequential calibration runs."""
    curve = {}
    for s in range(scenario.cfg.s_min, scenario.cfg.s_max + 1):
        cfg = replace(scenario.cfg, s_init=s, s_min=s, s_max=s)
        metrics, trace = run_cell(
            scenario, cfg=cfg, mode="sequential", adaptive=False, max_rounds=max_rounds
        )
        vls = [ev.vl for ev in trace if ev.kind == "verify"]
        curve[s] = float(sum(vls) / len(vls)) if vls else 0.0
    return curve
