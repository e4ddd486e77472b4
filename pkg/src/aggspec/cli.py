"""Command-line experiment runner: run / sweep / ablate / oracle-s."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .bench import (
    Scenario,
    Sweep,
    emit_report,
    format_report,
    load_scenario,
    measure_vl_curve,
    run_sweep,
)
from .core import AggSpecError
from .selector import optimal_s_oracle

log = logging.getLogger("aggspec")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, help="path to a JSON scenario file")
    p.add_argument("--mode", choices=("sequential", "pipelined"), help="override scenario mode")
    p.add_argument("--seed", type=int, help="override the scenario base seed")
    p.add_argument("--out", default="out", help="output directory for tables and traces")
    p.add_argument("--format", choices=("csv", "text"), default="csv", help="report format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aggspec",
        description="Aggregated speculative decoding experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a single scenario")
    _add_common(p_run)

    p_sweep = sub.add_parser("sweep", help="run the scenario's sweep axis")
    _add_common(p_sweep)
    p_sweep.add_argument(
        "--sweep-s",
        metavar="LO..HI",
        help="sweep fixed speculation lengths over an inclusive range",
    )

    p_abl = sub.add_parser("ablate", help="run the four-stage ablation breakdown")
    _add_common(p_abl)

    p_os = sub.add_parser("oracle-s", help="print the cost-model-optimal speculation length")
    _add_common(p_os)
    return parser


def _apply_overrides(scenario: Scenario, args) -> Scenario:
    if args.mode:
        scenario = replace(scenario, mode=args.mode)
    if args.seed is not None:
        scenario = replace(scenario, cfg=replace(scenario.cfg, seed=args.seed))
    return scenario


def _parse_range(text: str) -> tuple[int, ...]:
    try:
        lo, hi = text.split("..")
        lo, hi = int(lo), int(hi)
    except ValueError:
        raise AggSpecError(f"--sweep-s expects LO..HI, got {text!r}")
    if lo < 1 or hi < lo:
        raise AggSpecError(f"invalid sweep range {text!r}")
    return tuple(range(lo, hi + 1))


def _emit(table, args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = "csv" if args.format == "csv" else "txt"
    path = emit_report(table, args.format, out / f"results.{ext}")
    print(format_report(table, "text"), end="")
    print(f"wrote {path}")


def main(argv=None) -> int:
    level = os.environ.get("AGGSPEC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)
    try:
        scenario = _apply_overrides(load_scenario(args.scenario), args)

        if args.command == "run":
            scenario = replace(scenario, sweep=None)
            _emit(run_sweep(scenario, out_dir=args.out), args)
        elif args.command == "sweep":
            if args.sweep_s:
                values = _parse_range(args.sweep_s)
                lo, hi = values[0], values[-1]
                cfg = replace(
                    scenario.cfg,
                    s_min=min(scenario.cfg.s_min, lo),
                    s_max=max(scenario.cfg.s_max, hi),
                    s_init=max(min(scenario.cfg.s_init, hi), lo),
                )
                scenario = replace(scenario, cfg=cfg, sweep=Sweep(axis="s", values=values))
            if scenario.sweep is None:
                raise AggSpecError("scenario has no sweep axis; pass --sweep-s or add one")
            _emit(run_sweep(scenario, out_dir=args.out), args)
        elif args.command == "ablate":
            scenario = replace(scenario, sweep=Sweep(axis="ablation"))
            _emit(run_sweep(scenario, out_dir=args.out), args)
        elif args.command == "oracle-s":
            curve = measure_vl_curve(scenario)
            log.info("measured vl curve: %s", curve)
            best = optimal_s_oracle(
                scenario.cost,
                lambda s: curve[s],
                scenario.cfg.b_llm,
                (scenario.cfg.s_min, scenario.cfg.s_max),
            )
            for s in sorted(curve):
                ratio = scenario.cost.t_llm(scenario.cfg.b_llm, s) / curve[s]
                print(f"s={s:2d}  vl={curve[s]:6.3f}  t_llm/vl={ratio:8.3f}")
            print(f"optimal_s={best}")
    except AggSpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
