"""Aggregated speculative decoding control plane.

Weighted-majority multi-drafter speculation, adaptive speculation-length
selection, and a decoupled drafter/verifier pipeline over pluggable model
oracles and a parametric cost model.
"""

from .core import (
    AggSpecError,
    ConfigInvalid,
    EngineConfig,
    ProbDist,
    Request,
    RequestState,
    seeded_rng,
    tv_distance,
    validate_config,
)
from .engine import (
    RunMetrics,
    SpeculationEngine,
    TraceEvent,
    collect_metrics,
    run_pipelined,
    run_sequential,
    step_events,
    write_trace,
)
from .oracles import (
    CostModel,
    MarkovOracle,
    ModelOracle,
    PerturbedOracle,
    StationaryOracle,
    draft_sequence,
    eval_cost,
)
from .selector import (
    Decision,
    MonitorSample,
    SelectorState,
    geometric_vl,
    maybe_adjust,
    observe,
    optimal_s_oracle,
)
from .verification import VerificationResult, acceptance_rate, verify
from .voting import (
    MajorityOutput,
    SpeculationTree,
    WeightTable,
    merge,
    record_acr,
    select_majority,
    update_weights,
)

__all__ = [
    "AggSpecError",
    "ConfigInvalid",
    "CostModel",
    "Decision",
    "EngineConfig",
    "MajorityOutput",
    "MarkovOracle",
    "ModelOracle",
    "MonitorSample",
    "PerturbedOracle",
    "ProbDist",
    "Request",
    "RequestState",
    "RunMetrics",
    "SelectorState",
    "SpeculationEngine",
    "SpeculationTree",
    "StationaryOracle",
    "TraceEvent",
    "VerificationResult",
    "WeightTable",
    "acceptance_rate",
    "collect_metrics",
    "draft_sequence",
    "eval_cost",
    "geometric_vl",
    "maybe_adjust",
    "merge",
    "observe",
    "optimal_s_oracle",
    "record_acr",
    "run_pipelined",
    "run_sequential",
    "seeded_rng",
    "select_majority",
    "step_events",
    "tv_distance",
    "update_weights",
    "validate_config",
    "verify",
    "write_trace",
]
