"""Execution core: request pools, the intermediate resulting pool decoupling
drafting from verification, throttling, and sequential vs pipelined modes over
simulated or real time."""
from __future__ import annotations

import heapq
import json
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    AggSpecError,
    EngineConfig,
    Request,
    RequestState,
    seeded_rng,
    validate_config,
)
from .oracles import CostModel, ModelOracle, draft_sequence
from .selector import Decision, MonitorSample, SelectorState, maybe_adjust, observe
from .verification import verify
from .voting import (
    MajorityOutput,
    WeightTable,
    merge,
    record_acr,
    select_majority,
    update_weights,
)


class EngineFinished(AggSpecError):
    pass


class DeadlockError(AggSpecError):
    pass


class NoProgress(AggSpecError):
    pass


@dataclass
class TraceEvent:
    """One completed engine activity (a draft round or a verification round)."""

    seq: int
    kind: str  # "draft" | "verify"
    start: float
    end: float
    s: int
    request_ids: list[str]
    pool_depth: int
    round_index: int | None = None
    accepted: list[int] | None = None
    emitted: list[int] | None = None
    voted: list | None = None
    vl: float | None = None
    decision: str | None = None
    s_next: int | None = None
    weights: dict | None = None

    def to_json(self) -> str:
        payload = {
            "seq": self.seq,
            "kind": self.kind,
            "start": self.start,
            "end": self.end,
            "s": self.s,
            "request_ids": self.request_ids,
            "pool_depth": self.pool_depth,
        }
        if self.kind == "verify":
            payload.update(
                round=self.round_index,
                accepted=self.accepted,
                emitted=self.emitted,
                voted=self.voted,
                vl=self.vl,
                decision=self.decision,
                s_next=self.s_next,
                weights=self.weights,
            )
        return json.dumps(payload)


def write_trace(trace: Sequence[TraceEvent], path) -> None:
    with open(path, "w") as fh:
        for ev in trace:
            fh.write(ev.to_json())
            fh.write("\n")


@dataclass
class RunMetrics:
    total_time: float  # ms
    tokens_emitted: int
    throughput: float  # tokens / second
    normalized_latency: float  # ms per token, averaged per request
    llm_busy_time: float
    ssm_busy_time: float
    llm_utilization: float
    llm_utilization_steady: float  # measured from first verification start
    mean_acceptance: float
    per_ssm_acceptance: dict
    weight_trajectory: list
    s_trajectory: list


def collect_metrics(trace: Sequence[TraceEvent], requests: Sequence[Request]) -> RunMetrics:
    total_time = max((ev.end for ev in trace), default=0.0)
    tokens = sum(len(r.generated) for r in requests)
    throughput = tokens / (total_time / 1000.0) if total_time > 0 else 0.0

    latencies = []
    for r in requests:
        if len(r.generated) == 0:
            continue
        finish = r.finish_time if r.finish_time is not None else total_time
        latencies.append((finish - r.arrival_time) / len(r.generated))
    normalized_latency = float(np.mean(latencies)) if latencies else 0.0

    llm_busy = sum(ev.end - ev.start for ev in trace if ev.kind == "verify")
    ssm_busy = sum(ev.end - ev.start for ev in trace if ev.kind == "draft")
    llm_util = llm_busy / total_time if total_time > 0 else 0.0

    verify_events = [ev for ev in trace if ev.kind == "verify"]
    if verify_events:
        window = max(ev.end for ev in verify_events) - min(ev.start for ev in verify_events)
        llm_util_steady = llm_busy / window if window > 0 else 1.0
    else:
        llm_util_steady = 0.0

    rates: dict = {}
    all_rates: list[float] = []
    weight_traj = []
    s_traj = []
    for ev in verify_events:
        for voted, acc in zip(ev.voted, ev.accepted):
            r = acc / ev.s
            rates.setdefault(voted, []).append(r)
            all_rates.append(r)
        weight_traj.append((ev.round_index, dict(ev.weights)))
        s_traj.append((ev.round_index, ev.s_next))

    per_ssm = {k: float(np.mean(v)) for k, v in sorted(rates.items(), key=lambda kv: str(kv[0]))}
    mean_acc = float(np.mean(all_rates)) if all_rates else 0.0

    return RunMetrics(
        total_time=total_time,
        tokens_emitted=tokens,
        throughput=throughput,
        normalized_latency=normalized_latency,
        llm_busy_time=llm_busy,
        ssm_busy_time=ssm_busy,
        llm_utilization=llm_util,
        llm_utilization_steady=llm_util_steady,
        mean_acceptance=mean_acc,
        per_ssm_acceptance=per_ssm,
        weight_trajectory=weight_traj,
        s_trajectory=s_traj,
    )


_PRIORITY = {"verify": 0, "draft": 1}


class SpeculationEngine:
    """Drafting/verification scheduler over a set of requests.

    Simulated mode is single-threaded and advances time by cost-model
    durations, event at a time; real mode sleeps scaled durations, with the
    pipelined variant running the drafter in a worker thread and the verifier
    in the calling thread, coupled only through the intermediate pool.
    """

    def __init__(
        self,
        requests: Sequence[Request],
        ssm_oracles: Sequence[ModelOracle],
        llm_oracle: ModelOracle,
        cost: CostModel,
        cfg: EngineConfig,
        *,
        pipelined: bool = True,
        adaptive: bool = True,
        max_rounds: int | None = None,
    ):
        validate_config(cfg)
        if not requests:
            raise ValueError("at least one request is required")
        if not ssm_oracles:
            raise ValueError("at least one drafter oracle is required")
        self.requests = list(requests)
        self.ssm_oracles = list(ssm_oracles)
        self.llm_oracle = llm_oracle
        self.cost = cost
        self.cfg = cfg
        self.pipelined = pipelined
        self.adaptive = adaptive
        self.max_rounds = max_rounds

        self.weights = WeightTable.from_config(list(range(len(ssm_oracles))), cfg)
        self.selector = SelectorState.from_config(cfg)
        self.ready: deque[Request] = deque()
        self.pool: deque[MajorityOutput] = deque()
        self._by_id = {r.id: r for r in self.requests}
        for r in self.requests:
            if r.remaining <= 0:
                r.state = RequestState.FINISHED
                r.finish_time = r.arrival_time
            else:
                self.ready.append(r)

        self.now = 0.0
        self.trace: list[TraceEvent] = []
        self.round_index = 0
        self.halted = False
        self._heap: list = []
        self._seq = 0
        self._draft_busy = False
        self._verify_busy = False
        self._draft_rngs: dict = {}
        self._verify_rngs: dict = {}

    # -- RNG streams are per-request (and per-drafter) so that scheduling
    #    order cannot change token semantics.

    def _draft_rng(self, rid, sid):
        key = (rid, sid)
        rng = self._draft_rngs.get(key)
        if rng is None:
            rng = seeded_rng(self.cfg.seed, f"draft/{rid}/{sid}")
            self._draft_rngs[key] = rng
        return rng

    def _verify_rng(self, rid):
        rng = self._verify_rngs.get(rid)
        if rng is None:
            rng = seeded_rng(self.cfg.seed, f"verify/{rid}")
            self._verify_rngs[rid] = rng
        return rng

    # -- domain steps shared by simulated and real modes ------------------

    def _take_draft_batch(self):
        batch = []
        while self.ready and len(batch) < self.cfg.b_ssm:
            req = self.ready.popleft()
            req.advance(RequestState.DRAFTING)
            batch.append(req)
        s = self.selector.current_s
        snapshot = self.weights.snapshot()
        return batch, s, snapshot

    def _do_draft_batch(self, batch, s, snapshot):
        outputs = []
        for req in batch:
            ctx = req.context()
            drafts = {}
            merged = []
            for sid, oracle in enumerate(self.ssm_oracles):
                tokens, dists = draft_sequence(oracle, ctx, s, self._draft_rng(req.id, sid))
                drafts[sid] = (tokens, dists)
                merged.append((sid, tokens))
            tree = merge(merged, snapshot)
            out = select_majority(tree, drafts=drafts, request_id=req.id)
            outputs.append(out)
            req.advance(RequestState.AWAITING_VERIFICATION)
        return outputs

    def _take_verify_batch(self):
        batch = [self.pool.popleft()]
        s0 = batch[0].s_used
        while self.pool and len(batch) < self.cfg.b_llm and self.pool[0].s_used == s0:
            batch.append(self.pool.popleft())
        return batch, s0

    def _do_verify_batch(self, batch, s0, dur, end_time):
        accepted_counts = []
        emitted_counts = []
        voted = []
        returning = []
        for out in batch:
            req = self._by_id[out.request_id]
            ctx = req.context()
            s = out.s_used
            target = [
                self.llm_oracle.next_dist(ctx + out.tokens[:i]) for i in range(s + 1)
            ]
            result = verify(out.tokens, out.dists, target, self._verify_rng(req.id))
            record_acr(self.weights, out.voted_ssm, result.acceptance_rate)

            use = result.emitted[: req.remaining]
            if self.cfg.stop_token is not None and self.cfg.stop_token in use:
                use = use[: use.index(self.cfg.stop_token) + 1]
                req.generated.extend(use)
                req.advance(RequestState.FINISHED)
                req.finish_time = end_time
            else:
                req.generated.extend(use)
                if req.remaining <= 0:
                    req.advance(RequestState.FINISHED)
                    req.finish_time = end_time
                else:
                    req.advance(RequestState.RUNNING)
                    returning.append(req)
            if len(use) == 0:
                raise NoProgress(f"request {req.id} made no progress")
            accepted_counts.append(result.accepted_count)
            emitted_counts.append(len(use))
            voted.append(out.voted_ssm)

        update_weights(self.weights, self.cfg)
        vl = float(np.mean(emitted_counts))
        sample = MonitorSample(round_index=self.round_index, t_llm=dur, vl=vl, s_used=s0)
        observe(self.selector, sample)
        decision = Decision.HOLD
        if self.adaptive:
            _, decision = maybe_adjust(self.selector)
        self.round_index += 1
        if self.max_rounds is not None and self.round_index >= self.max_rounds:
            self.halted = True
        return accepted_counts, emitted_counts, voted, vl, decision, returning

    def _record(self, ev: TraceEvent) -> None:
        self.trace.append(ev)

    # -- simulated (discrete-event) mode ----------------------------------

    def _can_start_draft(self) -> bool:
        if self._draft_busy or self.halted or not self.ready:
            return False
        if self.pipelined:
            return len(self.pool) < self.cfg.b_llm
        return not self._verify_busy and not self.pool

    def _maybe_start_draft(self):
        if not self._can_start_draft():
            return
        batch, s, snapshot = self._take_draft_batch()
        dur = s * self.cost.t_ssm(len(batch))
        self._draft_busy = True
        heapq.heappush(
            self._heap,
            (self.now + dur, _PRIORITY["draft"], self._seq, "draft", (batch, s, snapshot, dur)),
        )
        self._seq += 1

    def _maybe_start_verify(self):
        if self._verify_busy or self.halted or not self.pool:
            return
        batch, s0 = self._take_verify_batch()
        dur = self.cost.t_llm(len(batch), s0)
        self._verify_busy = True
        heapq.heappush(
            self._heap,
            (self.now + dur, _PRIORITY["verify"], self._seq, "verify", (batch, s0, dur)),
        )
        self._seq += 1

    def step(self) -> TraceEvent:
        """Process exactly one pending event and return its trace entry."""
        if not self._heap:
            raise EngineFinished("no events remain")
        t, _, seq, kind, payload = heapq.heappop(self._heap)
        self.now = t
        if kind == "draft":
            batch, s, snapshot, dur = payload
            self._draft_busy = False
            outputs = self._do_draft_batch(batch, s, snapshot)
            self.pool.extend(outputs)
            ev = TraceEvent(
                seq=seq,
                kind="draft",
                start=t - dur,
                end=t,
                s=s,
                request_ids=[r.id for r in batch],
                pool_depth=len(self.pool),
            )
        else:
            batch, s0, dur = payload
            self._verify_busy = False
            rnd = self.round_index
            acc, emi, voted, vl, decision, returning = self._do_verify_batch(
                batch, s0, dur, end_time=t
            )
            self.ready.extend(returning)
            ev = TraceEvent(
                seq=seq,
                kind="verify",
                start=t - dur,
                end=t,
                s=s0,
                request_ids=[o.request_id for o in batch],
                pool_depth=len(self.pool),
                round_index=rnd,
                accepted=acc,
                emitted=emi,
                voted=voted,
                vl=vl,
                decision=decision.value,
                s_next=self.selector.current_s,
                weights=self.weights.snapshot(),
            )
        self._record(ev)
        self._maybe_start_verify()
        self._maybe_start_draft()
        if not self._heap and not self.halted and (self.ready or self.pool):
            raise DeadlockError("work remains but no activity can proceed")
        return ev

    def run(self) -> "SpeculationEngine":
        self._maybe_start_draft()
        while self._heap:
            self.step()
        return self

    # -- real (wall-clock) mode -------------------------------------------

    def run_real(self, time_scale: float = 1e-4) -> "SpeculationEngine":
        """Execute with real sleeps of `time_scale` seconds per simulated ms.

        Token streams match simulated mode exactly; timings are measured.
        """
        if self.pipelined:
            return self._run_real_pipelined(time_scale)
        return self._run_real_sequential(time_scale)

    def _now_ms(self, t0: float, time_scale: float) -> float:
        return (time.perf_counter() - t0) / time_scale

    def _run_real_sequential(self, time_scale: float) -> "SpeculationEngine":
        t0 = time.perf_counter()
        while self.ready and not self.halted:
            batch, s, snapshot = self._take_draft_batch()
            dur = s * self.cost.t_ssm(len(batch))
            start = self._now_ms(t0, time_scale)
            time.sleep(dur * time_scale)
            outputs = self._do_draft_batch(batch, s, snapshot)
            self.pool.extend(outputs)
            self._seq += 1
            self._record(
                TraceEvent(
                    seq=self._seq,
                    kind="draft",
                    start=start,
                    end=self._now_ms(t0, time_scale),
                    s=s,
                    request_ids=[r.id for r in batch],
                    pool_depth=len(self.pool),
                )
            )
            while self.pool and not self.halted:
                vbatch, s0 = self._take_verify_batch()
                vdur = self.cost.t_llm(len(vbatch), s0)
                vstart = self._now_ms(t0, time_scale)
                time.sleep(vdur * time_scale)
                end = self._now_ms(t0, time_scale)
                rnd = self.round_index
                acc, emi, voted, vl, decision, returning = self._do_verify_batch(
                    vbatch, s0, vdur, end_time=end
                )
                self.ready.extend(returning)
                self._seq += 1
                self._record(
                    TraceEvent(
                        seq=self._seq,
                        kind="verify",
                        start=vstart,
                        end=end,
                        s=s0,
                        request_ids=[o.request_id for o in vbatch],
                        pool_depth=len(self.pool),
                        round_index=rnd,
                        accepted=acc,
                        emitted=emi,
                        voted=voted,
                        vl=vl,
                        decision=decision.value,
                        s_next=self.selector.current_s,
                        weights=self.weights.snapshot(),
                    )
                )
        return self

    def _run_real_pipelined(self, time_scale: float) -> "SpeculationEngine":
        cv = threading.Condition()
        t0 = time.perf_counter()

        def all_finished() -> bool:
            return all(r.state == RequestState.FINISHED for r in self.requests)

        def drafter_done() -> bool:
            return self.halted or (not self.ready and not self.pool and all_finished())

        def drafter():
            while True:
                with cv:
                    while not drafter_done() and not (
                        self.ready and len(self.pool) < self.cfg.b_llm
                    ):
                        cv.wait(timeout=0.05)
                    if drafter_done():
                        return
                    batch, s, snapshot = self._take_draft_batch()
                dur = s * self.cost.t_ssm(len(batch))
                start = self._now_ms(t0, time_scale)
                time.sleep(dur * time_scale)
                outputs = self._do_draft_batch(batch, s, snapshot)
                with cv:
                    self.pool.extend(outputs)
                    self._seq += 1
                    self._record(
                        TraceEvent(
                            seq=self._seq,
                            kind="draft",
                            start=start,
                            end=self._now_ms(t0, time_scale),
                            s=s,
                            request_ids=[r.id for r in batch],
                            pool_depth=len(self.pool),
                        )
                    )
                    cv.notify_all()

        worker = threading.Thread(target=drafter, name="drafter", daemon=True)
        worker.start()
        while True:
            with cv:
                while not self.pool and not (self.halted or all_finished()):
                    cv.wait(timeout=0.05)
                if self.halted or (not self.pool and all_finished()):
                    cv.notify_all()
                    break
                batch, s0 = self._take_verify_batch()
            dur = self.cost.t_llm(len(batch), s0)
            start = self._now_ms(t0, time_scale)
            time.sleep(dur * time_scale)
            end = self._now_ms(t0, time_scale)
            with cv:
                rnd = self.round_index
                acc, emi, voted, vl, decision, returning = self._do_verify_batch(
                    batch, s0, dur, end_time=end
                )
                self.ready.extend(returning)
                self._seq += 1
                self._record(
                    TraceEvent(
                        seq=self._seq,
                        kind="verify",
                        start=start,
                        end=end,
                        s=s0,
                        request_ids=[o.request_id for o in batch],
                        pool_depth=len(self.pool),
                        round_index=rnd,
                        accepted=acc,
                        emitted=emi,
                        voted=voted,
                        vl=vl,
                        decision=decision.value,
                        s_next=self.selector.current_s,
                        weights=self.weights.snapshot(),
                    )
                )
                cv.notify_all()
        worker.join(timeout=10.0)
        return self

    def metrics(self) -> RunMetrics:
        return collect_metrics(self.trace, self.requests)


def step_events(engine: SpeculationEngine) -> TraceEvent:
    """Process exactly one simulated event; raises EngineFinished when none remain."""
    return engine.step()


def _run(
    requests,
    ssm_oracles,
    llm_oracle,
    cost,
    cfg,
    *,
    pipelined,
    adaptive,
    clock,
    max_rounds,
    time_scale,
) -> tuple[RunMetrics, list[TraceEvent]]:
    engine = SpeculationEngine(
        requests,
        ssm_oracles,
        llm_oracle,
        cost,
        cfg,
        pipelined=pipelined,
        adaptive=adaptive,
        max_rounds=max_rounds,
    )
    if clock == "simulated":
        engine.run()
    elif clock == "real":
        engine.run_real(time_scale)
    else:
        raise ValueError(f"unknown clock mode {clock!r}")
    return engine.metrics(), engine.trace


def run_sequential(
    requests,
    ssm_oracles,
    llm_oracle,
    cost: CostModel,
    cfg: EngineConfig,
    *,
    adaptive: bool = True,
    clock: str = "simulated",
    max_rounds: int | None = None,
    time_scale: float = 1e-4,
) -> tuple[RunMetrics, list[TraceEvent]]:
    """Baseline coupled execution: draft a batch, verify it, repeat."""
    return _run(
        requests,
        ssm_oracles,
        llm_oracle,
        cost,
        cfg,
        pipelined=False,
        adaptive=adaptive,
        clock=clock,
        max_rounds=max_rounds,
        time_scale=time_scale,
    )


def run_pipelined(
    requests,
    ssm_oracles,
    llm_oracle,
    cost: CostModel,
    cfg: EngineConfig,
    *,
    adaptive: bool = True,
    clock: str = "simulated",
    max_rounds: int | None = None,
    time_scale: float = 1e-4,
) -> tuple[RunMetrics, list[TraceEvent]]:
    """Decoupled execution: drafting and verification overlap, coupled only
    through the intermediate pool, with drafting throttled at pool depth b_llm."""
    return _run(
        requests,
        ssm_oracles,
        llm_oracle,
        cost,
        cfg,
        pipelined=True,
        adaptive=adaptive,
        clock=clock,
        max_rounds=max_rounds,
        time_scale=time_scale,
    )
