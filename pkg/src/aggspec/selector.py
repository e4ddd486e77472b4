"""Adaptive speculation-length selection: an online monitor of per-round
verification time per emitted token, plus a slope-based adjustment heuristic."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .core import AggSpecError, EngineConfig
from .oracles import CostModel


class InvalidSample(AggSpecError):
    pass


class Decision(Enum):
    INCREASE = "increase"
    DECREASE = "decrease"
    HOLD = "hold"


@dataclass(frozen=True)
class MonitorSample:
    """One verification round's observation: LLM time and average verified length."""

    round_index: int
    t_llm: float
    vl: float
    s_used: int

    def __post_init__(self):
        if self.vl <= 0:
            raise InvalidSample("vl must be > 0")
        if self.vl > self.s_used + 1 + 1e-9:
            raise InvalidSample("vl cannot exceed s_used + 1")

    @property
    def ratio(self) -> float:
        return self.t_llm / self.vl


@dataclass
class SelectorState:
    """Monitor window plus the current speculation length.

    `baseline` holds the previous window's ratios and is prepended to the
    trend fit, so the fitted slope measures how the time-per-token ratio moved
    across the last decision rather than noise within a stationary window.
    `slope_gate` is the t-statistic below which a noisy slope is treated as
    zero (Hold); an exact-fit slope is always decisive.
    """

    current_s: int
    s_min: int
    s_max: int
    s_reward: int
    s_punish: int
    decision_threshold: int
    samples: list[MonitorSample] = field(default_factory=list)
    baseline: list[float] = field(default_factory=list)
    last_direction: int = 1  # +1 if the last adjustment raised s, -1 if it lowered it
    slope_gate: float = 2.0
    probe_after: int = 2  # consecutive flat windows tolerated before probing
    hold_streak: int = 0

    @classmethod
    def from_config(cls, cfg: EngineConfig) -> "SelectorState":
        return cls(
            current_s=cfg.s_init,
            s_min=cfg.s_min,
            s_max=cfg.s_max,
            s_reward=cfg.s_reward,
            s_punish=cfg.s_punish,
            decision_threshold=cfg.decision_threshold,
        )


def observe(state: SelectorState, sample: MonitorSample) -> SelectorState:
    """Append a sample unless it is stale (drafted at a speculation length other
    than the current one); stale in-flight samples carry no information about
    the current setting and are dropped."""
    if sample.vl <= 0:
        raise InvalidSample("vl must be > 0")
    if sample.s_used != state.current_s:
        return state
    state.samples.append(sample)
    return state


def _slope_tstat(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float]:
    """Least-squares slope of ys against xs and its t-statistic.

    A perfect linear fit (zero residual) yields an infinite t-statistic.
    """
    n = xs.size
    xbar = xs.mean()
    ybar = ys.mean()
    sxx = float(((xs - xbar) ** 2).sum())
    if sxx == 0.0:
        return 0.0, 0.0
    slope = float(((xs - xbar) * (ys - ybar)).sum() / sxx)
    resid = ys - (ybar + slope * (xs - xbar))
    sse = float((resid**2).sum())
    dof = n - 2
    if dof <= 0 or sse <= 0.0:
        tstat = math.inf if slope != 0.0 else 0.0
    else:
        se = math.sqrt(sse / dof / sxx)
        tstat = abs(slope) / se if se > 0 else math.inf
    return slope, tstat


def maybe_adjust(state: SelectorState) -> tuple[SelectorState, Decision]:
    """Adjust the speculation length once enough samples have accumulated.

    One decision is made per full window of `decision_threshold` fresh
    samples; until then the call is a no-op Hold. The ratio series — previous
    window prepended as baseline, then the current window — is fit against
    sample ordinals. The fitted slope says whether the time-per-token ratio
    rose or fell since the last decision; read against the direction of the
    last adjustment it gives the move: a rising ratio means the last
    adjustment was too aggressive and is reversed, a falling ratio means there
    is still room and the adjustment is repeated. Slopes whose t-statistic
    falls below `slope_gate` are treated as zero. A stationary ratio series
    carries no information about neighboring settings, so after `probe_after`
    consecutive flat windows the selector probes: it steps in the last
    direction (flipping when pinned at a bound) and lets the next window
    comparison judge the probe. Every decision retires the current window into
    the baseline slot.
    """
    n = len(state.samples)
    if n < state.decision_threshold:
        return state, Decision.HOLD
    current = [s.ratio for s in state.samples]
    ys = np.array(state.baseline + current)
    xs = np.arange(-len(state.baseline), n, dtype=np.float64)
    slope, tstat = _slope_tstat(xs, ys)

    step = 0
    if slope != 0.0 and tstat >= state.slope_gate:
        step = state.last_direction if slope < 0 else -state.last_direction
        state.hold_streak = 0
    else:
        state.hold_streak += 1
        if state.hold_streak >= state.probe_after:
            step = state.last_direction
            if (step > 0 and state.current_s >= state.s_max) or (
                step < 0 and state.current_s <= state.s_min
            ):
                step = -step
            state.hold_streak = 0

    if step > 0:
        decision = Decision.INCREASE
        state.current_s = min(state.s_max, state.current_s + state.s_reward)
        state.last_direction = 1
    elif step < 0:
        decision = Decision.DECREASE
        state.current_s = max(state.s_min, state.current_s - state.s_punish)
        state.last_direction = -1
    else:
        decision = Decision.HOLD

    state.baseline = current
    state.samples.clear()
    return state, decision


def optimal_s_oracle(
    cost: CostModel,
    vl_curve: Callable[[int], float],
    b_llm: int,
    s_range: tuple[int, int],
) -> int:
    """Exhaustive argmin of t_llm(b_llm, s) / vl(s) over the integer range.

    Ties break toward the smaller s. This is the reference answer the adaptive
    selector is judged against, not a runtime component.
    """
    lo, hi = s_range
    if lo < 1 or hi < lo:
        raise ValueError("invalid s range")
    best_s = lo
    best_ratio = math.inf
    for s in range(lo, hi + 1):
        vl = vl_curve(s)
        if vl <= 0:
            raise ValueError("vl_curve must be positive on the range")
        ratio = cost.t_llm(b_llm, s) / vl
        if ratio < best_ratio:
            best_ratio = ratio
            best_s = s
    return best_s


def geometric_vl(alpha: float) -> Callable[[int], float]:
    """Expected emitted tokens per round under independent per-token acceptance
    probability alpha (accepted prefix plus the correction/bonus token)."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must be in [0, 1]")

    def vl(s: int) -> float:
        if alpha == 1.0:
            return float(s + 1)
        return (1.0 - alpha ** (s + 1)) / (1.0 - alpha)

    return vl
