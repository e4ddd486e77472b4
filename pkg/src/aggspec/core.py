"""Shared domain types: probability distributions, requests, configuration, RNG streams."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

SUM_TOL = 1e-9


class AggSpecError(Exception):
    """Base class for all library errors."""


class ConfigInvalid(AggSpecError):
    """Raised by validate_config with the full list of violated constraints."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def seeded_rng(seed: int, stream_label: str) -> np.random.Generator:
    """Deterministic random stream identified by (seed, label).

    Identical pairs yield identical streams across runs and platforms;
    distinct labels or seeds yield independent streams.
    """
    digest = hashlib.sha256(stream_label.encode("utf-8")).digest()
    spawn_key = tuple(
        int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)
    )
    entropy = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.random.default_rng(np.random.SeedSequence(entropy=entropy, spawn_key=spawn_key))


class ProbDist:
    """Probability vector over an integer vocabulary.

    Construction rejects negative entries and vectors that do not sum to 1
    within tolerance. Renormalization happens only when explicitly requested.
    """

    __slots__ = ("probs", "vocab_size", "_cum")

    def __init__(self, probs, *, renormalize: bool = False):
        arr = np.array(probs, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("probs must be a non-empty 1-D vector")
        if np.any(arr < 0):
            raise ValueError("probs must be non-negative")
        total = float(arr.sum())
        if renormalize:
            if total <= 0.0:
                raise ValueError("cannot renormalize an all-zero vector")
            arr = arr / total
            total = float(arr.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"probs sum to {total}, expected 1 within {SUM_TOL}")
        arr.setflags(write=False)
        self.probs = arr
        self.vocab_size = int(arr.size)
        self._cum = None

    def __len__(self) -> int:
        return self.vocab_size

    def __getitem__(self, token: int) -> float:
        return float(self.probs[token])

    def sample(self, rng: np.random.Generator) -> int:
        if self._cum is None:
            self._cum = np.cumsum(self.probs)
        idx = int(self._cum.searchsorted(rng.random(), side="right"))
        return min(idx, self.vocab_size - 1)

    @classmethod
    def point_mass(cls, token: int, vocab_size: int) -> "ProbDist":
        v = np.zeros(vocab_size)
        v[token] = 1.0
        return cls(v)

    @classmethod
    def uniform(cls, vocab_size: int) -> "ProbDist":
        return cls(np.full(vocab_size, 1.0 / vocab_size), renormalize=True)

    def __repr__(self) -> str:
        return f"ProbDist({self.probs!r})"


def tv_distance(a, b) -> float:
    """Total-variation distance between two distributions (ProbDist or arrays)."""
    pa = a.probs if isinstance(a, ProbDist) else np.asarray(a, dtype=np.float64)
    pb = b.probs if isinstance(b, ProbDist) else np.asarray(b, dtype=np.float64)
    return 0.5 * float(np.abs(pa - pb).sum())


class RequestState(Enum):
    PENDING = "pending"
    DRAFTING = "drafting"
    AWAITING_VERIFICATION = "awaiting_verification"
    RUNNING = "running"
    FINISHED = "finished"


# Lifecycle: Pending -> Drafting -> AwaitingVerification -> (Running -> Drafting)* -> Finished.
ALLOWED_TRANSITIONS = frozenset(
    {
        (RequestState.PENDING, RequestState.DRAFTING),
        (RequestState.DRAFTING, RequestState.AWAITING_VERIFICATION),
        (RequestState.AWAITING_VERIFICATION, RequestState.RUNNING),
        (RequestState.AWAITING_VERIFICATION, RequestState.FINISHED),
        (RequestState.RUNNING, RequestState.DRAFTING),
    }
)


class IllegalTransition(AggSpecError):
    pass


@dataclass
class Request:
    """One generation job: prompt plus tokens generated so far."""

    id: str
    prompt: list[int]
    max_new_tokens: int
    generated: list[int] = field(default_factory=list)
    state: RequestState = RequestState.PENDING
    arrival_time: float = 0.0
    finish_time: float | None = None

    def context(self) -> list[int]:
        return self.prompt + self.generated

    @property
    def remaining(self) -> int:
        return self.max_new_tokens - len(self.generated)

    def advance(self, new_state: RequestState) -> None:
        edge = (self.state, new_state)
        if edge not in ALLOWED_TRANSITIONS:
            raise IllegalTransition(f"{self.id}: {self.state.value} -> {new_state.value}")
        self.state = new_state


@dataclass(frozen=True)
class EngineConfig:
    """Engine-wide knobs. Defaults are tunable via scenario files."""

    vocab_size: int
    b_llm: int = 8
    b_ssm: int = 8
    s_init: int = 4
    s_min: int = 1
    s_max: int = 12
    s_reward: int = 1
    s_punish: int = 1
    decision_threshold: int = 8
    reward_threshold: float = 0.7
    punish_threshold: float = 0.3
    reward_factor: float = 1.25
    punish_factor: float = 0.8
    initial_weights: tuple[float, ...] = (1.0,)
    seed: int = 0
    stop_token: int | None = None
    context_cap: int = 4096


def validate_config(cfg: EngineConfig) -> EngineConfig:
    """Return cfg unchanged iff all invariants hold, else raise ConfigInvalid
    listing every violated constraint."""
    v: list[str] = []
    if cfg.vocab_size < 1:
        v.append("vocab_size must be >= 1")
    if cfg.b_llm < 1:
        v.append("b_llm must be >= 1")
    if cfg.b_ssm < 1:
        v.append("b_ssm must be >= 1")
    if cfg.s_init < 1:
        v.append("s_init must be >= 1")
    if cfg.s_min < 1:
        v.append("s_min must be >= 1")
    if cfg.s_max < 1:
        v.append("s_max must be >= 1")
    if cfg.s_min >= 1 and cfg.s_max >= 1 and not (cfg.s_min <= cfg.s_init <= cfg.s_max):
        v.append("must satisfy s_min <= s_init <= s_max")
    if cfg.s_reward < 1:
        v.append("s_reward must be >= 1")
    if cfg.s_punish < 1:
        v.append("s_punish must be >= 1")
    if cfg.decision_threshold < 1:
        v.append("decision_threshold must be >= 1")
    if not (0.0 <= cfg.reward_threshold <= 1.0):
        v.append("reward_threshold must be in [0, 1]")
    if not (0.0 <= cfg.punish_threshold <= 1.0):
        v.append("punish_threshold must be in [0, 1]")
    if cfg.punish_threshold > cfg.reward_threshold:
        v.append("punish_threshold must be <= reward_threshold")
    if cfg.reward_factor <= 1.0:
        v.append("reward_factor must be > 1")
    if cfg.punish_factor >= 1.0:
        v.append("punish_factor must be < 1")
    if cfg.punish_factor <= 0.0:
        v.append("punish_factor must be > 0")
    if len(cfg.initial_weights) == 0:
        v.append("initial_weights must be non-empty")
    if any(w <= 0 for w in cfg.initial_weights):
        v.append("initial_weights must all be > 0")
    if not (0 <= cfg.seed < 2**64):
        v.append("seed must fit in 64 bits")
    if cfg.context_cap < 1:
        v.append("context_cap must be >= 1")
    if cfg.stop_token is not None and not (0 <= cfg.stop_token < cfg.vocab_size):
        v.append("stop_token must be a valid token id")
    if v:
        raise ConfigInvalid(v)
    return cfg
