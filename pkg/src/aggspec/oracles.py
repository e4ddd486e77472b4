"""Pluggable model oracles (drafters and target) plus the parametric latency cost model."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from .core import AggSpecError, ProbDist

DEFAULT_CONTEXT_CAP = 4096


class ContextTooLong(AggSpecError):
    pass


@runtime_checkable
class ModelOracle(Protocol):
    """Behavioral contract: deterministic next-token distribution given a context."""

    vocab_size: int
    context_cap: int

    def next_dist(self, context: Sequence[int]) -> ProbDist: ...


def _check_context(oracle, context: Sequence[int]) -> None:
    if len(context) == 0:
        raise ValueError("context must be non-empty")
    if len(context) > oracle.context_cap:
        raise ContextTooLong(f"context length {len(context)} exceeds cap {oracle.context_cap}")


def _context_rng(seed: int, context: Sequence[int]) -> np.random.Generator:
    """Generator deterministically keyed by (seed, token sequence)."""
    h = hashlib.sha256()
    h.update(int(seed).to_bytes(8, "little"))
    for tok in context:
        h.update(int(tok).to_bytes(4, "little"))
    digest = h.digest()
    spawn_key = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    return np.random.default_rng(np.random.SeedSequence(entropy=0, spawn_key=spawn_key))


class MarkovOracle:
    """Order-k Markov model whose rows come from an explicit table or a seeded corpus.

    Rows for unseen contexts (seeded construction) are drawn from a Dirichlet
    keyed on the last `order` tokens, so the model is deterministic and
    stationary without materializing the full table up front.
    """

    def __init__(
        self,
        vocab_size: int,
        order: int = 1,
        *,
        seed: int | None = None,
        table: Mapping[tuple[int, ...], ProbDist] | None = None,
        concentration: float = 0.5,
        context_cap: int = DEFAULT_CONTEXT_CAP,
    ):
        if seed is None and table is None:
            raise ValueError("MarkovOracle needs a seed or an explicit table")
        if order < 0:
            raise ValueError("order must be >= 0")
        if concentration <= 0:
            raise ValueError("concentration must be > 0")
        self.vocab_size = vocab_size
        self.order = order
        self.seed = seed
        self.concentration = concentration
        self.context_cap = context_cap
        self._table: dict[tuple[int, ...], ProbDist] = dict(table) if table else {}
        for key, row in self._table.items():
            if row.vocab_size != vocab_size:
                raise ValueError(f"table row for {key} has wrong vocab size")

    def next_dist(self, context: Sequence[int]) -> ProbDist:
        _check_context(self, context)
        key = tuple(int(t) for t in context[-self.order :]) if self.order else ()
        row = self._table.get(key)
        if row is None:
            if self.seed is None:
                raise AggSpecError(f"no transition row for context {key}")
            rng = _context_rng(self.seed, key)
            probs = rng.dirichlet(np.full(self.vocab_size, self.concentration))
            row = ProbDist(probs, renormalize=True)
            self._table[key] = row
        return row


class StationaryOracle:
    """Returns one fixed distribution for every context. Test and fixture oracle."""

    def __init__(self, dist: ProbDist, *, context_cap: int = DEFAULT_CONTEXT_CAP):
        self.dist = dist
        self.vocab_size = dist.vocab_size
        self.context_cap = context_cap

    def next_dist(self, context: Sequence[int]) -> ProbDist:
        _check_context(self, context)
        return self.dist


class PerturbedOracle:
    """Mix of a base oracle with context-hashed noise: out = f*base + (1-f)*noise.

    fidelity=1 reproduces the base exactly; fidelity=0 is independent of it.
    The knob controls how closely a drafter tracks the target distribution.
    """

    def __init__(self, base: ModelOracle, fidelity: float, noise_seed: int):
        if not (0.0 <= fidelity <= 1.0):
            raise ValueError("fidelity must be in [0, 1]")
        self.base = base
        self.fidelity = fidelity
        self.noise_seed = noise_seed
        self.vocab_size = base.vocab_size
        self.context_cap = base.context_cap

    def next_dist(self, context: Sequence[int]) -> ProbDist:
        _check_context(self, context)
        base_p = self.base.next_dist(context).probs
        if self.fidelity == 1.0:
            return ProbDist(base_p)
        rng = _context_rng(self.noise_seed, context)
        noise = rng.dirichlet(np.ones(self.vocab_size))
        mixed = self.fidelity * base_p + (1.0 - self.fidelity) * noise
        return ProbDist(mixed, renormalize=True)


def draft_sequence(
    oracle: ModelOracle,
    context: Sequence[int],
    s: int,
    rng: np.random.Generator,
) -> tuple[list[int], list[ProbDist]]:
    """Autoregressively sample s tokens; returns them with their per-step distributions."""
    if s < 1:
        raise ValueError("s must be >= 1")
    ctx = list(context)
    tokens: list[int] = []
    dists: list[ProbDist] = []
    for _ in range(s):
        d = oracle.next_dist(ctx)
        tok = d.sample(rng)
        tokens.append(tok)
        dists.append(d)
        ctx.append(tok)
    return tokens, dists


@dataclass(frozen=True)
class CostModel:
    """Parametric per-step latencies: t_ssm(b) = c0 + c1*b, t_llm(b, s) = d0 + d1*b + d2*b*s."""

    c0: float
    c1: float
    d0: float
    d1: float
    d2: float

    def __post_init__(self):
        for name in ("c0", "c1", "d0", "d1", "d2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.c0 + self.c1 <= 0:
            raise ValueError("t_ssm must be strictly positive")
        if self.d0 + self.d1 + self.d2 <= 0:
            raise ValueError("t_llm must be strictly positive")

    def t_ssm(self, b: int) -> float:
        if b < 1:
            raise ValueError("b must be >= 1")
        return self.c0 + self.c1 * b

    def t_llm(self, b: int, s: int) -> float:
        if b < 1 or s < 1:
            raise ValueError("b and s must be >= 1")
        return self.d0 + self.d1 * b + self.d2 * b * s


def eval_cost(model: CostModel, kind: str, b: int, s: int = 1) -> float:
    """Evaluate the parametric latency in milliseconds; s is ignored for kind='ssm'."""
    if kind == "ssm":
        return model.t_ssm(b)
    if kind == "llm":
        return model.t_llm(b, s)
    raise ValueError(f"unknown cost kind {kind!r}")
