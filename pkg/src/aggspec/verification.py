"""Speculative-sampling verification: accept/reject drafted tokens, resample on
rejection, sample a bonus token when every draft token is accepted."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import AggSpecError, ProbDist


class DistMismatch(AggSpecError):
    pass


@dataclass(frozen=True)
class VerificationResult:
    accepted_count: int
    emitted: list[int]
    acceptance_rate: float


def _sample_probs(probs: np.ndarray, rng: np.random.Generator) -> int:
    idx = int(probs.cumsum().searchsorted(rng.random(), side="right"))
    return min(idx, probs.size - 1)


def verify(
    draft_tokens: Sequence[int],
    draft_dists: Sequence[ProbDist],
    target_dists: Sequence[ProbDist],
    rng: np.random.Generator,
) -> VerificationResult:
    """Verify a drafted sequence against the target model's distributions.

    Position i accepts token x when q_i(x) <= o_i(x), otherwise rejects with
    probability 1 - o_i(x)/q_i(x). A rejection emits one token drawn from
    norm(max(0, o_i - q_i)) and stops. Full acceptance emits a bonus token from
    target_dists[s]. One uniform draw is consumed per considered position, in
    order, which fixes the coupling for monotonicity checks. If floating-point
    cancellation leaves the residual all-zero, the resample falls back to the
    target distribution so the output law is preserved.
    """
    s = len(draft_tokens)
    if s < 1:
        raise ValueError("draft must contain at least one token")
    if len(draft_dists) != s:
        raise DistMismatch(f"expected {s} draft distributions, got {len(draft_dists)}")
    if len(target_dists) != s + 1:
        raise DistMismatch(f"expected {s + 1} target distributions, got {len(target_dists)}")
    vocab = draft_dists[0].vocab_size
    for d in (*draft_dists, *target_dists):
        if d.vocab_size != vocab:
            raise DistMismatch("draft and target distributions must share a vocabulary")

    random = rng.random
    for i, tok in enumerate(draft_tokens):
        q = draft_dists[i].probs.item(tok)
        o = target_dists[i].probs.item(tok)
        u = random()
        if q <= o:
            continue
        if u >= 1.0 - o / q:
            continue
        residual = np.maximum(target_dists[i].probs - draft_dists[i].probs, 0.0)
        total = residual.sum()
        if total > 0.0:
            resampled = _sample_probs(residual / total, rng)
        else:
            resampled = target_dists[i].sample(rng)
        emitted = list(draft_tokens[:i]) + [resampled]
        return VerificationResult(i, emitted, i / s)

    bonus = target_dists[s].sample(rng)
    emitted = list(draft_tokens) + [bonus]
    return VerificationResult(s, emitted, 1.0)


def acceptance_rate(result: VerificationResult, s: int) -> float:
    """Correctly verified token length divided by speculation length."""
    return result.accepted_count / s
