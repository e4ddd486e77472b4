"""Weighted-majority drafting: merge per-drafter sequences into a trie, pick the
majority-approved path, and feed acceptance-rate rewards back into drafter weights."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Hashable, Mapping, Sequence

from .core import AggSpecError, EngineConfig, ProbDist


class LengthMismatch(AggSpecError):
    pass


class UnknownSSM(AggSpecError):
    pass


@dataclass
class TrieNode:
    token: int | None
    weight: float = 0.0
    contributors: set = field(default_factory=set)
    children: dict[int, "TrieNode"] = field(default_factory=dict)


@dataclass
class SpeculationTree:
    """Trie of drafter output sequences; node weight is the sum of the weights
    of the drafters whose sequence passes through it."""

    root: TrieNode
    depth: int


@dataclass
class WeightTable:
    """Per-drafter weights plus the acceptance rates logged since the last update."""

    weights: dict[Hashable, float]
    acr_log: dict[Hashable, list[float]] = field(default_factory=dict)
    w_floor: float = 1e-3
    w_cap: float = 1e3

    def __post_init__(self):
        if any(w <= 0 for w in self.weights.values()):
            raise ValueError("all weights must be > 0")
        for ssm_id in self.weights:
            self.acr_log.setdefault(ssm_id, [])

    @classmethod
    def from_config(cls, ssm_ids: Sequence[Hashable], cfg: EngineConfig) -> "WeightTable":
        if len(cfg.initial_weights) != len(ssm_ids):
            raise ValueError(
                f"initial_weights has {len(cfg.initial_weights)} entries "
                f"for {len(ssm_ids)} drafters"
            )
        return cls(weights=dict(zip(ssm_ids, cfg.initial_weights)))

    def snapshot(self) -> dict[Hashable, float]:
        return dict(self.weights)


@dataclass
class MajorityOutput:
    """Majority-approved draft queued for verification; dists are the voted
    drafter's per-step distributions."""

    tokens: list[int]
    dists: list[ProbDist] | None
    voted_ssm: Hashable
    request_id: Any = None

    @property
    def s_used(self) -> int:
        return len(self.tokens)


def _weights_of(weights) -> Mapping[Hashable, float]:
    return weights.weights if isinstance(weights, WeightTable) else weights


def merge(drafts: Sequence[tuple[Hashable, Sequence[int]]], weights) -> SpeculationTree:
    """Merge equal-length drafter sequences into a weighted trie.

    `weights` may be a WeightTable or a plain mapping (e.g. a snapshot).
    """
    if not drafts:
        raise ValueError("at least one draft is required")
    w = _weights_of(weights)
    depth = len(drafts[0][1])
    if depth < 1:
        raise LengthMismatch("draft sequences must be non-empty")
    root = TrieNode(token=None)
    for ssm_id, seq in drafts:
        if len(seq) != depth:
            raise LengthMismatch(f"draft for {ssm_id!r} has length {len(seq)}, expected {depth}")
        if ssm_id not in w:
            raise UnknownSSM(f"no weight for drafter {ssm_id!r}")
        node = root
        node.weight += w[ssm_id]
        node.contributors.add(ssm_id)
        for tok in seq:
            child = node.children.get(tok)
            if child is None:
                child = TrieNode(token=int(tok))
                node.children[tok] = child
            child.weight += w[ssm_id]
            child.contributors.add(ssm_id)
            node = child
    return SpeculationTree(root=root, depth=depth)


def select_majority(
    tree: SpeculationTree,
    drafts: Mapping[Hashable, tuple[Sequence[int], Sequence[ProbDist]]] | None = None,
    request_id: Any = None,
) -> MajorityOutput:
    """Descend from the root taking the max-weight child at each level.

    Ties break toward the smaller token id, then the smaller drafter id. The
    resulting path is always exactly one drafter's full sequence; that drafter
    (smallest id among the leaf's contributors on ties) is the voted drafter.
    When `drafts` maps drafter id -> (tokens, dists), the voted drafter's
    distributions are attached to the output.
    """
    node = tree.root
    path: list[int] = []
    while node.children:
        node = min(node.children.values(), key=lambda c: (-c.weight, c.token))
        path.append(node.token)
    voted = min(node.contributors)
    dists = None
    if drafts is not None:
        tokens, cand_dists = drafts[voted]
        if list(tokens) != path:
            raise AggSpecError("voted drafter's sequence does not match the selected path")
        dists = list(cand_dists)
    return MajorityOutput(tokens=path, dists=dists, voted_ssm=voted, request_id=request_id)


def record_acr(weights: WeightTable, voted_ssm: Hashable, rate: float) -> WeightTable:
    """Log one verification's acceptance rate against the drafter that was voted for it."""
    if voted_ssm not in weights.weights:
        raise UnknownSSM(f"unknown drafter {voted_ssm!r}")
    if not (0.0 <= rate <= 1.0):
        raise ValueError("acceptance rate must be in [0, 1]")
    weights.acr_log[voted_ssm].append(rate)
    return weights


def update_weights(weights: WeightTable, cfg: EngineConfig) -> WeightTable:
    """Apply the reward/punish rule once per verification batch.

    Drafters with no logged rate this round keep their weight. Weights are
    clamped to [w_floor, w_cap] to keep long multiplicative runs bounded.
    The log is cleared for the next round.
    """
    for ssm_id, rates in weights.acr_log.items():
        if not rates:
            continue
        acr = sum(rates) / len(rates)
        w = weights.weights[ssm_id]
        if acr >= cfg.reward_threshold:
            w *= cfg.reward_factor
        elif acr <= cfg.punish_threshold:
            w *= cfg.punish_factor
        weights.weights[ssm_id] = min(max(w, weights.w_floor), weights.w_cap)
        rates.clear()
    return weights
