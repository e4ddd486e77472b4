"""Shared fixtures: distribution builders and small engine workloads."""
from __future__ import annotations

import numpy as np
import pytest

from aggspec.core import ProbDist, Request
from aggspec.oracles import StationaryOracle

BIG_CAP = 10**7

# One line per acceptance criterion, printed after the run so the verdicts
# survive pytest's output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_dist(vocab_size: int, seed: int) -> ProbDist:
    gen = np.random.default_rng(seed)
    return ProbDist(gen.dirichlet(np.ones(vocab_size)))


def alpha_oracles(alpha: float, vocab_size: int = 8):
    """Drafter that always proposes token 0 and a target putting mass alpha on it.

    Every drafted token is then accepted independently with probability exactly
    alpha, so the expected emitted count per round has the closed geometric form.
    """
    drafter = StationaryOracle(ProbDist.point_mass(0, vocab_size), context_cap=BIG_CAP)
    rest = (1.0 - alpha) / (vocab_size - 1)
    target = StationaryOracle(
        ProbDist([alpha] + [rest] * (vocab_size - 1)), context_cap=BIG_CAP
    )
    return drafter, target


def make_requests(n: int, max_new_tokens: int, prompt=(0,)) -> list[Request]:
    return [
        Request(id=f"req-{i:03d}", prompt=list(prompt), max_new_tokens=max_new_tokens)
        for i in range(n)
    ]


@pytest.fixture
def uniform_dist():
    return ProbDist.uniform(8)
