"""Query selection over candidate segment pairs.

Uniform sampling draws pairs straight from the buffer.  Disagreement
sampling scores a candidate pool by the spread of the ensemble members'
preference probabilities and keeps the most contested pairs; because
``p_second = 1 - p_first`` the spread is identical whichever side is
scored, so the score is order-invariant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError
from .experience import Segment
from .rewardnet import RewardEnsemble, preference_prob

SCHEMES = ("uniform", "disagreement")


@dataclass
class QueryBatchSpec:
    candidate_count: int
    select_count: int
    scheme: str = "disagreement"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}")
        if self.select_count > self.candidate_count:
            raise InputError("select_count must be <= candidate_count")
        if self.select_count < 1:
            raise InputError("select_count must be >= 1")


def disagreement_score(ens: RewardEnsemble, first: Segment, second: Segment) -> float:
    """Population standard deviation of member p_first values."""
    probs = [preference_prob(m, first, second)[0] for m in ens.members]
    return float(np.std(probs))


def select_queries(buffer, ens: RewardEnsemble | None, spec: QueryBatchSpec,
                   h: int, rng: np.random.Generator) -> list[tuple[Segment, Segment]]:
    """Pick ``select_count`` segment pairs for annotation."""
    if spec.scheme == "uniform":
        return [buffer.sample_segment_pair(h, rng) for _ in range(spec.select_count)]
    if ens is None:
        raise ConfigurationError("disagreement sampling requires an ensemble")
    candidates = [buffer.sample_segment_pair(h, rng) for _ in range(spec.candidate_count)]
    scores = np.array([disagreement_score(ens, a, b) for a, b in candidates])
    # stable sort on negated scores: ties keep candidate order
    order = np.argsort(-scores, kind="stable")[:spec.select_count]
    return [candidates[i] for i in order]
