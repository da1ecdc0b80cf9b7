"""Simulated preference teachers.

``oracle_label`` compares true segment returns and is deterministic.
``noisy_label`` layers the standard teacher-noise behaviors on top:

1. myopia      -- returns are discounted backward from the segment end,
                  so late steps count more than early ones;
2. skipping    -- if neither segment's (undiscounted) return clears a
                  threshold, the teacher declines to answer;
3. equally     -- if the two returns are closer than a threshold, the
                  teacher answers (0.5, 0.5);
4. stochastic  -- otherwise a hard label is sampled from a logistic in
                  the rationality-scaled discounted return gap;
5. mistake     -- the sampled hard label is flipped with probability
                  epsilon.

Stage order is fixed (skip, equal, sample, flip) so runs are
reproducible; equal answers are never flipped.

``generate_trap_pairs`` manufactures the adversarial case for
consistency training: two segment pairs whose inputs differ in a single
hazard-entering action yet carry opposite hard labels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs import GroundTruthReward
from .errors import ConfigurationError, InputError
from .experience import PreferenceLabel, QueryTriple, Segment

# State-sequence Euclidean distance allowed between a base segment and its
# perturbed variant.  The construction only swaps one action, so states
# coincide and the distance is 0; the bound exists to declare the contract.
TRAP_LOCALITY_BOUND = 1e-9


@dataclass
class AnnotatorConfig:
    """Noise-model knobs; defaults disable every noise stage."""

    beta: float = math.inf          # rationality; inf = deterministic
    gamma_myopic: float = 1.0       # discount toward segment end, (0, 1]
    epsilon_mistake: float = 0.0    # hard-label flip probability
    delta_skip: float = -math.inf   # skip when max return below this
    delta_equal: float = 0.0        # equal when |return gap| below this

    def __post_init__(self):
        if not (self.beta > 0):
            raise ConfigurationError("beta must be positive (or inf)")
        if not (0 < self.gamma_myopic <= 1):
            raise ConfigurationError("gamma_myopic must be in (0, 1]")
        if not (0 <= self.epsilon_mistake <= 1):
            raise ConfigurationError("epsilon_mistake must be in [0, 1]")


def _check_lengths(first: Segment, second: Segment) -> None:
    if len(first) != len(second):
        raise InputError(f"segment lengths differ: {len(first)} vs {len(second)}")


def oracle_label(first: Segment, second: Segment, gt: GroundTruthReward) -> PreferenceLabel:
    """(1,0) iff the first segment's true return is strictly larger; ties
    fall through to (0,1)."""
    _check_lengths(first, second)
    if gt.segment_return(first) > gt.segment_return(second):
        return PreferenceLabel.hard_first()
    return PreferenceLabel.hard_second()


def _discounted_return(seg: Segment, gt: GroundTruthReward, gamma: float) -> float:
    h = len(seg)
    total = 0.0
    for t in range(h):
        total += gamma ** (h - 1 - t) * gt(seg.states[t], seg.actions[t])
    return total


def noisy_label(first: Segment, second: Segment, gt: GroundTruthReward,
                cfg: AnnotatorConfig, rng: np.random.Generator) -> PreferenceLabel:
    """Run the full noise pipeline; may return a skipped label."""
    _check_lengths(first, second)
    r1 = gt.segment_return(first)
    r2 = gt.segment_return(second)
    if max(r1, r2) < cfg.delta_skip:
        return PreferenceLabel.skipped()
    if abs(r1 - r2) < cfg.delta_equal:
        return PreferenceLabel.equal()

    if cfg.gamma_myopic == 1.0:
        d1, d2 = r1, r2
    else:
        d1 = _discounted_return(first, gt, cfg.gamma_myopic)
        d2 = _discounted_return(second, gt, cfg.gamma_myopic)

    if math.isinf(cfg.beta):
        first_wins = d1 > d2
    else:
        # logistic in the scaled gap, computed on the stable side
        gap = cfg.beta * (d1 - d2)
        p_first = 1.0 / (1.0 + math.exp(-gap)) if gap >= 0 else \
            math.exp(gap) / (1.0 + math.exp(gap))
        first_wins = rng.random() < p_first
    if cfg.epsilon_mistake > 0 and rng.random() < cfg.epsilon_mistake:
        first_wins = not first_wins
    return PreferenceLabel.hard_first() if first_wins else PreferenceLabel.hard_second()


def hazard_perturbation(env, seg: Segment) -> Segment | None:
    """Copy of ``seg`` with its final action redirected into a hazard, or
    None when the final state has no hazard neighbour.

    Only the last step changes, so the perturbed step sequence is still
    dynamics-consistent and the state sequences coincide exactly.
    """
    last_state = seg.states[-1]
    for action in env.policy_actions:
        a_vec = env.encode_action(action)
        if env.is_hazard_entry(last_state, a_vec):
            actions = seg.actions.copy()
            actions[-1] = a_vec
            return Segment(seg.states.copy(), actions, seg.source_episode + "~trap",
                           seg.start_index)
    return None


def _clean_windows(env, buffer, h: int):
    """All hazard-free length-h windows in the buffer, with returns.

    Returns (window list, perturbable-index list); each window is
    (episode id, global start, return).  Uses the buffer snapshot so
    per-step hazard flags and window returns come from cumulative sums.
    """
    windows: list[tuple[str, int, float]] = []
    perturbable: list[int] = []
    for rec in buffer.snapshot_store().records():
        t = len(rec.states)
        if t < h:
            continue
        flags = np.array([env.is_hazard_entry(s, a)
                          for s, a in zip(rec.states, rec.actions)], dtype=int)
        flag_cum = np.concatenate([[0], np.cumsum(flags)])
        ret_cum = np.concatenate([[0.0], np.cumsum(rec.gt_rewards)])
        for i in range(t - h + 1):
            if flag_cum[i + h] - flag_cum[i] != 0:
                continue
            ret = float(ret_cum[i + h] - ret_cum[i])
            last = i + h - 1
            can_perturb = any(env.is_hazard_entry(rec.states[last], env.encode_action(a))
                              for a in env.policy_actions)
            if can_perturb:
                perturbable.append(len(windows))
            windows.append((rec.eid, rec.start_index + i, ret))
    return windows, perturbable


def generate_trap_pairs(env, buffer, h: int, count: int, rng: np.random.Generator,
                        max_attempts_per_pair: int = 500
                        ) -> list[tuple[QueryTriple, QueryTriple]]:
    """Build ``count`` (base, perturbed) triple pairs from buffer segments.

    Each base pair (s1, s2) is hazard-free with return(s1) > return(s2)
    and oracle label (1,0); the perturbed pair replaces s1's final action
    with a hazard entry, collapsing its return below s2's, so its oracle
    label is (0,1).  The two pairs' inputs differ in exactly one action.

    Under the default rewards a hazard-free window outranks another only
    by ending on the goal, so the buffer must contain goal-reaching
    episodes of length >= h whose final approach passes next to a hazard
    (see ``agent.guided_goal_episode``).
    """
    if not hasattr(env, "is_hazard_entry"):
        raise ConfigurationError(f"{env.name} has no hazards; trap pairs need them")
    if count == 0:
        return []
    gt = env.gt
    windows, perturbable = _clean_windows(env, buffer, h)
    if not windows:
        raise ConfigurationError("buffer holds no hazard-free windows of this length")
    if not perturbable:
        raise ConfigurationError("no hazard-free window ends adjacent to a hazard")

    out: list[tuple[QueryTriple, QueryTriple]] = []
    attempts = 0
    limit = count * max_attempts_per_pair
    while len(out) < count and attempts < limit:
        attempts += 1
        eid1, start1, r1 = windows[perturbable[rng.integers(len(perturbable))]]
        eid2, start2, r2 = windows[rng.integers(len(windows))]
        # margin screens out pairs whose ordering is summation-order noise
        if not r2 < r1 - 1e-9:
            continue
        s1 = buffer.extract_segment(eid1, start1, h)
        s2 = buffer.extract_segment(eid2, start2, h)
        perturbed = hazard_perturbation(env, s1)
        if perturbed is None:
            continue
        if float(np.linalg.norm(s1.states - perturbed.states)) > TRAP_LOCALITY_BOUND:
            continue
        # authoritative ordering check with the oracle's own return sums
        if not (gt.segment_return(perturbed) < gt.segment_return(s2)
                < gt.segment_return(s1)):
            continue
        base = QueryTriple(s1, s2, oracle_label(s1, s2, gt), "oracle")
        trap = QueryTriple(perturbed, s2, oracle_label(perturbed, s2, gt), "oracle")
        out.append((base, trap))
    if len(out) < count:
        raise ConfigurationError(
            f"could only construct {len(out)}/{count} trap pairs; "
            "buffer may lack goal-reaching hazard-adjacent trajectories")
    return out
