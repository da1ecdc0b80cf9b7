"""The end-to-end experiment loop and the annotator-noise sweep.

One run interleaves: random warmup, then repeated feedback sessions
(query selection, annotation, self-training on the growing labeled and
pseudo-labeled datasets, buffer relabeling, policy learning), then a
policy-only tail until the step budget is spent.  Everything is driven
by child generators spawned from one seed, so a run is a pure function
of its config.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from ..agent import evaluate, make_policy, policy_update, random_warmup
from ..annotators import noisy_label, oracle_label
from ..envs import make_env
from ..errors import ConfigurationError, StateError
from ..experience import (PreferenceDataset, QueryTriple, ReplayBuffer, save_dataset,
                          save_episodes)
from ..rewardnet import init_ensemble, save_ensemble
from ..sampler import QueryBatchSpec, select_queries
from ..semisup import (ensemble_mean_prob, prediction_entropy, resolve_unlabeled_ratio,
                       self_training_session)
from .config import ExperimentConfig
from .labeling import LabelingSession, build_query_payload
from .metrics import MetricsRecord, MetricsWriter


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[MetricsRecord]
    ensemble: object
    policy: object
    buffer: ReplayBuffer
    d_l: PreferenceDataset
    d_u: PreferenceDataset
    eval_set: list[QueryTriple]

    @property
    def final(self) -> MetricsRecord:
        return self.records[-1]


def build_eval_set(buffer: ReplayBuffer, env, h: int, n_pairs: int,
                   rng: np.random.Generator) -> list[QueryTriple]:
    """Frozen oracle-labeled pairs for the held-out accuracy metric.

    Pairs with exactly tied true returns are knife-edge cases under the
    oracle's strict comparison and are excluded.
    """
    out: list[QueryTriple] = []
    attempts = 0
    while len(out) < n_pairs and attempts < 50 * max(n_pairs, 1):
        attempts += 1
        first, second = buffer.sample_segment_pair(h, rng)
        if env.gt.segment_return(first) == env.gt.segment_return(second):
            continue
        out.append(QueryTriple(first, second, oracle_label(first, second, env.gt), "oracle"))
    if len(out) < n_pairs:
        raise StateError("could not assemble an evaluation set without return ties")
    return out


def held_out_metrics(ens, eval_set: list[QueryTriple]) -> tuple[float, float]:
    """(preference accuracy, mean prediction entropy) on the frozen set."""
    correct = 0
    entropy = 0.0
    for tr in eval_set:
        p = ensemble_mean_prob(ens, tr.first, tr.second)
        predicted_first = p[0] >= 0.5
        correct += int(predicted_first == (tr.label.p_first == 1.0))
        entropy += prediction_entropy(p)
    n = len(eval_set)
    return correct / n, entropy / n


def reward_correlation(ens, buffer: ReplayBuffer, rng: np.random.Generator,
                       sample: int = 512) -> float:
    """Rank correlation between predicted and true rewards on stored steps."""
    transitions = list(buffer.transitions())
    if len(transitions) > sample:
        idx = rng.choice(len(transitions), size=sample, replace=False)
        transitions = [transitions[i] for i in idx]
    gt = [t.gt_reward for t in transitions]
    learned = [ens.mean_reward(t.state, t.action) for t in transitions]
    if len(set(gt)) < 2 or len(set(learned)) < 2:
        return 0.0
    rho = stats.spearmanr(learned, gt).statistic
    return float(rho) if np.isfinite(rho) else 0.0


def relabel_buffer(buffer: ReplayBuffer, ens) -> None:
    """Recompute every stored learned_reward with one batched pass."""
    transitions = list(buffer.transitions())
    if not transitions:
        return
    x = np.hstack([np.stack([t.state for t in transitions]),
                   np.stack([t.action for t in transitions])])
    rewards = ens.mean_reward_rows(x)
    for t, r in zip(transitions, rewards):
        t.learned_reward = float(r)


def _annotate(pairs, cfg: ExperimentConfig, env, rng: np.random.Generator,
              labeling_session: LabelingSession | None):
    """Label segment pairs with the configured teacher; returns
    (label, provenance) tuples aligned with the input pairs."""
    mode = cfg.annotator.mode
    if mode == "oracle":
        return [(oracle_label(a, b, env.gt), "oracle") for a, b in pairs]
    if mode == "noisy":
        acfg = cfg.annotator.to_annotator_config()
        return [(noisy_label(a, b, env.gt, acfg, rng), "oracle") for a, b in pairs]
    if mode == "human":
        if labeling_session is None:
            raise ConfigurationError("human annotation requires a labeling session")
        qids = labeling_session.enqueue(
            lambda qid, a, b: build_query_payload(env, qid, a, b), pairs)
        answers = labeling_session.wait_for(qids, cfg.schedule.human_timeout_s)
        return [(answers[q], "human") for q in qids]
    raise ConfigurationError(f"unknown annotator mode {mode!r}")


def run_experiment(cfg: ExperimentConfig, out_dir=None,
                   labeling_session: LabelingSession | None = None) -> ExperimentResult:
    """Execute the full loop described in the module docstring."""
    cfg.validate()
    sched = cfg.schedule
    env_params = {}
    if cfg.env.name == "grid-hazard" and cfg.env.random_start:
        from ..envs import GridHazardConfig
        env_params["config"] = GridHazardConfig(random_start=True)
    env = make_env(cfg.env.name, cfg.env.seed, **env_params)
    input_dim = env.state_dim + env.action_dim
    h = cfg.segment_length

    ss = np.random.SeedSequence(cfg.seed)
    rng_init, rng_annot, rng_sampler, rng_ssl, rng_agent, rng_eval = (
        np.random.default_rng(s) for s in ss.spawn(6))

    ens = init_ensemble(input_dim, cfg.reward.hidden_sizes, cfg.reward.ensemble,
                        cfg.reward.lr, rng_init)
    buffer = ReplayBuffer(sched.buffer_capacity)
    policy = make_policy(env)
    d_l = PreferenceDataset("labeled")
    d_u = PreferenceDataset("pseudo")
    ssl_cfg = replace(cfg.ssl,
                      unlabeled_ratio=resolve_unlabeled_ratio(cfg.ssl, sched.total_budget))

    writer = MetricsWriter(f"{out_dir}/metrics.txt") if out_dir else None
    records: list[MetricsRecord] = []

    random_warmup(env, buffer, ens, sched.warmup_steps, rng_agent)
    env_steps = sched.warmup_steps
    eval_set = build_eval_set(buffer, env, h, sched.eval_pairs, rng_eval)

    def record_session(session: int, started: float) -> None:
        acc, ent = held_out_metrics(ens, eval_set)
        eval_env = make_env(cfg.env.name, cfg.env.seed + 1)
        em = evaluate(policy, eval_env, sched.eval_episodes, rng_eval)
        rec = MetricsRecord(
            session=session, env_steps=env_steps,
            labeled_count=len(d_l), pseudo_count=len(d_u),
            accuracy=acc, reward_corr=reward_correlation(ens, buffer, rng_eval),
            mean_entropy=ent, policy_return=em.mean_return,
            hazard_rate=em.hazard_entry_rate, success_rate=em.success_rate,
            wall_clock=time.monotonic() - started,
        )
        records.append(rec)
        if writer:
            writer.append(rec)
        if labeling_session is not None:
            labeling_session.update_progress(session=session, env_steps=env_steps,
                                             budget_used=len(d_l))

    started = time.monotonic()
    budget_used = 0
    session = 0
    reward_offset = 0.0
    max_sessions = 10 * (sched.total_budget // sched.queries_per_session + 1)
    while budget_used < sched.total_budget and session < max_sessions:
        m = min(sched.queries_per_session, sched.total_budget - budget_used)
        scheme = "uniform" if ens.updates == 0 else cfg.sampler.scheme
        spec = QueryBatchSpec(candidate_count=cfg.sampler.candidates_per_query * m,
                              select_count=m, scheme=scheme)
        pairs = select_queries(buffer, ens, spec, h, rng_sampler)
        answers = _annotate(pairs, cfg, env, rng_annot, labeling_session)
        stored = 0
        for (first, second), (label, provenance) in zip(pairs, answers):
            if label.is_skipped:
                continue
            d_l.append(QueryTriple(first, second, label, provenance))
            stored += 1
        budget_used += m if sched.count_skips_against_budget else stored
        if stored > 0:
            ens, d_u, _ = self_training_session(ens, d_l, d_u, buffer, ssl_cfg,
                                                rng_ssl, labels_added=stored)
            relabel_buffer(buffer, ens)
            # shift predicted rewards so every step strictly costs: pairwise
            # preferences leave the per-step constant free, and with goal
            # termination any positive-residual loop would beat finishing
            learned = [t.learned_reward for t in buffer.transitions()]
            reward_offset = float(np.max(learned)) + 0.05
        policy = policy_update(policy, env, buffer, ens, sched.feedback_frequency,
                               rng_agent, cfg.agent, reward_offset=reward_offset)
        env_steps += sched.feedback_frequency
        session += 1
        record_session(session, started)

    # policy-only tail once the feedback budget is spent
    while env_steps < sched.total_steps:
        chunk = min(sched.feedback_frequency, sched.total_steps - env_steps)
        policy = policy_update(policy, env, buffer, ens, chunk, rng_agent, cfg.agent,
                               reward_offset=reward_offset)
        env_steps += chunk
        session += 1
        record_session(session, started)

    if labeling_session is not None:
        labeling_session.update_progress(done=True)
    if out_dir:
        save_ensemble(ens, f"{out_dir}/ensemble.ckpt")
        store = buffer.snapshot_store()
        save_episodes(store, f"{out_dir}/episodes.txt")
        _save_referenced(d_l, store, f"{out_dir}/labeled.prefdata")
        _save_referenced(d_u, store, f"{out_dir}/pseudo.prefdata")
    return ExperimentResult(cfg, records, ens, policy, buffer, d_l, d_u, eval_set)


def _save_referenced(ds: PreferenceDataset, store, path) -> None:
    """Persist only the triples whose segments survive in the episode dump."""
    subset = PreferenceDataset(ds.role)
    for tr in ds:
        if tr.first.source_episode in store and tr.second.source_episode in store:
            try:
                store.segment(tr.first.source_episode, tr.first.start_index, len(tr.first))
                store.segment(tr.second.source_episode, tr.second.start_index, len(tr.second))
            except StateError:
                continue
            subset.append(tr)
    save_dataset(subset, path)


@dataclass
class SweepArm:
    beta: float
    epsilon: float
    budget: int
    final_return: float = float("nan")
    final_accuracy: float = float("nan")
    normalized_return: float = float("nan")
    error: str | None = None


def noise_sweep(base_cfg: ExperimentConfig, beta_grid, epsilon_grid,
                budget_grid) -> list[SweepArm]:
    """Run the cross-product of annotator-noise settings.

    Per-arm failures are recorded on the arm, not raised.  Returns are
    min-max normalized within each budget group so rows are comparable
    across noise levels.
    """
    beta_grid, epsilon_grid, budget_grid = list(beta_grid), list(epsilon_grid), list(budget_grid)
    if not (beta_grid and epsilon_grid and budget_grid):
        raise ConfigurationError("sweep grids must be nonempty")
    arms: list[SweepArm] = []
    for budget, beta, eps in itertools.product(budget_grid, beta_grid, epsilon_grid):
        arm = SweepArm(beta=beta, epsilon=eps, budget=budget)
        cfg = replace(base_cfg,
                      annotator=replace(base_cfg.annotator, mode="noisy",
                                        beta=beta, epsilon=eps),
                      schedule=replace(base_cfg.schedule, total_budget=budget))
        try:
            result = run_experiment(cfg)
            arm.final_return = result.final.policy_return
            arm.final_accuracy = result.final.accuracy
        except Exception as e:  # arm failures must not kill the sweep
            arm.error = f"{type(e).__name__}: {e}"
        arms.append(arm)
    for budget in budget_grid:
        group = [a for a in arms if a.budget == budget and a.error is None]
        if not group:
            continue
        lo = min(a.final_return for a in group)
        hi = max(a.final_return for a in group)
        for a in group:
            a.normalized_return = 1.0 if hi == lo else (a.final_return - lo) / (hi - lo)
    return arms
