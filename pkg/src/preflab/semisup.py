"""Losses, augmentations, pseudo-labeling, and the self-training driver.

Five training strategies share one loss core:

* ``supervised``  -- cross-entropy on human/oracle labels only.
* ``PL``          -- hard pseudo-labels above a confidence threshold,
                     no augmentation.
* ``CR``          -- no pseudo-labels; a mean-squared consistency term
                     ties the predicted pair distribution together across
                     two augmentations of the same unlabeled pair.
* ``FM``          -- hard pseudo-labels from weakly augmented inputs,
                     student trained on strongly augmented inputs.
* ``NS``          -- soft pseudo-labels; noise (weak augmentation plus
                     hidden-layer dropout) applied only while the student
                     trains.
* ``STRAPPER``    -- the NS pipeline with the peer-regularized loss: the
                     mixed-batch cross-entropy minus ``alpha`` times the
                     cross-entropy of each item's prediction against an
                     independently drawn item's label.  Matching a label
                     that was drawn at random carries no information, so
                     subtracting that term penalizes indiscriminate
                     (low-confidence) predictions and pushes the model
                     toward committed ones.

Every loss is evaluated through a *prepared batch*: augmentations,
dropout masks, and peer pairings are drawn up front with the step's
generator, after which loss and gradient are pure functions of the
parameters (which is what makes finite-difference checking possible).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, InputError, StateError
from .experience import PreferenceDataset, PreferenceLabel, QueryTriple, Segment
from .rewardnet import (Grads, PackedSegments, RewardEnsemble, RewardNet, adam_step,
                        backward, init_ensemble, pack_features, packed_sums,
                        preference_prob)

METHODS = ("supervised", "PL", "CR", "FM", "NS", "STRAPPER")

_LOG_CLAMP = 1e-12


@dataclass
class AugmentConfig:
    """Input-noise ranges; weak amplitude scaling is the default choice."""

    amplitude_low: float = 0.995
    amplitude_high: float = 1.005
    strong_low: float = 0.9
    strong_high: float = 1.1
    crop_min: int = 45
    crop_max: int = 50

    def __post_init__(self):
        if not (0 < self.amplitude_low <= self.amplitude_high):
            raise ConfigurationError("amplitude range must satisfy 0 < low <= high")
        if not (0 < self.strong_low <= self.strong_high):
            raise ConfigurationError("strong range must satisfy 0 < low <= high")
        if self.crop_min > self.crop_max:
            raise ConfigurationError("crop_min must be <= crop_max")


@dataclass
class SSLConfig:
    """Strategy selection plus the knobs shared by all strategies.

    ``unlabeled_ratio`` of None resolves at experiment start: 10, or 100
    once the feedback budget reaches 1000.
    """

    method: str = "STRAPPER"
    tau: float = 0.99
    peer_weight: float = 1.0
    unlabeled_ratio: int | None = None
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train_steps: int = 300
    batch_size: int = 32
    dropout: float = 0.1
    mse_weight: float = 1.0
    reward_l2: float = 0.0
    fresh_student: bool = True  # re-initialize the student each round
    lr_decay: float = 1.0       # final lr fraction after a linear ramp; 1 = constant

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if not (0.5 < self.tau <= 1.0):
            raise ConfigurationError("tau must be in (0.5, 1]")
        if self.peer_weight < 0:
            raise ConfigurationError("peer_weight must be nonnegative")
        if self.unlabeled_ratio is not None and self.unlabeled_ratio < 0:
            raise ConfigurationError("unlabeled_ratio must be >= 0")
        if not (0 <= self.dropout < 1):
            raise ConfigurationError("dropout must be in [0, 1)")
        if not (0 < self.lr_decay <= 1):
            raise ConfigurationError("lr_decay must be in (0, 1]")


def resolve_unlabeled_ratio(cfg: SSLConfig, budget: int) -> int:
    if cfg.unlabeled_ratio is not None:
        return cfg.unlabeled_ratio
    return 100 if budget >= 1000 else 10


@dataclass(frozen=True)
class MethodSpec:
    """What a strategy does at each stage of a session."""

    name: str
    pseudo: str | None          # None, "hard", "soft"
    pseudo_augment: bool        # teacher labels augmented inputs
    student_aug: str            # "none", "weak", "strong"
    dropout: float
    peer_alpha: float
    consistency_mse: bool


def method_dispatch(cfg: SSLConfig) -> MethodSpec:
    m = cfg.method
    if m == "supervised":
        return MethodSpec(m, None, False, "none", 0.0, 0.0, False)
    if m == "PL":
        return MethodSpec(m, "hard", False, "none", 0.0, 0.0, False)
    if m == "CR":
        return MethodSpec(m, None, False, "none", 0.0, 0.0, True)
    if m == "FM":
        return MethodSpec(m, "hard", True, "strong", 0.0, 0.0, False)
    if m == "NS":
        return MethodSpec(m, "soft", True, "weak", cfg.dropout, 0.0, False)
    if m == "STRAPPER":
        return MethodSpec(m, "soft", True, "weak", cfg.dropout, cfg.peer_weight, False)
    raise ConfigurationError(f"unknown method {m!r}")


# -- elementary losses ---------------------------------------------------------

def supervised_loss(p: tuple[float, float], label: PreferenceLabel) -> float:
    """Cross-entropy of a predicted pair distribution against a label."""
    if label.is_skipped:
        raise InputError("skipped labels cannot be scored")
    p1, p2 = p
    return -(label.p_first * np.log(max(p1, _LOG_CLAMP))
             + label.p_second * np.log(max(p2, _LOG_CLAMP)))


# -- augmentations --------------------------------------------------------------

def amplitude_scale(seg: Segment, rng: np.random.Generator,
                    low: float, high: float) -> Segment:
    """Multiply each state vector by its own uniform draw; actions untouched."""
    if not (0 < low <= high):
        raise InputError("amplitude range must satisfy 0 < low <= high")
    z = rng.uniform(low, high, size=(len(seg), 1))
    return Segment(seg.states * z, seg.actions.copy(),
                   seg.source_episode, seg.start_index)


def temporal_crop(pair: tuple[Segment, Segment], rng: np.random.Generator,
                  crop_min: int, crop_max: int) -> tuple[Segment, Segment]:
    """Crop both segments to one shared random length at independent offsets."""
    first, second = pair
    h = len(first)
    if len(second) != h:
        raise InputError("pair segments must have equal length")
    if not (1 <= crop_min <= crop_max <= h):
        raise InputError(f"need 1 <= crop_min <= crop_max <= {h}")
    h_new = int(rng.integers(crop_min, crop_max + 1))

    def crop(seg: Segment) -> Segment:
        o = int(rng.integers(0, h - h_new + 1))
        return Segment(seg.states[o:o + h_new].copy(), seg.actions[o:o + h_new].copy(),
                       seg.source_episode, seg.start_index + o)

    return crop(first), crop(second)


def _augment_pair(pair: tuple[Segment, Segment], mode: str, aug: AugmentConfig,
                  rng: np.random.Generator) -> tuple[Segment, Segment]:
    first, second = pair
    if mode == "none":
        return first, second
    if mode == "weak":
        return (amplitude_scale(first, rng, aug.amplitude_low, aug.amplitude_high),
                amplitude_scale(second, rng, aug.amplitude_low, aug.amplitude_high))
    if mode == "strong":
        first = amplitude_scale(first, rng, aug.strong_low, aug.strong_high)
        second = amplitude_scale(second, rng, aug.strong_low, aug.strong_high)
        cmin = min(aug.crop_min, len(first))
        cmax = min(aug.crop_max, len(first))
        return temporal_crop((first, second), rng, cmin, cmax)
    raise InputError(f"unknown augmentation mode {mode!r}")


# -- pseudo-labeling --------------------------------------------------------------

def _teacher_prob(teacher, first: Segment, second: Segment) -> tuple[float, float]:
    if isinstance(teacher, RewardEnsemble):
        per = [preference_prob(m, first, second) for m in teacher.members]
        p1 = float(np.mean([p[0] for p in per]))
        return p1, 1.0 - p1
    return preference_prob(teacher, first, second)


def pseudo_label(teacher, pair: tuple[Segment, Segment], cfg: SSLConfig,
                 rng: np.random.Generator) -> PreferenceLabel | None:
    """Teacher-generated label for an unlabeled pair, or None if rejected.

    Hard-label strategies (PL, FM) keep only confident answers; the
    soft-label strategies store the teacher's distribution verbatim.
    """
    spec = method_dispatch(cfg)
    first, second = pair
    if spec.name in ("FM", "NS", "STRAPPER", "CR"):
        first, second = _augment_pair((first, second), "weak", cfg.augment, rng)
    p1, p2 = _teacher_prob(teacher, first, second)
    if spec.name in ("PL", "FM"):
        if max(p1, p2) < cfg.tau:
            return None
        return PreferenceLabel.hard_first() if p1 >= p2 else PreferenceLabel.hard_second()
    return PreferenceLabel(p1, p2, "soft")


# -- prepared batches --------------------------------------------------------------

@dataclass
class PreparedBatch:
    """A frozen draw of batch inputs, targets, and noise.

    Once built, loss and gradient are deterministic functions of the
    network parameters, so the analytic gradient can be checked against
    finite differences of ``loss_value``.

    ``reward_l2`` adds an auxiliary calibration term to the training
    loss: the mean squared per-step reward over the batch.  Pairwise
    comparisons only pin reward differences, so steps that never
    distinguish a winner from a loser are free to drift; the penalty
    anchors them at zero while supervised contrasts keep their gaps.
    """

    packed: PackedSegments          # items first (2 segments each), then MSE groups
    targets: np.ndarray             # (B, 2) stored labels
    peer_targets: np.ndarray | None  # (B, 2) independently drawn labels
    peer_alpha: float
    n_items: int
    n_mse_groups: int
    mse_weight: float
    dropout_masks: list[np.ndarray] | None
    reward_l2: float = 0.0

    def loss_value(self, net: RewardNet) -> float:
        return self._evaluate(net, want_grad=False)[0]

    def loss_and_grad(self, net: RewardNet) -> tuple[float, Grads]:
        return self._evaluate(net, want_grad=True)

    def _evaluate(self, net: RewardNet, want_grad: bool):
        sums, cache = packed_sums(net, self.packed, self.dropout_masks)
        b = self.n_items
        d_sums = np.zeros_like(sums) if want_grad else None
        total = 0.0

        if b:
            s = sums[:2 * b].reshape(b, 2)
            m = s.max(axis=1, keepdims=True)
            e = np.exp(s - m)
            p = e / e.sum(axis=1, keepdims=True)
            ce = -(self.targets * np.log(np.maximum(p, _LOG_CLAMP))).sum(axis=1)
            total += float(ce.mean())
            if want_grad:
                d = (p - self.targets) / b
                if self.peer_targets is not None and self.peer_alpha != 0.0:
                    d = d - self.peer_alpha * (p - self.peer_targets) / b
                d_sums[:2 * b] = d.ravel()
            if self.peer_targets is not None and self.peer_alpha != 0.0:
                peer_ce = -(self.peer_targets * np.log(np.maximum(p, _LOG_CLAMP))).sum(axis=1)
                total -= self.peer_alpha * float(peer_ce.mean())

        if self.n_mse_groups:
            g = self.n_mse_groups
            s = sums[2 * b:].reshape(g, 4)
            pa = _softmax_rows(s[:, 0:2])
            pb = _softmax_rows(s[:, 2:4])
            diff = pa - pb
            total += self.mse_weight * float((diff ** 2).sum(axis=1).mean())
            if want_grad:
                # d(sum of squares)/dS through the two-way softmax Jacobian
                da = (diff[:, 0] - diff[:, 1]) * 2 * pa[:, 0] * pa[:, 1]
                db = (-diff[:, 0] + diff[:, 1]) * 2 * pb[:, 0] * pb[:, 1]
                block = np.stack([da, -da, db, -db], axis=1)
                d_sums[2 * b:] = (self.mse_weight / g) * block.ravel()

        r = cache.r
        if self.reward_l2 > 0.0:
            total += self.reward_l2 * float(np.mean(r ** 2))
        if not want_grad:
            return total, None
        dr = np.repeat(d_sums, self.packed.lengths)
        if self.reward_l2 > 0.0:
            dr = dr + (2.0 * self.reward_l2 / len(r)) * r
        return total, backward(net, cache, dr)


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=1, keepdims=True)


def _draw_dropout_masks(n_rows: int, hidden: tuple[int, ...], rate: float,
                        rng: np.random.Generator) -> list[np.ndarray] | None:
    if rate <= 0:
        return None
    keep = 1.0 - rate
    return [(rng.random((n_rows, width)) < keep) / keep for width in hidden]


def prepare_batch(triples: list[QueryTriple], spec: MethodSpec, aug: AugmentConfig,
                  rng: np.random.Generator, hidden: tuple[int, ...] = (),
                  mse_pairs: list[tuple[Segment, Segment]] | None = None,
                  reward_l2: float = 0.0) -> PreparedBatch:
    """Draw every random element of one training step."""
    if not triples and not mse_pairs:
        raise InputError("batch must be nonempty")
    if spec.peer_alpha != 0.0 and len(triples) < 2:
        raise InputError("peer regularization needs a batch of size >= 2")

    blocks: list[np.ndarray] = []
    targets = np.empty((len(triples), 2))
    for i, tr in enumerate(triples):
        first, second = _augment_pair((tr.first, tr.second), spec.student_aug, aug, rng)
        blocks.append(first.features())
        blocks.append(second.features())
        targets[i] = (tr.label.p_first, tr.label.p_second)

    peer_targets = None
    if spec.peer_alpha != 0.0:
        idx = rng.integers(0, len(triples), size=len(triples))
        peer_targets = targets[idx]

    n_groups = 0
    if spec.consistency_mse and mse_pairs:
        n_groups = len(mse_pairs)
        for pair in mse_pairs:
            a1, a2 = _augment_pair(pair, "weak", aug, rng)
            b1, b2 = _augment_pair(pair, "weak", aug, rng)
            blocks.extend([a1.features(), a2.features(), b1.features(), b2.features()])

    packed = pack_features(blocks)
    masks = _draw_dropout_masks(len(packed.x), hidden, spec.dropout, rng)
    return PreparedBatch(packed, targets, peer_targets, spec.peer_alpha,
                         len(triples), n_groups, 1.0, masks, reward_l2)


# -- spec-level loss entry points ----------------------------------------------

def _plain_batch(triples: list[QueryTriple]) -> PreparedBatch:
    if not triples:
        raise InputError("batch must be nonempty")
    spec = MethodSpec("supervised", None, False, "none", 0.0, 0.0, False)
    return prepare_batch(triples, spec, AugmentConfig(), np.random.default_rng(0))


def cr_loss(net: RewardNet, mixed_batch: list[QueryTriple]) -> float:
    """Mean cross-entropy over a batch drawn from the mixed dataset."""
    return _plain_batch(mixed_batch).loss_value(net)


def peer_loss(net: RewardNet, mixed_batch: list[QueryTriple],
              rng: np.random.Generator, alpha: float) -> float:
    """Mixed-batch cross-entropy minus ``alpha`` times the peer term."""
    if len(mixed_batch) < 2:
        raise InputError("peer loss needs a batch of size >= 2")
    batch = _plain_batch(mixed_batch)
    idx = rng.integers(0, len(mixed_batch), size=len(mixed_batch))
    batch.peer_targets = batch.targets[idx]
    batch.peer_alpha = alpha
    return batch.loss_value(net)


# -- training loops ----------------------------------------------------------------

@dataclass
class SessionStats:
    labels_used: int
    pseudo_attempted: int = 0
    pseudo_rejected: int = 0
    final_loss: float = 0.0


def train_ensemble(ens: RewardEnsemble, labeled: list[QueryTriple],
                   pseudo: list[QueryTriple], cfg: SSLConfig,
                   rng: np.random.Generator,
                   mse_pool: list[tuple[Segment, Segment]] | None = None,
                   steps: int | None = None) -> RewardEnsemble:
    """Train every member independently on labeled plus pseudo-labeled data.

    The consistency objective is the sum of one expectation over the
    labeled set and one over the pseudo set, so each step draws half its
    batch from each (when both are nonempty) rather than letting the
    usually much larger pseudo set drown the human labels.

    Members draw independent batches, augmentations, dropout masks, and
    peer pairings from the shared generator, so the whole call is
    deterministic given (ensemble, data, seed).
    """
    if not labeled and not pseudo:
        raise StateError("cannot train on an empty dataset")
    spec = method_dispatch(cfg)
    steps = cfg.train_steps if steps is None else steps
    ens = ens.copy()
    hidden = ens.members[0].hidden_sizes

    def draw(pool, n):
        idx = rng.integers(0, len(pool), size=min(n, len(pool)))
        return [pool[i] for i in idx]

    base_lr = [st.lr for st in ens.adam]
    for step in range(steps):
        if cfg.lr_decay < 1.0 and steps > 1:
            frac = 1.0 + (cfg.lr_decay - 1.0) * step / (steps - 1)
            for k in range(ens.size):
                ens.adam[k] = replace(ens.adam[k], lr=base_lr[k] * frac)
        for k in range(ens.size):
            if labeled and pseudo:
                half = max(cfg.batch_size // 2, 1)
                batch = draw(labeled, half) + draw(pseudo, half)
            else:
                batch = draw(labeled or pseudo, cfg.batch_size)
            use_spec = spec if (spec.peer_alpha == 0.0 or len(batch) >= 2) \
                else replace(spec, peer_alpha=0.0)
            mse_pairs = None
            if spec.consistency_mse and mse_pool:
                mse_pairs = [mse_pool[i] for i in
                             rng.integers(0, len(mse_pool),
                                          size=min(cfg.batch_size, len(mse_pool)))]
            prep = prepare_batch(batch, use_spec, cfg.augment, rng, hidden, mse_pairs,
                                 reward_l2=cfg.reward_l2)
            _, grads = prep.loss_and_grad(ens.members[k])
            ens.members[k], ens.adam[k] = adam_step(ens.members[k], grads, ens.adam[k])
    if cfg.lr_decay < 1.0:
        ens.adam = [replace(st, lr=lr0) for st, lr0 in zip(ens.adam, base_lr)]
    ens.updates += 1
    return ens


def relabel_pseudo(teacher, d_u: PreferenceDataset, cfg: SSLConfig,
                   rng: np.random.Generator) -> PreferenceDataset:
    """Re-infer every stored pseudo-label with the current teacher.

    Each self-training round treats the latest student as the teacher of
    the unlabeled pairs, so their labels are refreshed rather than left
    at whatever an earlier, weaker teacher believed.  Hard-label methods
    re-apply their confidence threshold, so pairs the teacher is no
    longer sure about drop out.  Returns a fresh dataset (stored
    datasets are append-only; refreshing builds the next round's view).
    """
    refreshed = PreferenceDataset("pseudo")
    for tr in d_u:
        label = pseudo_label(teacher, (tr.first, tr.second), cfg, rng)
        if label is None:
            continue
        refreshed.append(QueryTriple(tr.first, tr.second, label, "pseudo"))
    return refreshed


def self_training_session(teacher: RewardEnsemble, d_l: PreferenceDataset,
                          d_u: PreferenceDataset, buffer, cfg: SSLConfig,
                          rng: np.random.Generator, labels_added: int,
                          pair_source=None) -> tuple[RewardEnsemble, PreferenceDataset, SessionStats]:
    """One round of self-training: refresh the unlabeled pairs' labels
    with the incoming teacher, train the student on the mixed data, then
    let the student pseudo-label fresh unlabeled pairs for the next round.

    With ``fresh_student`` (the default) the student starts from a new
    seed-controlled initialization and distills the teacher through the
    pseudo-labels; otherwise it continues from the teacher's parameters.

    ``pair_source(rng)`` supplies unlabeled segment pairs; it defaults to
    uniform buffer sampling with the labeled segments' length.
    """
    if len(d_l) == 0:
        raise StateError("self-training requires a nonempty labeled dataset")
    spec = method_dispatch(cfg)
    h = len(d_l[0].first)
    if pair_source is None:
        def pair_source(r):
            return buffer.sample_segment_pair(h, r)

    ratio = resolve_unlabeled_ratio(cfg, labels_added) if cfg.unlabeled_ratio is None \
        else cfg.unlabeled_ratio

    if spec.pseudo is not None and len(d_u):
        d_u = relabel_pseudo(teacher, d_u, cfg, rng)

    pseudo = [] if spec.name == "supervised" else d_u.triples()
    mse_pool = None
    if spec.consistency_mse:
        n_pool = max(ratio * max(labels_added, 1), 1)
        mse_pool = [pair_source(rng) for _ in range(n_pool)]

    if cfg.fresh_student:
        proto = teacher.members[0]
        state = teacher.adam[0]
        init = init_ensemble(proto.input_dim, proto.hidden_sizes, teacher.size,
                             state.lr, rng, state.weight_decay)
        init.updates = teacher.updates
    else:
        init = teacher
    student = train_ensemble(init, d_l.triples(), pseudo, cfg, rng,
                             mse_pool=mse_pool)

    stats = SessionStats(labels_used=len(d_l) + len(pseudo))
    if spec.pseudo is not None and ratio > 0:
        n_new = ratio * labels_added
        stats.pseudo_attempted = n_new
        for _ in range(n_new):
            pair = pair_source(rng)
            label = pseudo_label(student, pair, cfg, rng)
            if label is None:
                stats.pseudo_rejected += 1
                continue
            d_u.append(QueryTriple(pair[0], pair[1], label, "pseudo"))
    return student, d_u, stats


# -- prediction metrics -------------------------------------------------------------

def ensemble_mean_prob(ens: RewardEnsemble, first: Segment, second: Segment
                       ) -> tuple[float, float]:
    return _teacher_prob(ens, first, second)


def prediction_entropy(p: tuple[float, float]) -> float:
    """Natural-log entropy of a pair distribution."""
    total = 0.0
    for v in p:
        if v > 0:
            total -= v * np.log(v)
    return float(total)
