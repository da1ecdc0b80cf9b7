"""Feed-forward reward networks and the pairwise preference predictor.

The network is a plain MLP over concatenated (state, action) feature
rows: ReLU hidden layers, then a tanh output squashing per-step rewards
into [-1, 1] so segment sums stay bounded and the pairwise softmax can
never overflow.  Forward and backward passes are written out explicitly
(no autodiff); loss modules supply dL/dS for each segment sum S and this
module backpropagates to every weight.

The probability that one segment beats another is a two-way softmax
over the segments' summed predicted rewards, always computed in
log-space with max subtraction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, FormatError, InputError
from .experience import Segment


@dataclass
class RewardNet:
    """MLP parameters: weights[i] is (d_in, d_out), biases[i] is (d_out,)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    def copy(self) -> "RewardNet":
        return RewardNet([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def init_reward_net(input_dim: int, hidden: tuple[int, ...],
                    rng: np.random.Generator) -> RewardNet:
    """Fan-in-scaled normal init; seed-controlled via ``rng``."""
    dims = (input_dim, *hidden, 1)
    weights, biases = [], []
    for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        scale = np.sqrt(2.0 / din) if i < len(dims) - 2 else np.sqrt(1.0 / din)
        weights.append(rng.normal(0.0, scale, size=(din, dout)))
        biases.append(np.zeros(dout))
    return RewardNet(weights, biases)


@dataclass
class Grads:
    """Per-parameter gradients, shaped exactly like a RewardNet."""

    dws: list[np.ndarray]
    dbs: list[np.ndarray]

    def __add__(self, other: "Grads") -> "Grads":
        return Grads([a + b for a, b in zip(self.dws, other.dws)],
                     [a + b for a, b in zip(self.dbs, other.dbs)])

    def scale(self, s: float) -> "Grads":
        return Grads([s * a for a in self.dws], [s * a for a in self.dbs])

    def max_abs(self) -> float:
        return max(max(np.max(np.abs(a)) for a in self.dws),
                   max(np.max(np.abs(a)) for a in self.dbs))


def zero_grads(net: RewardNet) -> Grads:
    return Grads([np.zeros_like(w) for w in net.weights],
                 [np.zeros_like(b) for b in net.biases])


# -- forward / backward -------------------------------------------------------

class _Cache:
    __slots__ = ("inputs", "zs", "r", "masks")

    def __init__(self, inputs, zs, r, masks):
        self.inputs = inputs    # input to each layer, len = n_layers
        self.zs = zs            # pre-activations per layer
        self.r = r              # tanh outputs, (n,)
        self.masks = masks      # dropout masks per hidden layer or None


def forward_cached(net: RewardNet, x: np.ndarray,
                   dropout_masks: list[np.ndarray] | None = None) -> tuple[np.ndarray, _Cache]:
    """Rows of ``x`` are (state, action) features; returns per-row rewards."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != net.input_dim:
        raise InputError(f"input dim {x.shape[1]} != network dim {net.input_dim}")
    n_hidden = len(net.weights) - 1
    if dropout_masks is not None and len(dropout_masks) != n_hidden:
        raise InputError("one dropout mask per hidden layer required")
    inputs, zs = [], []
    h = x
    for i in range(n_hidden):
        inputs.append(h)
        z = h @ net.weights[i] + net.biases[i]
        zs.append(z)
        h = np.maximum(z, 0.0)
        if dropout_masks is not None:
            h = h * dropout_masks[i]
    inputs.append(h)
    z_out = h @ net.weights[-1] + net.biases[-1]
    zs.append(z_out)
    r = np.tanh(z_out[:, 0])
    return r, _Cache(inputs, zs, r, dropout_masks)


def reward_forward(net: RewardNet, state_features: np.ndarray,
                   action_features: np.ndarray) -> float:
    """Deterministic per-step reward in [-1, 1]."""
    x = np.concatenate([np.asarray(state_features, dtype=float).ravel(),
                        np.asarray(action_features, dtype=float).ravel()])
    r, _ = forward_cached(net, x[None, :])
    return float(r[0])


def backward(net: RewardNet, cache: _Cache, dr: np.ndarray) -> Grads:
    """Backpropagate dL/dr (one scalar per row) to all parameters."""
    dz = (dr * (1.0 - cache.r ** 2))[:, None]
    dws: list[np.ndarray] = [None] * len(net.weights)
    dbs: list[np.ndarray] = [None] * len(net.biases)
    for i in range(len(net.weights) - 1, -1, -1):
        dws[i] = cache.inputs[i].T @ dz
        dbs[i] = dz.sum(axis=0)
        if i == 0:
            break
        dh = dz @ net.weights[i].T
        if cache.masks is not None:
            dh = dh * cache.masks[i - 1]
        dz = dh * (cache.zs[i - 1] > 0)
    return Grads(dws, dbs)


# -- packed segment batches ---------------------------------------------------

@dataclass
class PackedSegments:
    """All segments of a batch stacked row-wise for one-shot forward passes.

    Segments may have different lengths; ``offsets`` marks each segment's
    row range in ``x``.
    """

    x: np.ndarray          # (total_rows, d)
    offsets: np.ndarray    # (n_segments + 1,)

    @property
    def n_segments(self) -> int:
        return len(self.offsets) - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)


def pack_features(feature_blocks: list[np.ndarray]) -> PackedSegments:
    offsets = np.concatenate([[0], np.cumsum([len(b) for b in feature_blocks])])
    return PackedSegments(np.vstack(feature_blocks), offsets)


def packed_sums(net: RewardNet, packed: PackedSegments,
                dropout_masks: list[np.ndarray] | None = None
                ) -> tuple[np.ndarray, _Cache]:
    """Per-segment reward sums S and the cache to backprop through them."""
    r, cache = forward_cached(net, packed.x, dropout_masks)
    sums = np.add.reduceat(r, packed.offsets[:-1])
    sums[packed.lengths == 0] = 0.0
    return sums, cache


def packed_backward(net: RewardNet, packed: PackedSegments, cache: _Cache,
                    d_sums: np.ndarray) -> Grads:
    dr = np.repeat(np.asarray(d_sums, dtype=float), packed.lengths)
    return backward(net, cache, dr)


# -- pairwise preference ------------------------------------------------------

def prob_from_sums(s_first: float, s_second: float) -> tuple[float, float]:
    """Two-way softmax with max subtraction; never overflows."""
    m = max(s_first, s_second)
    e1 = np.exp(s_first - m)
    e2 = np.exp(s_second - m)
    z = e1 + e2
    return float(e1 / z), float(e2 / z)


def preference_prob(net: RewardNet, first: Segment, second: Segment) -> tuple[float, float]:
    """P[first beats second] under the pairwise-comparison model."""
    if len(first) != len(second):
        raise InputError(f"segment lengths differ: {len(first)} vs {len(second)}")
    r1, _ = forward_cached(net, first.features())
    r2, _ = forward_cached(net, second.features())
    return prob_from_sums(float(r1.sum()), float(r2.sum()))


def grad_loss(net: RewardNet, loss_spec) -> Grads:
    """Analytic gradient of a prepared loss (see the semisup module) with
    respect to all parameters."""
    _, grads = loss_spec.loss_and_grad(net)
    return grads


# -- Adam ---------------------------------------------------------------------

@dataclass
class AdamState:
    """Moment accumulators for one network; functional updates only.

    ``weight_decay`` is decoupled (applied to the parameters directly,
    not through the gradient), so loss values and loss gradients keep
    their exact analytic meaning.
    """

    m: Grads
    v: Grads
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


def init_adam(net: RewardNet, lr: float = 1e-3, weight_decay: float = 0.0) -> AdamState:
    return AdamState(m=zero_grads(net), v=zero_grads(net), lr=lr,
                     weight_decay=weight_decay)


def adam_step(net: RewardNet, grads: Grads, state: AdamState) -> tuple[RewardNet, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    for w, g in zip(net.weights, grads.dws):
        if w.shape != g.shape:
            raise InputError("gradient shape does not match parameters")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_w, new_b = [], []
    new_m = Grads([], [])
    new_v = Grads([], [])
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    shrink = 1.0 - state.lr * state.weight_decay

    def upd(param, g, m, v, out_params, decay):
        m2 = b1 * m + (1 - b1) * g
        v2 = b2 * v + (1 - b2) * g * g
        p2 = (param * shrink if decay else param) \
            - state.lr * (m2 / c1) / (np.sqrt(v2 / c2) + state.eps)
        out_params.append(p2)
        return m2, v2

    for w, g, m, v in zip(net.weights, grads.dws, state.m.dws, state.v.dws):
        m2, v2 = upd(w, g, m, v, new_w, decay=True)
        new_m.dws.append(m2)
        new_v.dws.append(v2)
    for b, g, m, v in zip(net.biases, grads.dbs, state.m.dbs, state.v.dbs):
        m2, v2 = upd(b, g, m, v, new_b, decay=False)
        new_m.dbs.append(m2)
        new_v.dbs.append(v2)
    return RewardNet(new_w, new_b), AdamState(new_m, new_v, t, state.lr,
                                              b1, b2, state.eps, state.weight_decay)


# -- ensemble -----------------------------------------------------------------

@dataclass
class RewardEnsemble:
    """Independently initialized members with shared architecture."""

    members: list[RewardNet]
    adam: list[AdamState]
    updates: int = 0

    def __post_init__(self):
        if not self.members:
            raise ConfigurationError("ensemble must have at least one member")
        archs = {(m.input_dim, m.hidden_sizes) for m in self.members}
        if len(archs) != 1:
            raise ConfigurationError("ensemble members must share an architecture")

    @property
    def size(self) -> int:
        return len(self.members)

    def copy(self) -> "RewardEnsemble":
        return RewardEnsemble([m.copy() for m in self.members],
                              [AdamState(Grads([a.copy() for a in s.m.dws],
                                               [a.copy() for a in s.m.dbs]),
                                         Grads([a.copy() for a in s.v.dws],
                                               [a.copy() for a in s.v.dbs]),
                                         s.step, s.lr, s.beta1, s.beta2, s.eps,
                                         s.weight_decay)
                               for s in self.adam],
                              self.updates)

    def mean_reward(self, state_features: np.ndarray, action_features: np.ndarray) -> float:
        return float(np.mean([reward_forward(m, state_features, action_features)
                              for m in self.members]))

    def mean_reward_rows(self, x: np.ndarray) -> np.ndarray:
        return np.mean([forward_cached(m, x)[0] for m in self.members], axis=0)


def init_ensemble(input_dim: int, hidden: tuple[int, ...], n_members: int,
                  lr: float, rng: np.random.Generator,
                  weight_decay: float = 0.0) -> RewardEnsemble:
    members = [init_reward_net(input_dim, hidden, rng) for _ in range(n_members)]
    return RewardEnsemble(members, [init_adam(m, lr, weight_decay) for m in members])


def ensemble_prob(ens: RewardEnsemble, first: Segment, second: Segment
                  ) -> tuple[list[tuple[float, float]], tuple[float, float]]:
    """Per-member pair probabilities and their mean."""
    per_member = [preference_prob(m, first, second) for m in ens.members]
    mean_first = float(np.mean([p[0] for p in per_member]))
    return per_member, (mean_first, 1.0 - mean_first)


# -- checkpoints ----------------------------------------------------------------

_CKPT_HEADER = "rewardckpt v1"


def _write_array(f, a: np.ndarray) -> None:
    f.write(" ".join(repr(float(v)) for v in a.ravel()) + "\n")


def save_ensemble(ens: RewardEnsemble, path) -> None:
    with open(path, "w") as f:
        f.write(_CKPT_HEADER + "\n")
        f.write(f"ensemble {ens.size} updates {ens.updates}\n")
        for net, st in zip(ens.members, ens.adam):
            dims = (net.input_dim, *net.hidden_sizes, 1)
            f.write("net " + " ".join(str(d) for d in dims) + "\n")
            f.write(f"adam {st.step} {repr(st.lr)} {repr(st.beta1)} "
                    f"{repr(st.beta2)} {repr(st.eps)} {repr(st.weight_decay)}\n")
            for group in (net.weights, net.biases, st.m.dws, st.m.dbs, st.v.dws, st.v.dbs):
                for a in group:
                    _write_array(f, a)


def load_ensemble(path) -> RewardEnsemble:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != _CKPT_HEADER:
        raise FormatError(f"missing {_CKPT_HEADER!r} header", 1)
    head = lines[1].split() if len(lines) > 1 else []
    if len(head) != 4 or head[0] != "ensemble" or head[2] != "updates":
        raise FormatError("malformed ensemble line", 2)
    n_members, updates = int(head[1]), int(head[3])
    idx = 2
    members, states = [], []
    for _ in range(n_members):
        try:
            net_head = lines[idx].split()
            if net_head[0] != "net":
                raise FormatError("expected 'net' line", idx + 1)
            dims = [int(d) for d in net_head[1:]]
            adam_head = lines[idx + 1].split()
            if adam_head[0] != "adam":
                raise FormatError("expected 'adam' line", idx + 2)
            step = int(adam_head[1])
            lr, b1, b2, eps, wd = (float(v) for v in adam_head[2:7])
            idx += 2
            shapes_w = [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
            shapes_b = [(dims[i + 1],) for i in range(len(dims) - 1)]

            def read_group(shapes):
                nonlocal idx
                arrays = []
                for shape in shapes:
                    n = int(np.prod(shape))
                    vals = lines[idx].split()
                    if len(vals) != n:
                        raise FormatError(f"expected {n} values", idx + 1)
                    arrays.append(np.array([float(v) for v in vals]).reshape(shape))
                    idx += 1
                return arrays

            w = read_group(shapes_w)
            b = read_group(shapes_b)
            mw = read_group(shapes_w)
            mb = read_group(shapes_b)
            vw = read_group(shapes_w)
            vb = read_group(shapes_b)
        except (IndexError, ValueError) as e:
            raise FormatError(f"truncated or malformed checkpoint: {e}", idx + 1) from None
        members.append(RewardNet(w, b))
        states.append(AdamState(Grads(mw, mb), Grads(vw, vb), step, lr, b1, b2,
                                eps, wd))
    return RewardEnsemble(members, states, updates)
