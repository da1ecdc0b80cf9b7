"""Replay buffer, segment extraction, and preference datasets.

The replay buffer stores transitions grouped by episode with FIFO
eviction over individual transitions; because eviction always eats the
oldest episode from its front, the surviving steps of every episode stay
contiguous and segment extraction stays valid.

Preference datasets hold (segment, segment, label) triples.  On disk a
triple references its segments by (episode id, start index, length), so
datasets are stored next to an episode dump rather than duplicating
trajectory arrays.  Both formats are line-delimited text with a version
header and an ``end <count>`` trailer line that makes silent truncation
detectable; floats are written with :func:`repr` (shortest decimal that
round-trips bit-exactly, up to 17 significant digits).
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError, StateError

LABEL_KINDS = ("hard", "equal", "soft", "skipped")
PROVENANCES = ("human", "oracle", "pseudo")


@dataclass(frozen=True)
class PreferenceLabel:
    """Two-component preference distribution over a segment pair.

    ``p_first + p_second == 1`` for every kind except ``skipped``, whose
    components are NaN and which must never be stored in a dataset.
    """

    p_first: float
    p_second: float
    kind: str

    def __post_init__(self):
        if self.kind not in LABEL_KINDS:
            raise InputError(f"unknown label kind {self.kind!r}")
        if self.kind == "skipped":
            return
        if not (np.isfinite(self.p_first) and np.isfinite(self.p_second)):
            raise InputError("label probabilities must be finite")
        if not (0.0 <= self.p_first <= 1.0 and 0.0 <= self.p_second <= 1.0):
            raise InputError("label probabilities must lie in [0, 1]")
        if abs(self.p_first + self.p_second - 1.0) > 1e-9:
            raise InputError("label probabilities must sum to 1")
        if self.kind == "hard" and (self.p_first, self.p_second) not in ((1.0, 0.0), (0.0, 1.0)):
            raise InputError("hard labels must be (1,0) or (0,1)")
        if self.kind == "equal" and (self.p_first, self.p_second) != (0.5, 0.5):
            raise InputError("equal labels must be (0.5, 0.5)")

    @classmethod
    def hard_first(cls) -> "PreferenceLabel":
        return cls(1.0, 0.0, "hard")

    @classmethod
    def hard_second(cls) -> "PreferenceLabel":
        return cls(0.0, 1.0, "hard")

    @classmethod
    def equal(cls) -> "PreferenceLabel":
        return cls(0.5, 0.5, "equal")

    @classmethod
    def soft(cls, p_first: float) -> "PreferenceLabel":
        return cls(float(p_first), 1.0 - float(p_first), "soft")

    @classmethod
    def skipped(cls) -> "PreferenceLabel":
        return cls(float("nan"), float("nan"), "skipped")

    @property
    def is_skipped(self) -> bool:
        return self.kind == "skipped"

    def swapped(self) -> "PreferenceLabel":
        if self.is_skipped:
            return self
        return PreferenceLabel(self.p_second, self.p_first, self.kind)

    def as_array(self) -> np.ndarray:
        return np.array([self.p_first, self.p_second])


@dataclass
class Segment:
    """H contiguous (state, action) steps from one episode.

    ``states`` is (H, state_dim) and ``actions`` is (H, action_dim) of
    already-encoded feature rows, so the reward model consumes segments
    without knowing the environment.
    """

    states: np.ndarray
    actions: np.ndarray
    source_episode: str
    start_index: int

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise InputError("segment states/actions must be 2-D arrays")
        if len(self.states) != len(self.actions):
            raise InputError("segment states and actions must have equal length")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.actions))):
            raise InputError("segment features must be finite")

    def __len__(self) -> int:
        return len(self.states)

    def features(self) -> np.ndarray:
        """(H, state_dim + action_dim) rows fed to the reward network."""
        return np.hstack([self.states, self.actions])

    def __eq__(self, other) -> bool:
        return (isinstance(other, Segment)
                and self.source_episode == other.source_episode
                and self.start_index == other.start_index
                and np.array_equal(self.states, other.states)
                and np.array_equal(self.actions, other.actions))


@dataclass
class QueryTriple:
    """A compared segment pair plus its label and where the label came from."""

    first: Segment
    second: Segment
    label: PreferenceLabel
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise InputError(f"unknown provenance {self.provenance!r}")


class PreferenceDataset:
    """Append-only list of query triples, either human/oracle or pseudo."""

    def __init__(self, role: str):
        if role not in ("labeled", "pseudo"):
            raise InputError(f"dataset role must be 'labeled' or 'pseudo', got {role!r}")
        self.role = role
        self._triples: list[QueryTriple] = []

    def append(self, triple: QueryTriple) -> None:
        if triple.label.is_skipped:
            raise InputError("skipped labels are never stored in a dataset")
        if self.role == "pseudo" and triple.provenance != "pseudo":
            raise InputError("pseudo datasets accept only pseudo provenance")
        if self.role == "labeled" and triple.provenance == "pseudo":
            raise InputError("labeled datasets accept only human/oracle provenance")
        self._triples.append(triple)

    def __len__(self) -> int:
        return len(self._triples)

    def __iter__(self):
        return iter(self._triples)

    def __getitem__(self, i: int) -> QueryTriple:
        return self._triples[i]

    def triples(self) -> list[QueryTriple]:
        return list(self._triples)

    def __eq__(self, other) -> bool:
        return (isinstance(other, PreferenceDataset)
                and self.role == other.role
                and self._triples == other._triples)


@dataclass
class Transition:
    """One environment step; gt_reward is for annotators/metrics only."""

    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    learned_reward: float
    gt_reward: float

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float)
        self.action = np.asarray(self.action, dtype=float)
        self.next_state = np.asarray(self.next_state, dtype=float)
        finite = (np.all(np.isfinite(self.state)) and np.all(np.isfinite(self.action))
                  and np.all(np.isfinite(self.next_state))
                  and np.isfinite(self.learned_reward) and np.isfinite(self.gt_reward))
        if not finite:
            raise InputError("transition fields must be finite")


class _Episode:
    __slots__ = ("eid", "steps", "trim")

    def __init__(self, eid: str):
        self.eid = eid
        self.steps: list[Transition] = []
        self.trim = 0  # original index of steps[0] after front eviction


class ReplayBuffer:
    """FIFO transition store with episode structure for segment sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InputError("capacity must be >= 1")
        self.capacity = capacity
        self._episodes: "OrderedDict[str, _Episode]" = OrderedDict()
        self._count = 0
        self._next_eid = 0
        self._current: _Episode | None = None

    def __len__(self) -> int:
        return self._count

    def start_episode(self, eid: str | None = None) -> str:
        if eid is None:
            eid = f"ep-{self._next_eid:06d}"
            self._next_eid += 1
        if eid in self._episodes:
            raise InputError(f"episode id {eid!r} already in buffer")
        if any(ch.isspace() for ch in eid):
            raise InputError("episode ids must not contain whitespace")
        ep = _Episode(eid)
        self._episodes[eid] = ep
        self._current = ep
        return eid

    def push(self, t: Transition) -> None:
        if self._current is None:
            self.start_episode()
        self._current.steps.append(t)
        self._count += 1
        while self._count > self.capacity:
            oldest = next(iter(self._episodes.values()))
            oldest.steps.pop(0)
            oldest.trim += 1
            self._count -= 1
            if not oldest.steps:
                del self._episodes[oldest.eid]
                if self._current is oldest:
                    self._current = None

    def transitions(self):
        for ep in self._episodes.values():
            yield from ep.steps

    def relabel(self, reward_fn) -> None:
        """Recompute learned_reward on every stored transition."""
        for t in self.transitions():
            r = float(reward_fn(t.state, t.action))
            if not np.isfinite(r):
                raise InputError("relabel produced a non-finite reward")
            t.learned_reward = r

    # -- segment extraction --------------------------------------------------

    def valid_positions(self, h: int) -> list[tuple[str, int]]:
        """All (episode id, start) with h contiguous steps available."""
        if h < 1:
            raise InputError("segment length must be >= 1")
        out = []
        for ep in self._episodes.values():
            n = len(ep.steps) - h + 1
            for i in range(max(n, 0)):
                out.append((ep.eid, ep.trim + i))
        return out

    def extract_segment(self, eid: str, start: int, h: int) -> Segment:
        ep = self._episodes.get(eid)
        if ep is None:
            raise StateError(f"episode {eid!r} not in buffer")
        lo = start - ep.trim
        if lo < 0 or lo + h > len(ep.steps):
            raise StateError(f"segment [{start}, {start + h}) not available in {eid!r}")
        steps = ep.steps[lo:lo + h]
        return Segment(
            states=np.stack([t.state for t in steps]),
            actions=np.stack([t.action for t in steps]),
            source_episode=eid,
            start_index=start,
        )

    def sample_segment_pair(self, h: int, rng: np.random.Generator) -> tuple[Segment, Segment]:
        """Two independent uniform draws over all valid segment positions."""
        positions = self.valid_positions(h)
        if not positions:
            raise StateError(f"no episode holds {h} contiguous steps")
        i, j = rng.integers(len(positions)), rng.integers(len(positions))
        return (self.extract_segment(*positions[i], h),
                self.extract_segment(*positions[j], h))

    def snapshot_store(self) -> "EpisodeStore":
        store = EpisodeStore()
        for ep in self._episodes.values():
            store.add(EpisodeRecord(
                eid=ep.eid,
                start_index=ep.trim,
                states=np.stack([t.state for t in ep.steps]),
                actions=np.stack([t.action for t in ep.steps]),
                gt_rewards=np.array([t.gt_reward for t in ep.steps]),
                learned_rewards=np.array([t.learned_reward for t in ep.steps]),
            ))
        return store


@dataclass
class EpisodeRecord:
    """Immutable dump of an episode's surviving steps."""

    eid: str
    start_index: int
    states: np.ndarray
    actions: np.ndarray
    gt_rewards: np.ndarray
    learned_rewards: np.ndarray


class EpisodeStore:
    """Resolves (episode id, start, length) references to segments."""

    def __init__(self):
        self._records: "OrderedDict[str, EpisodeRecord]" = OrderedDict()

    def add(self, rec: EpisodeRecord) -> None:
        if rec.eid in self._records:
            raise InputError(f"duplicate episode id {rec.eid!r}")
        self._records[rec.eid] = rec

    def add_segment_episode(self, seg: Segment, eid: str) -> Segment:
        """Register a synthetic segment (e.g. a constructed trap variant)
        as its own episode so it can be referenced on disk; returns the
        segment re-rooted at that episode."""
        self.add(EpisodeRecord(
            eid=eid, start_index=0,
            states=seg.states.copy(), actions=seg.actions.copy(),
            gt_rewards=np.zeros(len(seg)), learned_rewards=np.zeros(len(seg)),
        ))
        return Segment(seg.states.copy(), seg.actions.copy(), eid, 0)

    def __contains__(self, eid: str) -> bool:
        return eid in self._records

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[EpisodeRecord]:
        return list(self._records.values())

    def get(self, eid: str) -> EpisodeRecord:
        if eid not in self._records:
            raise StateError(f"episode {eid!r} not in store")
        return self._records[eid]

    def segment(self, eid: str, start: int, h: int) -> Segment:
        rec = self.get(eid)
        lo = start - rec.start_index
        if lo < 0 or lo + h > len(rec.states):
            raise StateError(f"segment [{start}, {start + h}) not available in {eid!r}")
        return Segment(rec.states[lo:lo + h].copy(), rec.actions[lo:lo + h].copy(),
                       eid, start)


# -- serialization -----------------------------------------------------------

_TRAJ_HEADER = "trajdata v1"
_PREF_HEADER = "prefdata v1"


def _fmt_floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _parse_floats(text: str, n: int, lineno: int) -> np.ndarray:
    parts = text.split()
    if len(parts) != n:
        raise FormatError(f"expected {n} values, found {len(parts)}", lineno)
    try:
        return np.array([float(p) for p in parts])
    except ValueError as e:
        raise FormatError(str(e), lineno) from None


def save_episodes(store: EpisodeStore, path) -> None:
    with open(path, "w") as f:
        f.write(_TRAJ_HEADER + "\n")
        for rec in store.records():
            t, ds = rec.states.shape
            da = rec.actions.shape[1]
            f.write(f"episode {rec.eid} {rec.start_index} {t} {ds} {da}\n")
            for i in range(t):
                f.write(" | ".join([
                    _fmt_floats(rec.states[i]),
                    _fmt_floats(rec.actions[i]),
                    repr(float(rec.gt_rewards[i])),
                    repr(float(rec.learned_rewards[i])),
                ]) + "\n")
        f.write(f"end {len(store)}\n")


def load_episodes(path) -> EpisodeStore:
    store = EpisodeStore()
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != _TRAJ_HEADER:
        raise FormatError(f"missing {_TRAJ_HEADER!r} header", 1)
    i = 1
    ended = False
    while i < len(lines):
        lineno = i + 1
        head = lines[i].split()
        if head[:1] == ["end"]:
            if len(head) != 2 or head[1] != str(len(store)):
                raise FormatError("episode count mismatch in trailer", lineno)
            ended = True
            i += 1
            if i != len(lines):
                raise FormatError("content after trailer", i + 1)
            break
        if len(head) != 6 or head[0] != "episode":
            raise FormatError("expected 'episode <id> <start> <T> <ds> <da>'", lineno)
        eid = head[1]
        try:
            start, t, ds, da = (int(x) for x in head[2:])
        except ValueError:
            raise FormatError("non-integer episode dimensions", lineno) from None
        if i + t >= len(lines):
            raise FormatError(f"episode {eid!r} truncated", len(lines))
        states, actions = np.empty((t, ds)), np.empty((t, da))
        gt, lr = np.empty(t), np.empty(t)
        for k in range(t):
            row_no = lineno + 1 + k
            fields = lines[i + 1 + k].split(" | ")
            if len(fields) != 4:
                raise FormatError("expected 4 '|'-separated fields", row_no)
            states[k] = _parse_floats(fields[0], ds, row_no)
            actions[k] = _parse_floats(fields[1], da, row_no)
            gt[k] = _parse_floats(fields[2], 1, row_no)[0]
            lr[k] = _parse_floats(fields[3], 1, row_no)[0]
        store.add(EpisodeRecord(eid, start, states, actions, gt, lr))
        i += 1 + t
    if not ended:
        raise FormatError("missing 'end' trailer (file truncated?)", len(lines) + 1)
    return store


def save_dataset(dataset: PreferenceDataset, path) -> None:
    """Write one reference record per triple: segments are stored as
    (episode id, start, length) against a matching episode dump."""
    with open(path, "w") as f:
        f.write(_PREF_HEADER + "\n")
        f.write(f"role {dataset.role}\n")
        for tr in dataset:
            lab = tr.label
            f.write(" ".join([
                tr.first.source_episode, str(tr.first.start_index),
                tr.second.source_episode, str(tr.second.start_index),
                str(len(tr.first)),
                repr(float(lab.p_first)), repr(float(lab.p_second)), lab.kind,
                tr.provenance,
            ]) + "\n")
        f.write(f"end {len(dataset)}\n")


def load_dataset(path, store: EpisodeStore) -> PreferenceDataset:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != _PREF_HEADER:
        raise FormatError(f"missing {_PREF_HEADER!r} header", 1)
    if len(lines) < 2 or not lines[1].startswith("role "):
        raise FormatError("missing role line", 2)
    role = lines[1][len("role "):]
    ds = PreferenceDataset(role)
    ended = False
    for i, line in enumerate(lines[2:], start=3):
        parts = line.split()
        if parts[:1] == ["end"]:
            if len(parts) != 2 or parts[1] != str(len(ds)):
                raise FormatError("record count mismatch in trailer", i)
            ended = True
            if i != len(lines):
                raise FormatError("content after trailer", i + 1)
            break
        if len(parts) != 9:
            raise FormatError("expected 9 fields per record", i)
        e1, s1, e2, s2, h, p1, p2, kind, prov = parts
        try:
            s1, s2, h = int(s1), int(s2), int(h)
            p1, p2 = float(p1), float(p2)
        except ValueError:
            raise FormatError("malformed numeric field", i) from None
        try:
            label = PreferenceLabel(p1, p2, kind)
            triple = QueryTriple(store.segment(e1, s1, h), store.segment(e2, s2, h),
                                 label, prov)
        except (InputError, StateError) as e:
            raise FormatError(str(e), i) from None
        ds.append(triple)
    if not ended:
        raise FormatError("missing 'end' trailer (file truncated?)", len(lines) + 1)
    return ds
