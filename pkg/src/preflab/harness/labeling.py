"""Pending-query state shared between the training loop and the HTTP
service, plus the trajectory payload schema served to labeling clients.

The training loop enqueues segment pairs and blocks; clients pull the
oldest unanswered query, post a choice, and the loop wakes up.  All
access is serialized under one lock, so label arrival order equals
server receipt order.
"""
from __future__ import annotations

import threading
import time
from collections import OrderedDict
from dataclasses import dataclass

from ..errors import InputError, StateError
from ..experience import PreferenceLabel, Segment

PAYLOAD_SCHEMA = "prefquery v1"

CHOICES = ("first", "second", "equal", "skip")


def choice_to_label(choice: str) -> PreferenceLabel:
    if choice == "first":
        return PreferenceLabel.hard_first()
    if choice == "second":
        return PreferenceLabel.hard_second()
    if choice == "equal":
        return PreferenceLabel.equal()
    if choice == "skip":
        return PreferenceLabel.skipped()
    raise InputError(f"choice must be one of {CHOICES}, got {choice!r}")


def build_query_payload(env, qid: str, first: Segment, second: Segment) -> dict:
    """Everything a client needs to render and judge one query."""

    def side(seg: Segment) -> dict:
        return {
            "states": [[float(v) for v in row] for row in seg.states],
            "actions": [[float(v) for v in row] for row in seg.actions],
            "trace": [env.render_trace(row) for row in seg.states],
        }

    return {
        "schema": PAYLOAD_SCHEMA,
        "id": qid,
        "env": {"name": env.name, "metadata": env.render_metadata()},
        "length": len(first),
        "first": side(first),
        "second": side(second),
    }


@dataclass
class QueryJob:
    qid: str
    payload: dict
    label: PreferenceLabel | None = None


class DuplicateLabel(StateError):
    """The query was already answered."""


class UnknownQuery(StateError):
    """No pending query has this id."""


@dataclass
class SessionProgress:
    pending: int = 0
    labeled: int = 0
    skipped: int = 0
    budget_used: int = 0
    budget_total: int = 0
    session: int = 0
    env_steps: int = 0
    done: bool = False


class LabelingSession:
    """Thread-safe pending-query queue between loop and HTTP handlers."""

    def __init__(self, budget_total: int = 0):
        self._lock = threading.Lock()
        self._answered = threading.Condition(self._lock)
        self._jobs: "OrderedDict[str, QueryJob]" = OrderedDict()
        self._counter = 0
        self.progress = SessionProgress(budget_total=budget_total)

    # -- loop side -------------------------------------------------------------

    def enqueue(self, payload_builder, pairs) -> list[str]:
        """Register one job per pair; returns their query ids."""
        with self._lock:
            qids = []
            for first, second in pairs:
                qid = f"q-{self._counter:06d}"
                self._counter += 1
                self._jobs[qid] = QueryJob(qid, payload_builder(qid, first, second))
                qids.append(qid)
            self.progress.pending = sum(1 for j in self._jobs.values() if j.label is None)
            return qids

    def wait_for(self, qids: list[str], timeout_s: float) -> dict[str, PreferenceLabel]:
        """Block until every query is answered or the deadline passes.

        Unanswered queries are withdrawn and reported as skipped.
        """
        deadline = threading.TIMEOUT_MAX if timeout_s is None else timeout_s
        end = time.monotonic() + deadline
        with self._answered:
            while True:
                missing = [q for q in qids if self._jobs[q].label is None]
                if not missing:
                    break
                remaining = end - time.monotonic()
                if remaining <= 0 or not self._answered.wait(timeout=min(remaining, 1.0)):
                    if time.monotonic() >= end:
                        for q in missing:
                            self._jobs[q].label = PreferenceLabel.skipped()
                            self.progress.skipped += 1
                        break
            out = {q: self._jobs[q].label for q in qids}
            for q in qids:
                del self._jobs[q]
            self.progress.pending = sum(1 for j in self._jobs.values() if j.label is None)
            return out

    def update_progress(self, **kwargs) -> None:
        with self._lock:
            for k, v in kwargs.items():
                setattr(self.progress, k, v)

    # -- client side -------------------------------------------------------------

    def next_pending(self) -> QueryJob | None:
        """Oldest unanswered job, or None."""
        with self._lock:
            for job in self._jobs.values():
                if job.label is None:
                    return job
            return None

    def submit(self, qid: str, choice: str) -> PreferenceLabel:
        label = choice_to_label(choice)
        with self._answered:
            job = self._jobs.get(qid)
            if job is None:
                raise UnknownQuery(f"no pending query {qid!r}")
            if job.label is not None:
                raise DuplicateLabel(f"query {qid!r} already labeled")
            job.label = label
            if label.is_skipped:
                self.progress.skipped += 1
            else:
                self.progress.labeled += 1
            self.progress.pending = sum(1 for j in self._jobs.values() if j.label is None)
            self._answered.notify_all()
            return label

    def status(self) -> dict:
        with self._lock:
            p = self.progress
            return {
                "pending": p.pending, "labeled": p.labeled, "skipped": p.skipped,
                "budget_used": p.budget_used, "budget_total": p.budget_total,
                "session": p.session, "env_steps": p.env_steps, "done": p.done,
            }
