"""Per-session experiment metrics with an append-only file format.

``metrics v1`` files hold one whitespace-separated record per line with
a fixed column order.  Wall-clock time is tracked on the in-memory
record for display but is deliberately left out of the file so that two
runs of the same seeded experiment produce byte-identical files.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

from ..errors import FormatError

_HEADER = "metrics v1"

_COLUMNS = ("session", "env_steps", "labeled_count", "pseudo_count", "accuracy",
            "reward_corr", "mean_entropy", "policy_return", "hazard_rate",
            "success_rate")


@dataclass
class MetricsRecord:
    session: int
    env_steps: int
    labeled_count: int
    pseudo_count: int
    accuracy: float
    reward_corr: float
    mean_entropy: float
    policy_return: float
    hazard_rate: float
    success_rate: float
    wall_clock: float = 0.0  # in-memory only; never serialized

    def to_line(self) -> str:
        vals = []
        for col in _COLUMNS:
            v = getattr(self, col)
            vals.append(str(v) if isinstance(v, int) else repr(float(v)))
        return " ".join(vals)


class MetricsWriter:
    """Appends one record per session; the header is written once."""

    def __init__(self, path):
        self.path = path
        with open(path, "w") as f:
            f.write(_HEADER + "\n")

    def append(self, rec: MetricsRecord) -> None:
        with open(self.path, "a") as f:
            f.write(rec.to_line() + "\n")


def read_metrics(path) -> list[MetricsRecord]:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != _HEADER:
        raise FormatError(f"missing {_HEADER!r} header", 1)
    records = []
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != len(_COLUMNS):
            raise FormatError(f"expected {len(_COLUMNS)} columns", i)
        try:
            records.append(MetricsRecord(
                session=int(parts[0]), env_steps=int(parts[1]),
                labeled_count=int(parts[2]), pseudo_count=int(parts[3]),
                accuracy=float(parts[4]), reward_corr=float(parts[5]),
                mean_entropy=float(parts[6]), policy_return=float(parts[7]),
                hazard_rate=float(parts[8]), success_rate=float(parts[9]),
            ))
        except ValueError:
            raise FormatError("malformed numeric field", i) from None
    return records


def metrics_to_csv(records: list[MetricsRecord]) -> str:
    """Learning-curve CSV for external plotting."""
    out = io.StringIO()
    out.write(",".join(_COLUMNS) + "\n")
    for r in records:
        out.write(",".join(str(getattr(r, c)) for c in _COLUMNS) + "\n")
    return out.getvalue()
