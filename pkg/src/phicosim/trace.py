"""Sampled signal records shared by the orchestrator and the harness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .timebase import to_seconds


@dataclass(frozen=True)
class LogEntry:
    """One entry of a trace's event log.

    ``kind`` is a short tag such as ``"entry"``, ``"delivered"``, ``"dropped"``,
    ``"stale"``, ``"crossing"`` or ``"overrun"``; ``data`` holds sorted
    key/value pairs so entries stay hashable and serialize stably.
    """

    t: int
    kind: str
    source: str
    data: tuple[tuple[str, Any], ...] = ()

    def get(self, key, default=None):
        for k, v in self.data:
            if k == key:
                return v
        return default


def log_entry(t: int, kind: str, source: str, **data) -> LogEntry:
    return LogEntry(int(t), kind, source, tuple(sorted(data.items())))


@dataclass
class Trace:
    """A sample table (time column plus named signal columns) and an event log.

    Times are integer nanoseconds and must be strictly increasing. Every row
    carries a value for every column.
    """

    times: list[int] = field(default_factory=list)
    columns: dict[str, list[float]] = field(default_factory=dict)
    units: dict[str, str] = field(default_factory=dict)
    log: list[LogEntry] = field(default_factory=list)

    def declare(self, name: str, unit: str = "") -> None:
        if name in self.columns:
            return
        if self.times:
            raise ValueError(f"cannot add column {name!r} after rows were recorded")
        self.columns[name] = []
        self.units[name] = unit

    def add_row(self, t: int, values: dict[str, float]) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError(f"trace time must increase strictly: {t} after {self.times[-1]}")
        missing = set(self.columns) - set(values)
        if missing:
            raise ValueError(f"row at t={t} lacks columns {sorted(missing)}")
        self.times.append(int(t))
        for name, col in self.columns.items():
            col.append(float(values[name]))

    def __len__(self) -> int:
        return len(self.times)

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.columns[name], dtype=float)

    def seconds(self) -> np.ndarray:
        return np.array([to_seconds(t) for t in self.times])

    def row(self, index: int) -> dict[str, float]:
        return {name: col[index] for name, col in self.columns.items()}

    def truncate(self, t: int) -> None:
        """Drop every row later than ``t``."""
        keep = sum(1 for x in self.times if x <= t)
        del self.times[keep:]
        for col in self.columns.values():
            del col[keep:]

    def events(self, kind: str | None = None) -> list[LogEntry]:
        if kind is None:
            return list(self.log)
        return [e for e in self.log if e.kind == kind]
