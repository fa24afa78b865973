"""Contention schedules, the offline latency log and the log-based sensor."""

from __future__ import annotations

import bisect
import csv
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ParameterError, SensorUnavailableError
from .knobs import BRANCH_FIELDS, BranchConfig
from .latency import NO_CONTENTION, ContentionVector

DEFAULT_SENSOR_WINDOW = 8
LOG_FIELDS = (*BRANCH_FIELDS, "cpu_cores", "mb_mbps", "gpu_util", "mean_latency_ms")


@dataclass(frozen=True)
class ContentionSchedule:
    entries: tuple  # of (start_frame, ContentionVector)

    def __post_init__(self):
        if not self.entries:
            raise ParameterError("contention schedule needs at least one entry")
        starts = [s for s, _ in self.entries]
        if starts[0] != 0:
            raise ParameterError("contention schedule must start at frame 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ParameterError("contention schedule start frames must strictly increase")

    @classmethod
    def constant(cls, level: ContentionVector = NO_CONTENTION) -> "ContentionSchedule":
        return cls(((0, level),))

    def to_list(self) -> list:
        return [{"start_frame": s, **{k: v for k, v in zip(
            ("cpu_cores", "mb_mbps", "gpu_util"), c.as_tuple())}} for s, c in self.entries]

    @classmethod
    def from_list(cls, items: list) -> "ContentionSchedule":
        return cls(tuple((int(d["start_frame"]),
                          ContentionVector(int(d.get("cpu_cores", 0)), float(d.get("mb_mbps", 0.0)),
                                           float(d.get("gpu_util", 0.0))))
                         for d in items))


def level_at(schedule: ContentionSchedule, frame: int) -> ContentionVector:
    """Level of the last entry starting at or before `frame`."""
    starts = [s for s, _ in schedule.entries]
    return schedule.entries[bisect.bisect_right(starts, frame) - 1][1]


@dataclass
class OfflineLatencyLog:
    """Mean observed frame latency per (branch, contention level)."""

    entries: dict = field(default_factory=dict)  # (BranchConfig, ContentionVector) -> ms
    _by_branch: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for key, v in self.entries.items():
            if not v > 0:
                raise ParameterError(f"log latency must be > 0, got {v} for {key}")

    def _index(self) -> dict:
        if self._by_branch is None:
            idx = {}
            for (b, c), v in self.entries.items():
                idx.setdefault(b, []).append((c, v))
            for b in idx:
                idx[b].sort()
            self._by_branch = idx
        return self._by_branch

    def levels_for(self, b: BranchConfig) -> list:
        return self._index().get(b, [])

    def branches(self) -> list:
        return sorted(self._index())

    def __len__(self):
        return len(self.entries)

    def write_csv(self, path) -> None:
        rows = sorted(self.entries.items(), key=lambda kv: (kv[0][0].sort_key(), kv[0][1]))
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
            w.writeheader()
            for (b, c), v in rows:
                w.writerow({**b.as_row(), **c.as_row(), "mean_latency_ms": repr(float(v))})

    @classmethod
    def read_csv(cls, path) -> "OfflineLatencyLog":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in LOG_FIELDS if c not in (reader.fieldnames or ())]
            if missing:
                raise ParameterError(f"offline log CSV missing columns {missing}")
            return cls({(BranchConfig.from_row(r), ContentionVector.from_row(r)):
                        float(r["mean_latency_ms"]) for r in reader})


class SensorState:
    """Ring buffer of recent frame latencies observed on the current branch."""

    def __init__(self, window: int = DEFAULT_SENSOR_WINDOW):
        if window < 1:
            raise ParameterError("sensor window must be >= 1")
        self.window = window
        self.buffer: deque = deque(maxlen=window)
        self.branch: BranchConfig | None = None

    def observe(self, branch: BranchConfig, latency_ms: float) -> None:
        if branch != self.branch:
            self.buffer.clear()
            self.branch = branch
        self.buffer.append(float(latency_ms))

    def extend(self, values: Iterable[float]) -> None:
        self.buffer.extend(float(v) for v in values)

    def mean(self) -> float:
        return float(np.mean(self.buffer))

    def __len__(self):
        return len(self.buffer)


def sense_contention(log: OfflineLatencyLog, state: SensorState,
                     current: BranchConfig) -> ContentionVector:
    """Nearest logged level to the mean observed latency of `current`.

    Exact distance ties resolve to the lexicographically smallest
    (cpu, mb, gpu) vector, which acts as the cluster representative.
    """
    levels = log.levels_for(current)
    if not levels:
        raise SensorUnavailableError(f"no offline log entries for branch {current.key}")
    if len(state) == 0:
        raise ParameterError("sensor state is empty")
    observed = state.mean()
    best_d, best_c = None, None
    for c, v in levels:  # ascending in c, so the first minimum is the smallest vector
        d = abs(observed - v)
        if best_d is None or d < best_d:
            best_d, best_c = d, c
    return best_c


def contention_grid(cpu=(0,), mb=(0.0,), gpu=(0.0,)) -> list[ContentionVector]:
    return [ContentionVector(c, m, g) for c in cpu for m in mb for g in gpu]


def load_schedule_json(path) -> ContentionSchedule:
    return ContentionSchedule.from_list(json.loads(Path(path).read_text()))
