"""Offline profiling campaigns against the world model."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import world as wm
from .contention import OfflineLatencyLog
from .errors import ParameterError
from .knobs import BranchConfig, KnobDomains, enumerate_branches, sample_branches
from .latency import ContentionVector
from .trace import SPEED_MIDPOINTS

PROFILE_FIELDS = ("si", "shape", "nprop", "tracker", "ds", "cpu_cores", "mb_mbps", "gpu_util",
                  "height", "width", "n_obj", "avg_size", "movement",
                  "l_dnn_ms", "l_tracker_ms", "rel_accuracy")


@dataclass(frozen=True, slots=True)
class ProfileRecord:
    branch: BranchConfig
    contention: ContentionVector
    height: int
    width: int
    n_obj: int
    avg_size: float
    movement: float
    l_dnn: float
    l_tracker: float
    rel_accuracy: float

    @property
    def frame_latency(self) -> float:
        return self.l_dnn / self.branch.si + self.l_tracker

    def as_row(self) -> dict:
        return {**self.branch.as_row(), **self.contention.as_row(),
                "height": self.height, "width": self.width, "n_obj": self.n_obj,
                "avg_size": repr(float(self.avg_size)), "movement": repr(float(self.movement)),
                "l_dnn_ms": repr(float(self.l_dnn)), "l_tracker_ms": repr(float(self.l_tracker)),
                "rel_accuracy": repr(float(self.rel_accuracy))}

    @classmethod
    def from_row(cls, r) -> "ProfileRecord":
        return cls(BranchConfig.from_row(r), ContentionVector.from_row(r), int(r["height"]),
                   int(r["width"]), int(r["n_obj"]), float(r["avg_size"]), float(r["movement"]),
                   float(r["l_dnn_ms"]), float(r["l_tracker_ms"]), float(r["rel_accuracy"]))


def _default_levels():
    gpu = [ContentionVector(0, 0.0, g) for g in
           (0.0, 0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99)]
    cpu_mb = [ContentionVector(200, 1.0, 0.0), ContentionVector(400, 1.0, 0.0),
              ContentionVector(600, 3600.0, 0.0)]
    return tuple(gpu + cpu_mb)


@dataclass(frozen=True)
class SamplingPlan:
    branch_fraction: float = 0.02
    contention_levels: tuple = field(default_factory=_default_levels)
    n_obj_values: tuple = (1, 4, 7)
    avg_size_values: tuple = (4000.0, 12000.0, 20000.0)
    movement_classes: tuple = ("slow", "medium", "fast")
    frame_sizes: tuple = ((720, 1280),)
    repetitions: int = 1
    seed: int = 0
    domains: KnobDomains = field(default_factory=KnobDomains)

    def validate(self) -> None:
        if not 0.0 < self.branch_fraction <= 1.0:
            raise ParameterError("branch_fraction must be in (0, 1]")
        if self.repetitions < 1:
            raise ParameterError("repetitions must be >= 1")
        for name in ("contention_levels", "n_obj_values", "avg_size_values",
                     "movement_classes", "frame_sizes"):
            if not getattr(self, name):
                raise ParameterError(f"sampling plan grid '{name}' is empty")
        unknown = [m for m in self.movement_classes
                   if not isinstance(m, (int, float)) and m not in SPEED_MIDPOINTS]
        if unknown:
            raise ParameterError(f"unknown movement classes {unknown}")
        self.domains.validate()

    @property
    def movement_values(self) -> tuple:
        return tuple(float(SPEED_MIDPOINTS[m]) if isinstance(m, str) else float(m)
                     for m in self.movement_classes)

    def branches(self) -> list[BranchConfig]:
        return sample_branches(enumerate_branches(self.domains), self.branch_fraction, self.seed)

    def content_cells(self) -> int:
        return (len(self.frame_sizes) * len(self.n_obj_values) * len(self.avg_size_values)
                * len(self.movement_classes))

    def expected_records(self) -> int:
        return (len(self.branches()) * len(self.contention_levels) * self.content_cells()
                * self.repetitions)

    def to_dict(self) -> dict:
        return {
            "branch_fraction": self.branch_fraction,
            "contention_levels": [dict(zip(("cpu_cores", "mb_mbps", "gpu_util"), c.as_tuple()))
                                  for c in self.contention_levels],
            "n_obj_values": list(self.n_obj_values),
            "avg_size_values": list(self.avg_size_values),
            "movement_classes": list(self.movement_classes),
            "frame_sizes": [list(s) for s in self.frame_sizes],
            "repetitions": self.repetitions,
            "seed": self.seed,
            "domains": self.domains.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingPlan":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ParameterError(f"unknown sampling plan keys {sorted(extra)}")
        kw = dict(d)
        if "contention_levels" in kw:
            kw["contention_levels"] = tuple(
                ContentionVector(int(c.get("cpu_cores", 0)), float(c.get("mb_mbps", 0.0)),
                                 float(c.get("gpu_util", 0.0))) for c in kw["contention_levels"])
        for name in ("n_obj_values", "avg_size_values", "movement_classes"):
            if name in kw:
                kw[name] = tuple(kw[name])
        if "frame_sizes" in kw:
            kw["frame_sizes"] = tuple(tuple(int(v) for v in s) for s in kw["frame_sizes"])
        if "domains" in kw:
            kw["domains"] = KnobDomains.from_dict(kw["domains"])
        plan = cls(**kw)
        plan.validate()
        return plan

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SamplingPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))


def collect_profiles(plan: SamplingPlan, world: wm.WorldModelConfig) -> list[ProfileRecord]:
    """Evaluate the world model on every cell of the plan, in plan order.

    Cells iterate branch-major, then contention level, frame size, object
    count, object size, movement and repetition.
    """
    plan.validate()
    world.validate()
    branches = plan.branches()
    levels = list(plan.contention_levels)
    sizes = list(plan.frame_sizes)
    nobjs = list(plan.n_obj_values)
    areas = list(plan.avg_size_values)
    moves = list(plan.movement_values)
    dims = (len(branches), len(levels), len(sizes), len(nobjs), len(areas), len(moves),
            plan.repetitions)
    ib, il, iz, io, ia, im, _ = (g.ravel() for g in np.indices(dims))
    n = ib.size

    knob = np.array([[b.si, b.shape, b.nprop, b.tracker.index, b.ds] for b in branches])
    cont = np.array([c.features() for c in levels])
    si, shape, nprop, trk, ds = (knob[ib, k] for k in range(5))
    cpu, mb, gpu = (cont[il, k] for k in range(3))
    n_obj = np.asarray(nobjs, dtype=float)[io]
    avg = np.asarray(areas, dtype=float)[ia]
    mov = np.asarray(moves, dtype=float)[im]

    rng = np.random.default_rng(plan.seed)
    l_dnn = wm.dnn_latency(world, nprop, shape, cpu, mb, gpu) * wm.latency_noise(world, rng, n)
    l_tr = (wm.tracker_latency(world, trk, ds, n_obj, avg, cpu, mb)
            * wm.latency_noise(world, rng, n))
    acc = wm.accuracy(world, si, shape, nprop, trk, ds, mov)
    if world.accuracy_sigma > 0:
        acc = acc + world.accuracy_sigma * rng.standard_normal(n)
    acc = np.clip(acc, 0.0, 120.0)

    return [ProfileRecord(branches[ib[k]], levels[il[k]], sizes[iz[k]][0], sizes[iz[k]][1],
                          int(nobjs[io[k]]), float(avg[k]), float(mov[k]),
                          float(l_dnn[k]), float(l_tr[k]), float(acc[k]))
            for k in range(n)]


def split_records(records: Sequence, train_fraction: float, seed: int = 0):
    """Deterministic disjoint (train, validation) split preserving input order."""
    if not 0.0 < train_fraction < 1.0:
        raise ParameterError("train_fraction must be in (0, 1)")
    n = len(records)
    if n < 2:
        raise ParameterError("need at least 2 records to split")
    n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    val_idx = np.sort(perm[n_train:])
    return [records[i] for i in train_idx], [records[i] for i in val_idx]


def build_offline_log(records: Sequence[ProfileRecord]) -> OfflineLatencyLog:
    """Mean composed frame latency per (branch, contention level)."""
    if not records:
        raise ParameterError("build_offline_log needs at least one record")
    sums: dict = {}
    for r in records:
        key = (r.branch, r.contention)
        s = sums.setdefault(key, [])
        s.append(r.frame_latency)
    # fsum keeps the mean independent of record order.
    return OfflineLatencyLog({k: math.fsum(v) / len(v) for k, v in sums.items()})


def write_profiles_csv(records: Sequence[ProfileRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PROFILE_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow(r.as_row())


def read_profiles_csv(path) -> list[ProfileRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PROFILE_FIELDS if c not in (reader.fieldnames or ())]
        if missing:
            raise ParameterError(f"profile CSV missing columns {missing}")
        return [ProfileRecord.from_row(r) for r in reader]
