"""The five-knob approximation space: branch records, domains, enumeration
and deterministic subsampling."""

from __future__ import annotations

import csv
import enum
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DomainError, ParameterError

SI_PRESET = (1, 2, 4, 8, 20, 50, 100)
SHAPE_MIN, SHAPE_MAX, SHAPE_STEP = 224, 576, 16
NPROP_MIN, NPROP_MAX = 1, 100
DS_PRESET = (1, 2, 4)
DEFAULT_NPROP = (1, 3, 5, 10, 20, 50, 100)

BRANCH_FIELDS = ("si", "shape", "nprop", "tracker", "ds")


class Tracker(str, enum.Enum):
    MEDIANFLOW = "MedianFlow"
    KCF = "KCF"
    CSRT = "CSRT"
    DENSEFLOW = "DenseFlow"

    @property
    def index(self) -> int:
        return _TRACKER_ORDER[self]

    @classmethod
    def parse(cls, value) -> "Tracker":
        if isinstance(value, Tracker):
            return value
        for t in cls:
            if str(value).lower() == t.value.lower() or str(value).upper() == t.name:
                return t
        raise DomainError("tracker", f"unknown tracker {value!r}")


_TRACKER_ORDER = {t: i for i, t in enumerate(Tracker)}
TRACKERS = tuple(Tracker)


@dataclass(frozen=True)
class BranchConfig:
    """One approximation branch."""

    si: int
    shape: int
    nprop: int
    tracker: Tracker
    ds: int

    def __post_init__(self):
        if not isinstance(self.tracker, Tracker):
            object.__setattr__(self, "tracker", Tracker.parse(self.tracker))

    def sort_key(self) -> tuple:
        return (self.si, self.shape, self.nprop, self.tracker.index, self.ds)

    def __lt__(self, other: "BranchConfig") -> bool:
        return self.sort_key() < other.sort_key()

    @property
    def key(self) -> str:
        return f"{self.si}-{self.shape}-{self.nprop}-{self.tracker.value}-{self.ds}"

    def as_row(self) -> dict:
        return {"si": self.si, "shape": self.shape, "nprop": self.nprop,
                "tracker": self.tracker.value, "ds": self.ds}

    @classmethod
    def from_row(cls, row) -> "BranchConfig":
        return cls(int(row["si"]), int(row["shape"]), int(row["nprop"]),
                   Tracker.parse(row["tracker"]), int(row["ds"]))


BASE_BRANCH_KNOBS = (1, 576, 100)


def is_base(b: BranchConfig) -> bool:
    return (b.si, b.shape, b.nprop) == BASE_BRANCH_KNOBS


def validate_branch(b: BranchConfig) -> list[str]:
    """Return every invariant `b` violates; an empty list means valid."""
    problems = []
    if b.si not in SI_PRESET:
        problems.append("si not in preset set")
    if b.shape % SHAPE_STEP != 0:
        problems.append("shape not multiple of 16")
    if not SHAPE_MIN <= b.shape <= SHAPE_MAX:
        problems.append("shape outside [224, 576]")
    if not NPROP_MIN <= b.nprop <= NPROP_MAX:
        problems.append("nprop outside [1, 100]")
    if not isinstance(b.tracker, Tracker):
        problems.append("tracker unknown")
    if b.ds not in DS_PRESET:
        problems.append("ds not in {1, 2, 4}")
    return problems


def _default_shapes():
    return tuple(range(SHAPE_MIN, SHAPE_MAX + 1, SHAPE_STEP))


@dataclass(frozen=True)
class KnobDomains:
    si_values: tuple = SI_PRESET
    shape_values: tuple = field(default_factory=_default_shapes)
    nprop_values: tuple = DEFAULT_NPROP
    tracker_values: tuple = TRACKERS
    ds_values: tuple = DS_PRESET

    def __post_init__(self):
        for name in ("si_values", "shape_values", "nprop_values", "ds_values"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        object.__setattr__(self, "tracker_values",
                           tuple(Tracker.parse(t) for t in self.tracker_values))

    def validate(self) -> None:
        checks = {
            "si": (self.si_values, lambda v: v in SI_PRESET, "not in preset set"),
            "shape": (self.shape_values,
                      lambda v: v % SHAPE_STEP == 0 and SHAPE_MIN <= v <= SHAPE_MAX,
                      "must be a multiple of 16 in [224, 576]"),
            "nprop": (self.nprop_values, lambda v: NPROP_MIN <= v <= NPROP_MAX,
                      "must be in [1, 100]"),
            "ds": (self.ds_values, lambda v: v in DS_PRESET, "must be 1, 2 or 4"),
        }
        for knob, (values, ok, msg) in checks.items():
            if not values:
                raise DomainError(knob, "empty domain")
            bad = [v for v in values if not ok(v)]
            if bad:
                raise DomainError(knob, f"values {bad} {msg}")
            if list(values) != sorted(set(values)):
                raise DomainError(knob, "values must be sorted ascending without duplicates")
        trackers = self.tracker_values
        if not trackers:
            raise DomainError("tracker", "empty domain")
        if list(trackers) != sorted(set(trackers), key=lambda t: t.index):
            raise DomainError("tracker", "trackers must be unique and in declaration order")

    @property
    def size(self) -> int:
        return (len(self.si_values) * len(self.shape_values) * len(self.nprop_values)
                * len(self.tracker_values) * len(self.ds_values))

    def to_dict(self) -> dict:
        return {
            "si_values": list(self.si_values),
            "shape_values": list(self.shape_values),
            "nprop_values": list(self.nprop_values),
            "tracker_values": [t.value for t in self.tracker_values],
            "ds_values": list(self.ds_values),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnobDomains":
        defaults = cls()
        kwargs = {name: d.get(name, getattr(defaults, name))
                  for name in ("si_values", "shape_values", "nprop_values",
                               "tracker_values", "ds_values")}
        return cls(**kwargs)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "KnobDomains":
        return cls.from_dict(json.loads(Path(path).read_text()))


def enumerate_branches(domains: KnobDomains | None = None) -> list[BranchConfig]:
    """Cartesian product of the domains in (si, shape, nprop, tracker, ds) order."""
    domains = domains or KnobDomains()
    domains.validate()
    return [BranchConfig(*combo) for combo in itertools.product(
        domains.si_values, domains.shape_values, domains.nprop_values,
        domains.tracker_values, domains.ds_values)]


def _rank(b: BranchConfig, seed: int) -> bytes:
    return hashlib.blake2b(f"{seed}|{b.key}".encode(), digest_size=16).digest()


def sample_branches(branches: Sequence[BranchConfig], fraction: float,
                    seed: int = 0) -> list[BranchConfig]:
    """Keep the ceil(fraction*N) branches with the lowest seeded hash rank.

    The base branch is always kept when present. Input order is preserved,
    and for a fixed seed a larger fraction yields a superset.
    """
    if not branches:
        raise ParameterError("sample_branches needs a non-empty branch list")
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must be in (0, 1], got {fraction}")
    n = len(branches)
    k = min(n, math.ceil(fraction * n - 1e-9))
    if k == n:
        return list(branches)
    base = [i for i, b in enumerate(branches) if is_base(b)]
    keep = set(base[:1])
    others = sorted((i for i in range(n) if i not in keep),
                    key=lambda i: _rank(branches[i], seed))
    keep.update(others[:k - len(keep)])
    return [branches[i] for i in sorted(keep)]


def write_branches_csv(branches: Iterable[BranchConfig], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BRANCH_FIELDS, lineterminator="\n")
        w.writeheader()
        for b in branches:
            w.writerow(b.as_row())


def read_branches_csv(path) -> list[BranchConfig]:
    with open(path, newline="") as fh:
        return [BranchConfig.from_row(row) for row in csv.DictReader(fh)]
