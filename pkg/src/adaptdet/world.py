"""Parametric ground truth standing in for the detector and tracker kernels.

All formulas use scaled contention c = cpu_cores/600, b = mb_mbps/18000,
g = gpu_util and s = shape/576.

Detector latency (ms)::

    l_dnn = (base + per_prop*nprop + per_shape*s) * (1 + gpu_gain*g + cpu_gain*c + mb_gain*b)
            + per_shape2 * s**2

Tracker latency (ms), per tracker kind::

    l_tracker = ds**(-ds_discount) * ((base + per_obj*n_obj) * (1 + cpu_gain*c + mb_gain*b)
                                      + per_area * n_obj * avg_size / 1e4)

Relative accuracy (percent of the base branch), with lsi = ln(si)/ln(100),
shape_deficit = (576 - shape)/352 and nprop_deficit = 1 - ln(nprop)/ln(100)::

    ds_effect  = ds_tradeoff * log2(ds) * (pivot - movement)
    track_loss = lsi * max(0, static_loss[t] + si_movement_penalty*movement*robustness[t]
                              + ds_effect)
    accuracy   = clip(100 - shape_penalty*shape_deficit - nprop_penalty*nprop_deficit
                      - track_loss, 0, 100)

Latency noise is multiplicative, (1 + N(0, latency_sigma)) floored at 0.05;
accuracy noise is additive N(0, accuracy_sigma) and only used by the
profiler. Downsampling costs accuracy below the pivot movement and helps
above it; validation requires 2*ds_tradeoff <= si_movement_penalty *
min(robustness) so accuracy never rises with movement. Every formula is at most degree two in the latency regressors'
inputs, so the quadratic models can represent the noiseless world exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .knobs import TRACKERS, BranchConfig, Tracker
from .latency import MB_MAX, ContentionVector


@dataclass(frozen=True)
class DetectorTruth:
    base_ms: float = 15.0
    per_prop_ms: float = 0.25
    per_shape_ms: float = 40.0
    per_shape2_ms: float = 60.0
    gpu_gain: float = 1.6
    cpu_gain: float = 0.3
    mb_gain: float = 0.4


@dataclass(frozen=True)
class TrackerTruth:
    base_ms: float
    per_obj_ms: float
    per_area_ms: float
    ds_discount: float
    cpu_gain: float = 0.8
    mb_gain: float = 0.6


def _default_trackers():
    return {
        Tracker.MEDIANFLOW: TrackerTruth(3.0, 2.0, 0.5, 0.7),
        Tracker.KCF: TrackerTruth(5.0, 5.0, 1.5, 1.0),
        Tracker.CSRT: TrackerTruth(8.0, 12.0, 3.0, 1.0),
        Tracker.DENSEFLOW: TrackerTruth(20.0, 0.5, 0.2, 1.6),
    }


@dataclass(frozen=True)
class AccuracyTruth:
    shape_penalty: float = 18.0
    nprop_penalty: float = 25.0
    si_movement_penalty: float = 8.0
    ds_tradeoff: float = 1.0
    ds_pivot_px: float = 3.0
    robustness: dict = field(default_factory=lambda: {
        Tracker.MEDIANFLOW: 1.0, Tracker.KCF: 0.85, Tracker.CSRT: 0.6, Tracker.DENSEFLOW: 0.75})
    static_loss: dict = field(default_factory=lambda: {
        Tracker.MEDIANFLOW: 1.5, Tracker.KCF: 2.5, Tracker.CSRT: 1.0, Tracker.DENSEFLOW: 2.0})


@dataclass(frozen=True)
class WorldModelConfig:
    detector: DetectorTruth = field(default_factory=DetectorTruth)
    trackers: dict = field(default_factory=_default_trackers)
    accuracy: AccuracyTruth = field(default_factory=AccuracyTruth)
    latency_sigma: float = 0.02
    accuracy_sigma: float = 1.0

    def validate(self) -> None:
        d = self.detector
        for name, v in asdict(d).items():
            if v < 0:
                raise ParameterError(f"detector.{name} must be >= 0")
        for t in TRACKERS:
            if t not in self.trackers:
                raise ParameterError(f"missing tracker constants for {t.value}")
            for name, v in asdict(self.trackers[t]).items():
                if v < 0:
                    raise ParameterError(f"trackers.{t.value}.{name} must be >= 0")
            if self.trackers[t].per_obj_ms <= 0:
                raise ParameterError(f"trackers.{t.value}.per_obj_ms must be > 0")
        a = self.accuracy
        for name in ("shape_penalty", "nprop_penalty", "si_movement_penalty", "ds_tradeoff"):
            if getattr(a, name) < 0:
                raise ParameterError(f"accuracy.{name} must be >= 0")
        if a.ds_pivot_px <= 0:
            raise ParameterError("accuracy.ds_pivot_px must be > 0")
        if 2 * a.ds_tradeoff > a.si_movement_penalty * min(a.robustness[t] for t in TRACKERS):
            raise ParameterError("accuracy.ds_tradeoff too large: accuracy would rise with "
                                 "movement at ds=4")
        if self.latency_sigma < 0 or self.accuracy_sigma < 0:
            raise ParameterError("noise sigmas must be >= 0")

    def noiseless(self) -> "WorldModelConfig":
        return replace(self, latency_sigma=0.0, accuracy_sigma=0.0)

    def to_dict(self) -> dict:
        return {
            "detector": asdict(self.detector),
            "trackers": {t.value: asdict(self.trackers[t]) for t in TRACKERS},
            "accuracy": {
                **{k: v for k, v in asdict(self.accuracy).items()
                   if k not in ("robustness", "static_loss")},
                "robustness": {t.value: self.accuracy.robustness[t] for t in TRACKERS},
                "static_loss": {t.value: self.accuracy.static_loss[t] for t in TRACKERS},
            },
            "latency_sigma": self.latency_sigma,
            "accuracy_sigma": self.accuracy_sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldModelConfig":
        default = cls()
        det = replace(default.detector, **d.get("detector", {}))
        trackers = dict(default.trackers)
        for name, vals in d.get("trackers", {}).items():
            t = Tracker.parse(name)
            trackers[t] = replace(trackers[t], **vals)
        acc_d = dict(d.get("accuracy", {}))
        rob = dict(default.accuracy.robustness)
        rob.update({Tracker.parse(k): float(v) for k, v in acc_d.pop("robustness", {}).items()})
        stat = dict(default.accuracy.static_loss)
        stat.update({Tracker.parse(k): float(v) for k, v in acc_d.pop("static_loss", {}).items()})
        acc = replace(default.accuracy, robustness=rob, static_loss=stat, **acc_d)
        w = cls(det, trackers, acc, float(d.get("latency_sigma", default.latency_sigma)),
                float(d.get("accuracy_sigma", default.accuracy_sigma)))
        w.validate()
        return w

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "WorldModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _tracker_table(w: WorldModelConfig, attr: str) -> np.ndarray:
    return np.array([getattr(w.trackers[t], attr) for t in TRACKERS])


def dnn_latency(w: WorldModelConfig, nprop, shape, cpu, mb, gpu):
    """Noiseless detector latency; broadcasts over array arguments."""
    d = w.detector
    s = np.asarray(shape, dtype=float) / 576.0
    slowdown = (d.gpu_gain * np.asarray(gpu, dtype=float)
                + d.cpu_gain * np.asarray(cpu, dtype=float) / 600.0
                + d.mb_gain * np.asarray(mb, dtype=float) / MB_MAX)
    core = d.base_ms + d.per_prop_ms * np.asarray(nprop, dtype=float) + d.per_shape_ms * s
    return core * (1.0 + slowdown) + d.per_shape2_ms * s * s


def tracker_latency(w: WorldModelConfig, tracker_idx, ds, n_obj, avg_size, cpu, mb):
    """Noiseless tracker latency; `tracker_idx` indexes TRACKERS."""
    t = np.asarray(tracker_idx, dtype=int)
    base = _tracker_table(w, "base_ms")[t]
    per_obj = _tracker_table(w, "per_obj_ms")[t]
    per_area = _tracker_table(w, "per_area_ms")[t]
    disc = _tracker_table(w, "ds_discount")[t]
    cpu_gain = _tracker_table(w, "cpu_gain")[t]
    mb_gain = _tracker_table(w, "mb_gain")[t]
    n = np.asarray(n_obj, dtype=float)
    slowdown = (cpu_gain * np.asarray(cpu, dtype=float) / 600.0
                + mb_gain * np.asarray(mb, dtype=float) / MB_MAX)
    work = (base + per_obj * n) * (1.0 + slowdown) + per_area * n * np.asarray(avg_size) / 1e4
    return np.asarray(ds, dtype=float) ** (-disc) * work


def accuracy(w: WorldModelConfig, si, shape, nprop, tracker_idx, ds, movement):
    """Noiseless relative accuracy in [0, 100]; broadcasts over arrays."""
    a = w.accuracy
    t = np.asarray(tracker_idx, dtype=int)
    robust = np.array([a.robustness[tr] for tr in TRACKERS])[t]
    static = np.array([a.static_loss[tr] for tr in TRACKERS])[t]
    mov = np.asarray(movement, dtype=float)
    lsi = np.log(np.asarray(si, dtype=float)) / math.log(100.0)
    shape_def = (576.0 - np.asarray(shape, dtype=float)) / 352.0
    nprop_def = 1.0 - np.log(np.asarray(nprop, dtype=float)) / math.log(100.0)
    ds_effect = a.ds_tradeoff * np.log2(np.asarray(ds, dtype=float)) * (a.ds_pivot_px - mov)
    track_loss = lsi * np.maximum(static + a.si_movement_penalty * mov * robust + ds_effect, 0.0)
    acc = 100.0 - a.shape_penalty * shape_def - a.nprop_penalty * nprop_def - track_loss
    return np.clip(acc, 0.0, 100.0)


def latency_noise(w: WorldModelConfig, rng: np.random.Generator, size=None):
    if w.latency_sigma == 0:
        return np.ones(size) if size is not None else 1.0
    return np.maximum(1.0 + w.latency_sigma * rng.standard_normal(size), 0.05)


def frame_rng(seed: int, frame: int) -> np.random.Generator:
    """Independent stream per (seed, frame) so draws never depend on call order."""
    return np.random.default_rng([int(seed), int(frame)])


def world_true_latency(w: WorldModelConfig, b: BranchConfig, f, c: ContentionVector,
                       seed: int | None = None, frame: int = 0) -> tuple[float, float]:
    """Ground-truth (l_dnn, l_tracker) for one frame.

    With `seed=None` or a zero-sigma world the result is the noiseless value.
    """
    cpu, mb, gpu = c.features()
    l_dnn = float(dnn_latency(w, b.nprop, b.shape, cpu, mb, gpu))
    l_tr = float(tracker_latency(w, b.tracker.index, b.ds, f.n_obj, f.avg_size, cpu, mb))
    if seed is not None and w.latency_sigma > 0:
        rng = frame_rng(seed, frame)
        l_dnn *= float(latency_noise(w, rng))
        l_tr *= float(latency_noise(w, rng))
    return l_dnn, l_tr


def world_true_accuracy(w: WorldModelConfig, b: BranchConfig, movement: float) -> float:
    return float(accuracy(w, b.si, b.shape, b.nprop, b.tracker.index, b.ds, movement))
