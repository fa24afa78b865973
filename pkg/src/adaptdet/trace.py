"""Synthetic video traces and the online content-feature extractor."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError

SPEED_CLASSES = {"slow": (0.5, 1.5), "medium": (2.0, 4.0), "fast": (5.0, 8.0)}
# Representative per-frame displacement of each class, used by profiling grids.
SPEED_MIDPOINTS = {k: (lo + hi) / 2 for k, (lo, hi) in SPEED_CLASSES.items()}
DEFAULT_MOVEMENT_WINDOW = 8


@dataclass(frozen=True)
class TrackedObject:
    id: int
    x: float
    y: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Frame:
    height: int
    width: int
    objects: tuple = ()


@dataclass(frozen=True)
class Trace:
    frames: tuple

    def __len__(self):
        return len(self.frames)

    def validate(self) -> None:
        for i, fr in enumerate(self.frames):
            for o in fr.objects:
                if not (0 <= o.x <= fr.width and 0 <= o.y <= fr.height):
                    raise ParameterError(f"frame {i}: object {o.id} center outside the frame")
                if o.w <= 0 or o.h <= 0:
                    raise ParameterError(f"frame {i}: object {o.id} has non-positive size")

    def to_dict(self) -> dict:
        return {"frames": [{"height": f.height, "width": f.width,
                            "objects": [[o.id, o.x, o.y, o.w, o.h] for o in f.objects]}
                           for f in self.frames]}

    @classmethod
    def from_dict(cls, d: dict) -> "Trace":
        frames = tuple(Frame(int(f["height"]), int(f["width"]),
                             tuple(TrackedObject(int(o[0]), *map(float, o[1:])) for o in f["objects"]))
                       for f in d["frames"])
        t = cls(frames)
        t.validate()
        return t

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "Trace":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TraceSpec:
    n_frames: int
    n_objects: int = 4
    speed_class: str = "medium"
    fps: float = 30.0
    height: int = 720
    width: int = 1280
    speed: float | None = None       # px/frame; overrides the class range when set
    jitter: float = 0.1              # velocity jitter as a fraction of speed
    box_range: tuple = (60.0, 160.0)

    @classmethod
    def from_dict(cls, d: dict) -> "TraceSpec":
        d = dict(d)
        if "box_range" in d:
            d["box_range"] = tuple(d["box_range"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["box_range"] = list(self.box_range)
        return d


def _reflect(pos, vel, limit):
    if pos < 0:
        return -pos, -vel
    if pos > limit:
        return 2 * limit - pos, -vel
    return pos, vel


def generate_trace(spec: TraceSpec, seed: int = 0) -> Trace:
    """Objects in linear motion with small velocity jitter, bouncing off the edges."""
    if spec.n_frames < 1:
        raise ParameterError("n_frames must be >= 1")
    if spec.speed_class not in SPEED_CLASSES:
        raise ParameterError(f"speed_class must be one of {sorted(SPEED_CLASSES)}")
    if spec.n_objects < 0:
        raise ParameterError("n_objects must be >= 0")
    rng = np.random.default_rng(seed)
    H, W = spec.height, spec.width
    lo, hi = SPEED_CLASSES[spec.speed_class]
    state = []
    for i in range(spec.n_objects):
        speed = spec.speed if spec.speed is not None else rng.uniform(lo, hi)
        angle = rng.uniform(0, 2 * math.pi)
        bw, bh = rng.uniform(*spec.box_range, size=2)
        state.append([i, rng.uniform(0, W), rng.uniform(0, H),
                      speed * math.cos(angle), speed * math.sin(angle), bw, bh, speed])
    frames = []
    for _ in range(spec.n_frames):
        frames.append(Frame(H, W, tuple(TrackedObject(s[0], s[1], s[2], s[5], s[6]) for s in state)))
        for s in state:
            jit = spec.jitter * s[7]
            vx = s[3] + (rng.normal(0, jit) if jit else 0.0)
            vy = s[4] + (rng.normal(0, jit) if jit else 0.0)
            s[1], s[3] = _reflect(s[1] + vx, s[3], W)
            s[2], s[4] = _reflect(s[2] + vy, s[4], H)
    return Trace(tuple(frames))


@dataclass(frozen=True)
class ContentFeatures:
    height: int
    width: int
    n_obj: int = 0
    avg_size: float = 0.0
    movement: float = 0.0

    @property
    def summed_area(self) -> float:
        return self.n_obj * self.avg_size


def _step_displacements(prev: Frame, cur: Frame) -> list[float]:
    before = {o.id: o for o in prev.objects}
    return [math.hypot(o.x - before[o.id].x, o.y - before[o.id].y)
            for o in cur.objects if o.id in before]


def extract_features(trace: Trace, frame: int,
                     window: int = DEFAULT_MOVEMENT_WINDOW) -> ContentFeatures:
    """Features available when `frame` is about to be processed.

    Height and width come from the current frame. Object count and mean box
    area come from the previous frame (frame 0 uses itself). Movement is the
    mean center displacement over the last `window` steps that end at or
    before the previous frame, counting only objects present on both sides
    of a step.
    """
    if frame < 0:
        raise ParameterError("frame must be >= 0")
    cur = trace.frames[frame]
    last = trace.frames[max(frame - 1, 0)]
    n = len(last.objects)
    avg = float(np.mean([o.area for o in last.objects])) if n else 0.0
    dists = []
    for k in range(max(1, frame - window), frame):
        dists.extend(_step_displacements(trace.frames[k - 1], trace.frames[k]))
    movement = float(np.mean(dists)) if dists else 0.0
    return ContentFeatures(cur.height, cur.width, n, avg, movement)


def feature_series(trace: Trace, window: int = DEFAULT_MOVEMENT_WINDOW) -> list[ContentFeatures]:
    """extract_features for every frame, computed incrementally."""
    steps = [None] + [_step_displacements(trace.frames[k - 1], trace.frames[k])
                      for k in range(1, len(trace))]
    out = []
    for f, cur in enumerate(trace.frames):
        last = trace.frames[max(f - 1, 0)]
        n = len(last.objects)
        avg = float(np.mean([o.area for o in last.objects])) if n else 0.0
        dists = [d for k in range(max(1, f - window), f) for d in steps[k]]
        out.append(ContentFeatures(cur.height, cur.width, n, avg,
                                   float(np.mean(dists)) if dists else 0.0))
    return out


def mean_movement(trace: Trace) -> float:
    """Average per-step displacement across all objects and frames."""
    dists = [d for k in range(1, len(trace))
             for d in _step_displacements(trace.frames[k - 1], trace.frames[k])]
    return float(np.mean(dists)) if dists else 0.0
