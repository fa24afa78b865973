"""Quadratic latency regressors and the per-frame latency arithmetic.

Feature expansion order for n inputs x1..xn is

    [1, x1, ..., xn, x1*x1, x1*x2, ..., x1*xn, x2*x2, ..., xn*xn]

i.e. the constant, the linear terms, then the upper triangle of the outer
product in row-major order. Inputs are min-max scaled to [0, 1] by the
bounds stored in the model before expansion.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ModelMisuseError, ParameterError, SingularFitError

CPU_LEVELS = tuple(range(0, 601, 100))
GPU_LEVELS = (0.0, 0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99)
MB_MAX = 18000.0

DNN_INPUTS = ("nprop", "shape", "height", "width", "cpu", "mb", "gpu")
TRACKER_INPUTS = ("height", "width", "n_obj", "avg_size", "cpu", "mb", "gpu")

# Fixed normalization bounds; inputs absent here are scaled by their training range.
FIXED_BOUNDS = {
    "nprop": (1.0, 100.0),
    "shape": (224.0, 576.0),
    "cpu": (0.0, 600.0),
    "mb": (0.0, MB_MAX),
    "gpu": (0.0, 1.0),
}

DEFAULT_RIDGE = 1e-6


@dataclass(frozen=True, order=True)
class ContentionVector:
    cpu_cores: int = 0
    mb_mbps: float = 0.0
    gpu_util: float = 0.0

    def __post_init__(self):
        problems = contention_violations(self)
        if problems:
            raise ParameterError("; ".join(problems))

    def as_tuple(self) -> tuple:
        return (self.cpu_cores, self.mb_mbps, self.gpu_util)

    def features(self) -> tuple[float, float, float]:
        """The three regression inputs (cpu, mb, gpu) in raw units."""
        return (float(self.cpu_cores), float(self.mb_mbps), float(self.gpu_util))

    def as_row(self) -> dict:
        return {"cpu_cores": self.cpu_cores, "mb_mbps": _fmt(self.mb_mbps),
                "gpu_util": _fmt(self.gpu_util)}

    @classmethod
    def from_row(cls, row) -> "ContentionVector":
        return cls(int(float(row["cpu_cores"])), float(row["mb_mbps"]), float(row["gpu_util"]))

    @property
    def is_zero(self) -> bool:
        return self.cpu_cores == 0 and self.mb_mbps == 0 and self.gpu_util == 0


def _fmt(x: float) -> str:
    return repr(float(x))


def contention_violations(c: ContentionVector) -> list[str]:
    problems = []
    if c.cpu_cores not in CPU_LEVELS:
        problems.append(f"cpu_cores {c.cpu_cores} not in {CPU_LEVELS}")
    if not 0.0 <= c.mb_mbps <= MB_MAX:
        problems.append(f"mb_mbps {c.mb_mbps} outside [0, {MB_MAX:g}]")
    if not any(abs(c.gpu_util - g) < 1e-9 for g in GPU_LEVELS):
        problems.append(f"gpu_util {c.gpu_util} not a discrete level")
    return problems


NO_CONTENTION = ContentionVector()


def n_terms(n: int) -> int:
    return 1 + n + n * (n + 1) // 2


def expand_quadratic(x) -> np.ndarray:
    """Degree-2 expansion of one vector, or row-wise of a 2-D array."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ParameterError("expand_quadratic needs finite inputs")
    single = x.ndim == 1
    X = x[None, :] if single else x
    n = X.shape[1]
    iu, ju = np.triu_indices(n)
    out = np.concatenate([np.ones((X.shape[0], 1)), X, X[:, iu] * X[:, ju]], axis=1)
    return out[0] if single else out


@dataclass(frozen=True)
class QuadraticModel:
    input_names: tuple
    coefficients: tuple
    ridge_lambda: float
    lower: tuple
    upper: tuple

    def __post_init__(self):
        if len(self.coefficients) != n_terms(len(self.input_names)):
            raise ParameterError("coefficient length does not match the expansion size")

    def _scale(self, X: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return (X - lo) / (hi - lo)

    def predict_raw(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.input_names):
            raise ModelMisuseError(
                f"model expects {len(self.input_names)} inputs {self.input_names}, got {X.shape[1]}")
        return expand_quadratic(self._scale(X)) @ np.asarray(self.coefficients)

    def predict(self, X) -> np.ndarray:
        """Predictions clamped at zero."""
        return np.maximum(self.predict_raw(X), 0.0)

    def to_dict(self) -> dict:
        return {
            "input_names": list(self.input_names),
            "lower": list(self.lower),
            "upper": list(self.upper),
            "ridge_lambda": self.ridge_lambda,
            "term_order": "1, x_i, x_i*x_j (i<=j, row-major) on min-max scaled inputs",
            "coefficients": list(self.coefficients),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuadraticModel":
        return cls(tuple(d["input_names"]), tuple(float(c) for c in d["coefficients"]),
                   float(d["ridge_lambda"]), tuple(d["lower"]), tuple(d["upper"]))

    def save(self, path, **extra) -> None:
        Path(path).write_text(json.dumps({**self.to_dict(), **extra}, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "QuadraticModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _bounds(names: Sequence[str], X: np.ndarray):
    lower, upper = [], []
    for j, name in enumerate(names):
        if name in FIXED_BOUNDS:
            lo, hi = FIXED_BOUNDS[name]
        else:
            lo, hi = float(X[:, j].min()), float(X[:, j].max())
            if hi <= lo:
                hi = lo + 1.0
        lower.append(lo)
        upper.append(hi)
    return tuple(lower), tuple(upper)


def fit_quadratic(X, y, ridge_lambda: float = DEFAULT_RIDGE,
                  input_names: Sequence[str] | None = None) -> QuadraticModel:
    """Closed-form ridge least squares on the scaled degree-2 expansion.

    Minimizes mean((A w - y)^2) + ridge_lambda * |w[1:]|^2; the intercept is
    not penalized.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise ParameterError("X and y have different lengths")
    if ridge_lambda < 0:
        raise ParameterError("ridge_lambda must be >= 0")
    names = tuple(input_names) if input_names is not None else tuple(
        f"x{i}" for i in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise ParameterError("input_names length does not match the input arity")
    p = n_terms(X.shape[1])
    if X.shape[0] < p:
        raise ParameterError(f"need at least {p} samples for {X.shape[1]} inputs, got {X.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ParameterError("non-finite training data")
    lower, upper = _bounds(names, X)
    A = expand_quadratic((X - np.asarray(lower)) / (np.asarray(upper) - np.asarray(lower)))
    m = A.shape[0]
    if ridge_lambda == 0:
        if np.linalg.matrix_rank(A) < p:
            raise SingularFitError(
                "design matrix is rank deficient; refit with ridge_lambda > 0")
        w, *_ = np.linalg.lstsq(A, y, rcond=None)
    else:
        penalty = np.full(p, ridge_lambda)
        penalty[0] = 0.0
        G = A.T @ A / m + np.diag(penalty)
        w = np.linalg.solve(G, A.T @ y / m)
    return QuadraticModel(names, tuple(float(v) for v in w), float(ridge_lambda), lower, upper)


def predict_dnn_latency(m: QuadraticModel, nprop, shape, height, width, contention) -> float:
    if tuple(m.input_names) != DNN_INPUTS:
        raise ModelMisuseError(f"not a detector model: inputs {m.input_names}")
    row = [nprop, shape, height, width, *contention.features()]
    return float(m.predict([row])[0])


def predict_tracker_latency(m: QuadraticModel, height, width, n_obj, avg_size, contention) -> float:
    if tuple(m.input_names) != TRACKER_INPUTS:
        raise ModelMisuseError(f"not a tracker model: inputs {m.input_names}")
    row = [height, width, n_obj, avg_size, *contention.features()]
    return float(m.predict([row])[0])


def compose_frame_latency(l_dnn: float, l_tracker: float, si: int) -> float:
    """Per-frame latency with the detector amortized over si frames."""
    if si < 1:
        raise ParameterError(f"si must be >= 1, got {si}")
    return l_dnn / si + l_tracker


def estimate_branch_latency(l_fr: float, l_sw: float, l_sc: float, si: int) -> float:
    """Frame latency plus switching and scheduler overheads amortized over si."""
    if si < 1:
        raise ParameterError(f"si must be >= 1, got {si}")
    return l_fr + (l_sw + l_sc) / si


@dataclass(frozen=True)
class LatencyBreakdown:
    l_dnn: float
    l_tracker: float
    l_fr: float
    l_est: float

    @classmethod
    def compute(cls, l_dnn, l_tracker, si, l_sw=0.0, l_sc=0.0) -> "LatencyBreakdown":
        l_fr = compose_frame_latency(l_dnn, l_tracker, si)
        return cls(l_dnn, l_tracker, l_fr, estimate_branch_latency(l_fr, l_sw, l_sc, si))


def read_training_csv(path, input_names: Sequence[str]):
    """Load (X, y) from a CSV with the input columns plus `latency_ms`."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    missing = [c for c in (*input_names, "latency_ms") if rows and c not in rows[0]]
    if not rows or missing:
        raise ParameterError(f"training CSV missing columns {missing or 'all rows'}")
    X = np.array([[float(r[c]) for c in input_names] for r in rows])
    y = np.array([float(r["latency_ms"]) for r in rows])
    return X, y


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    return math.sqrt(float(np.mean((pred - truth) ** 2)))
