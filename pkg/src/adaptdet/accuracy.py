"""Accuracy predictors over relative accuracy (percent of the base branch).

Two models:

* a content-agnostic CART regression tree over the five knobs, and
* a content-aware linear model over the knobs plus recent object movement.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParameterError, SingularFitError
from .knobs import TRACKERS, BranchConfig, Tracker

ACC_MIN, ACC_MAX = 0.0, 120.0
TREE_FEATURES = ("si", "shape", "nprop", "tracker", "ds")
CATEGORICAL = {"tracker"}
LINEAR_FEATURES = ("si", "shape", "nprop", *(f"tracker_{t.value}" for t in TRACKERS),
                   "ds", "movement")
ACCURACY_CSV_FIELDS = ("si", "shape", "nprop", "tracker", "ds", "movement", "rel_accuracy")


def normalize_accuracy(map_abs: float, base_map: float) -> float:
    """Express an absolute mAP as a percentage of the base branch's mAP."""
    if not base_map > 0:
        raise ParameterError(f"base_map must be > 0, got {base_map}")
    return 100.0 * map_abs / base_map


def knob_matrix(branches: Sequence[BranchConfig]) -> np.ndarray:
    """Rows of (si, shape, nprop, tracker index, ds)."""
    return np.array([[b.si, b.shape, b.nprop, b.tracker.index, b.ds] for b in branches],
                    dtype=float).reshape(-1, 5)


# ---------------------------------------------------------------- CART tree

@dataclass
class TreeNode:
    value: float
    n: int
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"value": self.value, "n": self.n}
        name = TREE_FEATURES[self.feature]
        if name in CATEGORICAL:
            op, thr = "==", TRACKERS[int(self.threshold)].value
        else:
            op, thr = "<=", self.threshold
        return {"feature": name, "op": op, "threshold": thr, "n": self.n, "value": self.value,
                "left": self.left.to_dict(), "right": self.right.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "feature" not in d:
            return cls(value=float(d["value"]), n=int(d.get("n", 0)))
        j = TREE_FEATURES.index(d["feature"])
        thr = d["threshold"]
        thr = float(Tracker.parse(thr).index) if d["feature"] in CATEGORICAL else float(thr)
        return cls(value=float(d.get("value", 0.0)), n=int(d.get("n", 0)), feature=j,
                   threshold=thr, left=cls.from_dict(d["left"]), right=cls.from_dict(d["right"]))


@dataclass
class RegressionTree:
    root: TreeNode
    max_depth: int = 8
    min_samples_leaf: int = 4

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, 5)
        out = np.empty(len(X))
        self._route(self.root, X, np.arange(len(X)), out)
        return out

    def _route(self, node, X, idx, out):
        if node.is_leaf or len(idx) == 0:
            out[idx] = node.value
            return
        col = X[idx, node.feature]
        if TREE_FEATURES[node.feature] in CATEGORICAL:
            go_left = col == node.threshold
        else:
            go_left = col <= node.threshold
        self._route(node.left, X, idx[go_left], out)
        self._route(node.right, X, idx[~go_left], out)

    def predict(self, branches: Sequence[BranchConfig]) -> np.ndarray:
        return self.predict_matrix(knob_matrix(branches))

    def depth(self) -> int:
        return self.root.depth()

    def to_dict(self) -> dict:
        return {"kind": "cart_regression_tree", "features": list(TREE_FEATURES),
                "max_depth": self.max_depth, "min_samples_leaf": self.min_samples_leaf,
                "tree": self.root.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(TreeNode.from_dict(d["tree"]), int(d["max_depth"]), int(d["min_samples_leaf"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "RegressionTree":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _improves(sse: float, best: float) -> bool:
    # relative margin so rounding noise cannot break the feature-order tie rule
    return math.isinf(best) or sse < best - 1e-9 * (1.0 + abs(best))


def _best_split(X, y, min_leaf):
    """Lowest-SSE split; ties go to the lower feature index, then threshold."""
    n = len(y)
    best = (math.inf, None, None)
    for j in range(X.shape[1]):
        x = X[:, j]
        if TREE_FEATURES[j] in CATEGORICAL:
            tot, tot2 = y.sum(), (y * y).sum()
            for k in np.unique(x):
                mask = x == k
                nl = int(mask.sum())
                if nl < min_leaf or n - nl < min_leaf:
                    continue
                yl = y[mask]
                sl, s2l = yl.sum(), (yl * yl).sum()
                sse = (s2l - sl * sl / nl) + ((tot2 - s2l) - (tot - sl) ** 2 / (n - nl))
                if _improves(sse, best[0]):
                    best = (sse, j, float(k))
            continue
        order = np.argsort(x, kind="stable")
        xs, ys = x[order], y[order]
        cs, cs2 = np.cumsum(ys), np.cumsum(ys * ys)
        nl = np.arange(1, n)
        valid = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not valid.any():
            continue
        sl, s2l = cs[:-1], cs2[:-1]
        sr, s2r = cs[-1] - sl, cs2[-1] - s2l
        sse = (s2l - sl * sl / nl) + (s2r - sr * sr / (n - nl))
        sse = np.where(valid, sse, np.inf)
        i = int(np.argmin(sse))
        if _improves(float(sse[i]), best[0]):
            best = (float(sse[i]), j, float(xs[i]))
    return best


def _grow(X, y, depth, max_depth, min_leaf) -> TreeNode:
    node = TreeNode(value=float(y.mean()), n=len(y))
    if depth >= max_depth or len(y) < 2 * min_leaf:
        return node
    parent_sse = float(((y - y.mean()) ** 2).sum())
    if parent_sse <= 1e-12 * max(1.0, float((y * y).sum())):
        return node
    sse, j, thr = _best_split(X, y, min_leaf)
    if j is None or sse >= parent_sse - 1e-12 * max(1.0, parent_sse):
        return node
    mask = X[:, j] == thr if TREE_FEATURES[j] in CATEGORICAL else X[:, j] <= thr
    node.feature, node.threshold = j, thr
    node.left = _grow(X[mask], y[mask], depth + 1, max_depth, min_leaf)
    node.right = _grow(X[~mask], y[~mask], depth + 1, max_depth, min_leaf)
    return node


def fit_tree_matrix(X, y, max_depth: int = 8, min_samples_leaf: int = 4) -> RegressionTree:
    X = np.asarray(X, dtype=float).reshape(-1, 5)
    y = np.asarray(y, dtype=float).ravel()
    if len(y) == 0:
        raise ParameterError("fit_tree needs at least one record")
    if max_depth < 0 or min_samples_leaf < 1:
        raise ParameterError("max_depth must be >= 0 and min_samples_leaf >= 1")
    return RegressionTree(_grow(X, y, 0, max_depth, min_samples_leaf), max_depth, min_samples_leaf)


def fit_tree(records: Sequence[tuple[BranchConfig, float]], max_depth: int = 8,
             min_samples_leaf: int = 4) -> RegressionTree:
    """CART on (branch, relative accuracy) pairs with MSE splitting."""
    if not records:
        raise ParameterError("fit_tree needs at least one record")
    return fit_tree_matrix(knob_matrix([b for b, _ in records]), [a for _, a in records],
                           max_depth, min_samples_leaf)


def predict_tree(tree: RegressionTree, b: BranchConfig) -> float:
    return float(tree.predict([b])[0])


# ---------------------------------------------------------- linear model

# si and nprop are log-spaced knobs, so they are scaled on a log axis.
_LOG_FEATURES = {"si", "nprop"}
_KNOB_BOUNDS = {"si": (1.0, 100.0), "shape": (224.0, 576.0), "nprop": (1.0, 100.0),
                "ds": (1.0, 4.0)}


def _scale_knob(name, v):
    lo, hi = _KNOB_BOUNDS[name]
    if name in _LOG_FEATURES:
        return np.log(v / lo) / math.log(hi / lo)
    return (v - lo) / (hi - lo)


def linear_design(K: np.ndarray, movement, movement_scale: float) -> np.ndarray:
    """Nine normalized features per row: si, shape, nprop, tracker one-hot x4, ds, movement."""
    K = np.asarray(K, dtype=float).reshape(-1, 5)
    m = np.broadcast_to(np.asarray(movement, dtype=float), (len(K),))
    onehot = (K[:, 3:4] == np.arange(len(TRACKERS))[None, :]).astype(float)
    return np.column_stack([
        _scale_knob("si", K[:, 0]), _scale_knob("shape", K[:, 1]),
        _scale_knob("nprop", K[:, 2]), onehot, _scale_knob("ds", K[:, 4]),
        m / movement_scale,
    ])


@dataclass(frozen=True)
class LinearAccuracyModel:
    weights: tuple          # nine feature weights, LINEAR_FEATURES order
    bias: float
    movement_scale: float   # movement is divided by this before weighting

    def predict_matrix(self, K, movement) -> np.ndarray:
        raw = linear_design(K, movement, self.movement_scale) @ np.asarray(self.weights) + self.bias
        return np.clip(raw, ACC_MIN, ACC_MAX)

    def predict(self, branches: Sequence[BranchConfig], movement) -> np.ndarray:
        return self.predict_matrix(knob_matrix(branches), movement)

    def to_dict(self) -> dict:
        return {"kind": "linear_content_aware",
                "weights": dict(zip(LINEAR_FEATURES, self.weights)),
                "bias": self.bias, "movement_scale": self.movement_scale,
                "scaling": {"si": "log(si)/log(100)", "nprop": "log(nprop)/log(100)",
                            "shape": "(shape-224)/352", "ds": "(ds-1)/3",
                            "movement": "movement/movement_scale"}}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearAccuracyModel":
        return cls(tuple(float(d["weights"][k]) for k in LINEAR_FEATURES), float(d["bias"]),
                   float(d["movement_scale"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "LinearAccuracyModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_linear_matrix(K, movement, y) -> LinearAccuracyModel:
    K = np.asarray(K, dtype=float).reshape(-1, 5)
    movement = np.asarray(movement, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(y) < len(LINEAR_FEATURES) + 2:
        raise ParameterError(f"need at least {len(LINEAR_FEATURES) + 2} records, got {len(y)}")
    scale = float(movement.max()) if movement.size and movement.max() > 0 else 1.0
    D = linear_design(K, movement, scale)
    # Constant columns carry no information and absent trackers get zero
    # weight; the first present tracker is the one-hot reference level.
    cols = []
    trackers = list(range(3, 7))
    present = [c for c in trackers if D[:, c].any()]
    for c in range(D.shape[1]):
        if c in trackers:
            if c in present[1:]:
                cols.append(c)
        elif np.ptp(D[:, c]) > 0:
            cols.append(c)
    A = np.column_stack([np.ones(len(y)), D[:, cols]])
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise SingularFitError("linear accuracy design is rank deficient")
    w, *_ = np.linalg.lstsq(A, y, rcond=None)
    weights = np.zeros(D.shape[1])
    weights[cols] = w[1:]
    return LinearAccuracyModel(tuple(float(v) for v in weights), float(w[0]), scale)


def fit_linear_content_aware(records: Sequence[tuple[BranchConfig, float, float]]
                             ) -> LinearAccuracyModel:
    """Least squares on (branch, movement, relative accuracy) triples."""
    if len(records) < len(LINEAR_FEATURES) + 2:
        raise ParameterError(f"need at least {len(LINEAR_FEATURES) + 2} records")
    return fit_linear_matrix(knob_matrix([r[0] for r in records]),
                             [r[1] for r in records], [r[2] for r in records])


def predict_accuracy(model: LinearAccuracyModel, b: BranchConfig, movement: float) -> float:
    return float(model.predict([b], movement)[0])


def read_accuracy_csv(path):
    """Load (knob matrix, movement, rel_accuracy) from a training CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or any(c not in rows[0] for c in ACCURACY_CSV_FIELDS):
        raise ParameterError(f"accuracy CSV needs columns {ACCURACY_CSV_FIELDS}")
    K = knob_matrix([BranchConfig.from_row(r) for r in rows])
    return (K, np.array([float(r["movement"]) for r in rows]),
            np.array([float(r["rel_accuracy"]) for r in rows]))
