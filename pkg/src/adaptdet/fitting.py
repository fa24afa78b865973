"""Fit every predictor from profile records and persist them as a bundle."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .accuracy import LinearAccuracyModel, RegressionTree, fit_linear_matrix, fit_tree_matrix
from .contention import OfflineLatencyLog
from .errors import AdaptDetError, ParameterError
from .knobs import TRACKERS, Tracker
from .latency import DEFAULT_RIDGE, DNN_INPUTS, TRACKER_INPUTS, QuadraticModel, fit_quadratic, rmse
from .profiler import ProfileRecord, build_offline_log, split_records
from .scheduler import LatencyModels

DNN_FILE = "dnn_latency.json"
TREE_FILE = "acc_tree.json"
LINEAR_FILE = "acc_linear.json"
LOG_FILE = "offline_log.csv"
REPORT_FILE = "fit_report.json"


def tracker_file(tracker: Tracker, ds: int) -> str:
    return f"tracker_latency_{tracker.value}_ds{ds}.json"


class FitError(AdaptDetError):
    """A model could not be fitted; `model` names which one."""

    def __init__(self, model: str, reason: str):
        super().__init__(f"{model}: {reason}")
        self.model = model


@dataclass
class ModelBundle:
    latency: LatencyModels
    tree: RegressionTree
    linear: LinearAccuracyModel
    offline_log: OfflineLatencyLog
    report: dict = field(default_factory=dict)

    @property
    def branches(self) -> list:
        return self.offline_log.branches()

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.latency.dnn.save(out / DNN_FILE, model="detector")
        for (t, ds), m in sorted(self.latency.trackers.items(), key=lambda kv: (kv[0][0].index, kv[0][1])):
            m.save(out / tracker_file(t, ds), model="tracker", tracker=t.value, ds=ds)
        self.tree.save(out / TREE_FILE)
        self.linear.save(out / LINEAR_FILE)
        self.offline_log.write_csv(out / LOG_FILE)
        if self.report:
            (out / REPORT_FILE).write_text(json.dumps(self.report, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, model_dir) -> "ModelBundle":
        d = Path(model_dir)
        trackers = {}
        for p in sorted(d.glob("tracker_latency_*.json")):
            meta = json.loads(p.read_text())
            trackers[(Tracker.parse(meta["tracker"]), int(meta["ds"]))] = QuadraticModel.from_dict(meta)
        report = json.loads((d / REPORT_FILE).read_text()) if (d / REPORT_FILE).exists() else {}
        return cls(LatencyModels(QuadraticModel.load(d / DNN_FILE), trackers),
                   RegressionTree.load(d / TREE_FILE), LinearAccuracyModel.load(d / LINEAR_FILE),
                   OfflineLatencyLog.read_csv(d / LOG_FILE), report)


def bundle_exists(model_dir) -> bool:
    d = Path(model_dir)
    return all((d / f).exists() for f in (DNN_FILE, TREE_FILE, LINEAR_FILE, LOG_FILE))


def _dnn_xy(records):
    X = np.array([[r.branch.nprop, r.branch.shape, r.height, r.width, *r.contention.features()]
                  for r in records])
    return X, np.array([r.l_dnn for r in records])


def _tracker_xy(records):
    X = np.array([[r.height, r.width, r.n_obj, r.avg_size, *r.contention.features()]
                  for r in records])
    return X, np.array([r.l_tracker for r in records])


def _baseline_rmse(train_y, val_y) -> float:
    return rmse(np.full(len(val_y), float(np.mean(train_y))), val_y)


def _fit_latency(name, train, val, xy, inputs, ridge):
    if len(train) < 1 + len(inputs) + len(inputs) * (len(inputs) + 1) // 2:
        raise FitError(name, f"too few rows ({len(train)}) for a quadratic model")
    Xt, yt = xy(train)
    try:
        model = fit_quadratic(Xt, yt, ridge, inputs)
    except AdaptDetError as exc:
        raise FitError(name, str(exc)) from exc
    entry = {"n_train": len(train), "n_val": len(val)}
    if val:
        Xv, yv = xy(val)
        entry["rmse"] = rmse(model.predict(Xv), yv)
        entry["baseline_rmse"] = _baseline_rmse(yt, yv)
    return model, entry


def accuracy_table(records: Sequence[ProfileRecord]):
    """Mean relative accuracy per (branch, movement): knob matrix, movement, target."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.branch.sort_key(), r.movement), []).append(r.rel_accuracy)
    keys = sorted(groups)
    K = np.array([k for k, _ in keys], dtype=float).reshape(-1, 5)
    mov = np.array([m for _, m in keys], dtype=float)
    y = np.array([math.fsum(groups[k]) / len(groups[k]) for k in keys])
    return K, mov, y


def branch_holdout_mask(K: np.ndarray, train_fraction: float, seed: int = 0) -> np.ndarray:
    """True for rows whose branch falls in the training share.

    Splitting whole branches keeps every movement variant of a held-out
    branch out of training. With a single branch everything trains.
    """
    keys = sorted({tuple(r) for r in K.tolist()})
    if len(keys) < 2:
        return np.ones(len(K), dtype=bool)
    train_keys, _ = split_records(keys, train_fraction, seed)
    chosen = set(train_keys)
    return np.array([tuple(r) in chosen for r in K.tolist()], dtype=bool)


def fit_bundle(records: Sequence[ProfileRecord], seed: int = 0, train_fraction: float = 0.9,
               ridge: float = DEFAULT_RIDGE, max_depth: int = 8,
               min_samples_leaf: int = 4) -> ModelBundle:
    """Fit latency and accuracy models on a train split and score them on the rest."""
    if len(records) < 2:
        raise FitError("profiles", f"need at least 2 rows, got {len(records)}")
    train, val = split_records(list(records), train_fraction, seed)
    report: dict = {"seed": seed, "train_fraction": train_fraction, "models": {}}

    dnn, report["models"]["dnn_latency"] = _fit_latency(
        "dnn_latency", train, val, _dnn_xy, DNN_INPUTS, ridge)
    trackers = {}
    for t in TRACKERS:
        for ds in sorted({r.branch.ds for r in train if r.branch.tracker is t}):
            name = f"tracker_latency_{t.value}_ds{ds}"
            sub_t = [r for r in train if r.branch.tracker is t and r.branch.ds == ds]
            sub_v = [r for r in val if r.branch.tracker is t and r.branch.ds == ds]
            trackers[(t, ds)], report["models"][name] = _fit_latency(
                name, sub_t, sub_v, _tracker_xy, TRACKER_INPUTS, ridge)

    K, mov, y = accuracy_table(records)
    tr_mask = branch_holdout_mask(K, train_fraction, seed)
    Kt, mt, yt = K[tr_mask], mov[tr_mask], y[tr_mask]
    Kv, mv, yv = K[~tr_mask], mov[~tr_mask], y[~tr_mask]
    try:
        tree = fit_tree_matrix(Kt, yt, max_depth, min_samples_leaf)
    except ParameterError as exc:
        raise FitError("acc_tree", str(exc)) from exc
    try:
        linear = fit_linear_matrix(Kt, mt, yt)
    except AdaptDetError as exc:
        raise FitError("acc_linear", str(exc)) from exc
    base_mse = float(np.mean((yv - yt.mean()) ** 2)) if len(yv) else None
    report["models"]["acc_tree"] = {
        "n_train": len(yt), "n_val": len(yv), "baseline_mse": base_mse,
        "mse": float(np.mean((tree.predict_matrix(Kv) - yv) ** 2)) if len(yv) else None}
    report["models"]["acc_linear"] = {
        "n_train": len(yt), "n_val": len(yv), "baseline_mse": base_mse,
        "mse": float(np.mean((linear.predict_matrix(Kv, mv) - yv) ** 2)) if len(yv) else None}
    return ModelBundle(LatencyModels(dnn, trackers), tree, linear,
                       build_offline_log(records), report)
