"""Branch selection under a latency requirement, and the scheduling window."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .accuracy import LinearAccuracyModel, RegressionTree, knob_matrix
from .errors import ModelMisuseError, ParameterError
from .knobs import BranchConfig, Tracker
from .latency import DNN_INPUTS, TRACKER_INPUTS, ContentionVector, QuadraticModel

MIN_WINDOW = 8
SWITCH_OVERHEAD_MS = 12.0
SCHEDULER_OVERHEAD_MS = 11.09


@dataclass(frozen=True)
class OverheadConstants:
    l_sw: float = SWITCH_OVERHEAD_MS
    l_sc: float = SCHEDULER_OVERHEAD_MS

    def __post_init__(self):
        if self.l_sw < 0 or self.l_sc < 0:
            raise ParameterError("overheads must be >= 0")


@dataclass(frozen=True)
class SchedulerDecision:
    branch: BranchConfig
    est_latency: float
    est_accuracy: float
    feasible_count: int
    decided_at_frame: int = 0
    l_req: float = float("nan")

    @property
    def window(self) -> int:
        return scheduling_window(self.branch.si)


def scheduling_window(si: int) -> int:
    return max(MIN_WINDOW, si)


def should_schedule(frame: int, last: SchedulerDecision | None) -> bool:
    if last is None:
        return True
    return frame - last.decided_at_frame >= last.window


@dataclass
class CandidateSet:
    """Per-branch estimates, held as parallel arrays."""

    branches: list
    est_accuracy: np.ndarray
    l_fr: np.ndarray
    l_dnn: np.ndarray = None
    l_tracker: np.ndarray = None
    _rank: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.est_accuracy = np.asarray(self.est_accuracy, dtype=float)
        self.l_fr = np.asarray(self.l_fr, dtype=float)
        self.si = np.array([b.si for b in self.branches], dtype=float)

    def __len__(self):
        return len(self.branches)

    @property
    def rank(self) -> np.ndarray:
        """Position of each branch in lexicographic knob order."""
        if self._rank is None:
            order = sorted(range(len(self.branches)), key=lambda i: self.branches[i].sort_key())
            self._rank = np.empty(len(order), dtype=int)
            self._rank[order] = np.arange(len(order))
        return self._rank

    @classmethod
    def from_tuples(cls, candidates) -> "CandidateSet":
        candidates = list(candidates)
        return cls([c[0] for c in candidates], [c[1] for c in candidates],
                   [c[2] for c in candidates])

    def tuples(self) -> list:
        return list(zip(self.branches, self.est_accuracy.tolist(), self.l_fr.tolist()))


def select_index(cands: CandidateSet, l_req: float,
                 overheads: OverheadConstants = OverheadConstants()) -> tuple[int, float, int]:
    """Index of the chosen candidate, its estimated latency and the feasible count.

    Feasible branches have l_est < l_req. Among them the highest estimated
    accuracy wins, then the lower l_est, then the lexicographically smallest
    branch. With no feasible branch the lowest l_est wins, then the higher
    accuracy, then the smallest branch.
    """
    if len(cands) == 0:
        raise ParameterError("select_branch needs at least one candidate")
    if not l_req > 0:
        raise ParameterError("l_req must be > 0")
    l_est = cands.l_fr + (overheads.l_sw + overheads.l_sc) / cands.si
    feasible = np.flatnonzero(l_est < l_req)
    if feasible.size:
        acc = cands.est_accuracy[feasible]
        order = np.lexsort((cands.rank[feasible], l_est[feasible], -acc))
        i = int(feasible[order[0]])
    else:
        order = np.lexsort((cands.rank, -cands.est_accuracy, l_est))
        i = int(order[0])
    return i, float(l_est[i]), int(feasible.size)


def select_branch(candidates, l_req: float, overheads: OverheadConstants = OverheadConstants(),
                  frame: int = 0) -> SchedulerDecision:
    """Pick the most accurate feasible branch, or the fastest if none is feasible.

    `candidates` is a CandidateSet or a sequence of (branch, est_accuracy, l_fr).
    """
    cands = candidates if isinstance(candidates, CandidateSet) else CandidateSet.from_tuples(candidates)
    i, l_est, n_feasible = select_index(cands, l_req, overheads)
    return SchedulerDecision(cands.branches[i], l_est, float(cands.est_accuracy[i]),
                             n_feasible, frame, float(l_req))


@dataclass
class LatencyModels:
    dnn: QuadraticModel
    trackers: dict  # (Tracker, ds) -> QuadraticModel

    def tracker_model(self, tracker: Tracker, ds: int) -> QuadraticModel:
        try:
            return self.trackers[(tracker, ds)]
        except KeyError:
            raise ModelMisuseError(f"no tracker latency model for {tracker.value} ds={ds}") from None


def predict_latencies(lat: LatencyModels, branches: Sequence[BranchConfig], features,
                      contention: ContentionVector) -> tuple[np.ndarray, np.ndarray]:
    """Predicted (l_dnn, l_tracker) arrays; each distinct model input is evaluated once."""
    if tuple(lat.dnn.input_names) != DNN_INPUTS:
        raise ModelMisuseError(f"detector model has inputs {lat.dnn.input_names}")
    cpu, mb, gpu = contention.features()
    det_keys = sorted({(b.nprop, b.shape) for b in branches})
    det_X = [[n, s, features.height, features.width, cpu, mb, gpu] for n, s in det_keys]
    det = dict(zip(det_keys, lat.dnn.predict(det_X))) if det_keys else {}
    trk = {}
    row = [[features.height, features.width, features.n_obj, features.avg_size, cpu, mb, gpu]]
    for key in sorted({(b.tracker, b.ds) for b in branches}, key=lambda k: (k[0].index, k[1])):
        m = lat.tracker_model(*key)
        if tuple(m.input_names) != TRACKER_INPUTS:
            raise ModelMisuseError(f"tracker model has inputs {m.input_names}")
        trk[key] = float(m.predict(row)[0])
    l_dnn = np.array([det[(b.nprop, b.shape)] for b in branches])
    l_tr = np.array([trk[(b.tracker, b.ds)] for b in branches])
    return l_dnn, l_tr


def build_candidates(branches: Sequence[BranchConfig], acc_model, lat_models: LatencyModels,
                     features, sensed: ContentionVector, knobs: np.ndarray | None = None
                     ) -> CandidateSet:
    """Estimate accuracy and frame latency for every branch.

    `acc_model` is either a LinearAccuracyModel, evaluated at the features'
    movement, or a content-agnostic RegressionTree.
    """
    branches = list(branches)
    K = knob_matrix(branches) if knobs is None else knobs
    if isinstance(acc_model, LinearAccuracyModel):
        acc = acc_model.predict_matrix(K, features.movement)
    elif isinstance(acc_model, RegressionTree):
        acc = acc_model.predict_matrix(K)
    else:
        raise ModelMisuseError(f"unsupported accuracy model {type(acc_model).__name__}")
    l_dnn, l_tr = predict_latencies(lat_models, branches, features, sensed)
    si = K[:, 0]
    return CandidateSet(branches, acc, l_dnn / si + l_tr, l_dnn, l_tr)
