"""Frame-by-frame pipeline simulation against the world model.

Charging rule: every frame is charged ``l_dnn / si + l_tracker`` from the
world model (noise drawn per frame), plus its share of any overhead paid at
the latest decision. A decision by a scheduling policy costs ``l_sc``; if it
also switches branch it costs ``l_sw`` on top. That overhead is spread
evenly over the next ``min(si, frames left)`` frames starting at the
decision frame, so the per-frame total sums back to

    sum(l_dnn / si) + sum(l_tracker) + l_sw * switches + l_sc * decisions.

The ``spike_ms`` column gives the unamortized view: the full detector cost on
detection frames, the tracker cost, and the whole overhead on the decision
frame.
"""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import world as wm
from .accuracy import knob_matrix
from .contention import ContentionSchedule, SensorState, level_at, sense_contention
from .errors import ModelMisuseError, ParameterError, SensorUnavailableError
from .fitting import ModelBundle
from .knobs import BRANCH_FIELDS, BranchConfig, enumerate_branches, validate_branch
from .latency import NO_CONTENTION, ContentionVector
from .scheduler import (CandidateSet, OverheadConstants, SchedulerDecision, build_candidates,
                        select_index, should_schedule)
from .trace import DEFAULT_MOVEMENT_WINDOW, ContentFeatures, Trace, feature_series

POLICIES = ("adaptive", "static", "oracle")

FRAME_FIELDS = ("frame", "policy", *BRANCH_FIELDS, "l_dnn_ms", "l_tracker_ms", "charged_ms",
                "spike_ms", "l_req_ms", "violation", "true_accuracy",
                "sensed_cpu_cores", "sensed_mb_mbps", "sensed_gpu_util",
                "true_cpu_cores", "true_mb_mbps", "true_gpu_util", "decision", "switched")
DECISION_FIELDS = ("frame", "policy", *BRANCH_FIELDS, "est_latency_ms", "est_accuracy",
                   "feasible_count", "sensed_cpu_cores", "sensed_mb_mbps", "sensed_gpu_util")


@dataclass(frozen=True)
class SlaSchedule:
    entries: tuple  # of (start_frame, l_req_ms)

    def __post_init__(self):
        if not self.entries:
            raise ParameterError("SLA schedule needs at least one entry")
        starts = [s for s, _ in self.entries]
        if starts[0] != 0:
            raise ParameterError("SLA schedule must start at frame 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ParameterError("SLA schedule start frames must strictly increase")
        if any(not r > 0 for _, r in self.entries):
            raise ParameterError("latency requirements must be > 0")

    @classmethod
    def constant(cls, l_req: float) -> "SlaSchedule":
        return cls(((0, float(l_req)),))

    def at(self, frame: int) -> float:
        starts = [s for s, _ in self.entries]
        return self.entries[bisect.bisect_right(starts, frame) - 1][1]

    def phases(self, n_frames: int) -> list[tuple[int, int, float]]:
        """(start, end_exclusive, l_req) for each phase within the run."""
        ends = [s for s, _ in self.entries[1:]] + [n_frames]
        return [(s, e, r) for (s, r), e in zip(self.entries, ends)]

    def to_list(self) -> list:
        return [{"start_frame": s, "l_req_ms": r} for s, r in self.entries]

    @classmethod
    def from_list(cls, items) -> "SlaSchedule":
        return cls(tuple((int(d["start_frame"]), float(d["l_req_ms"])) for d in items))


@dataclass(frozen=True)
class Policy:
    kind: str
    branch: BranchConfig | None = None

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ParameterError(f"policy must be one of {POLICIES}, got {self.kind!r}")
        if self.kind == "static":
            if self.branch is None:
                raise ParameterError("static policy needs a branch")
            problems = validate_branch(self.branch)
            if problems:
                raise ParameterError(f"invalid static branch: {'; '.join(problems)}")

    @property
    def label(self) -> str:
        return f"static:{self.branch.key}" if self.kind == "static" else self.kind

    @property
    def schedules(self) -> bool:
        return self.kind != "static"


@dataclass
class FrameLog:
    frame: int
    policy: str
    branch: BranchConfig
    l_dnn: float
    l_tracker: float
    charged: float
    spike: float
    l_req: float
    violation: bool
    true_accuracy: float
    sensed: ContentionVector
    true_contention: ContentionVector
    decision: bool
    switched: bool

    def as_row(self) -> dict:
        s, t = self.sensed.as_row(), self.true_contention.as_row()
        return {"frame": self.frame, "policy": self.policy, **self.branch.as_row(),
                "l_dnn_ms": repr(self.l_dnn), "l_tracker_ms": repr(self.l_tracker),
                "charged_ms": repr(self.charged), "spike_ms": repr(self.spike),
                "l_req_ms": repr(self.l_req), "violation": int(self.violation),
                "true_accuracy": repr(self.true_accuracy),
                **{f"sensed_{k}": v for k, v in s.items()},
                **{f"true_{k}": v for k, v in t.items()},
                "decision": int(self.decision), "switched": int(self.switched)}


@dataclass
class DecisionLog:
    policy: str
    decision: SchedulerDecision
    sensed: ContentionVector

    def as_row(self) -> dict:
        d = self.decision
        return {"frame": d.decided_at_frame, "policy": self.policy, **d.branch.as_row(),
                "est_latency_ms": repr(d.est_latency), "est_accuracy": repr(d.est_accuracy),
                "feasible_count": d.feasible_count,
                **{f"sensed_{k}": v for k, v in self.sensed.as_row().items()}}


@dataclass
class PhaseMetrics:
    start_frame: int
    end_frame: int
    l_req_ms: float
    mean_latency_ms: float
    p95_latency_ms: float
    violation_rate: float
    mean_accuracy: float


@dataclass
class MetricsReport:
    policy: str
    n_frames: int
    mean_latency_ms: float
    p95_latency_ms: float
    violation_rate: float
    mean_accuracy: float
    switches: int
    decisions: int
    phases: list = field(default_factory=list)
    scenario: str = ""
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["phases"] = [PhaseMetrics(**p) for p in d.get("phases", [])]
        return cls(**d)


@dataclass
class SimulationResult:
    report: MetricsReport
    frames: list
    decisions: list

    def charged(self) -> np.ndarray:
        return np.array([f.charged for f in self.frames])


def _summary(charged: np.ndarray, req: np.ndarray, acc: np.ndarray):
    return (float(np.mean(charged)), float(np.percentile(charged, 95)),
            float(np.mean(charged > req)), float(np.mean(acc)))


def summarize(frames: Sequence[FrameLog], sla: SlaSchedule, policy: str,
              scenario: str = "", seed: int = 0) -> MetricsReport:
    charged = np.array([f.charged for f in frames])
    req = np.array([f.l_req for f in frames])
    acc = np.array([f.true_accuracy for f in frames])
    phases = []
    for s, e, r in sla.phases(len(frames)):
        phases.append(PhaseMetrics(s, e, r, *_summary(charged[s:e], req[s:e], acc[s:e])))
    return MetricsReport(policy, len(frames), *_summary(charged, req, acc),
                         sum(f.switched for f in frames), sum(f.decision for f in frames),
                         phases, scenario, seed)


def oracle_candidates(world: wm.WorldModelConfig, branches: Sequence[BranchConfig],
                      features: ContentFeatures, contention: ContentionVector,
                      knobs: np.ndarray | None = None) -> CandidateSet:
    """Noiseless ground-truth estimates for every branch."""
    K = knob_matrix(branches) if knobs is None else knobs
    si, shape, nprop, trk, ds = K.T
    cpu, mb, gpu = contention.features()
    l_dnn = wm.dnn_latency(world, nprop, shape, cpu, mb, gpu)
    l_tr = wm.tracker_latency(world, trk.astype(int), ds, features.n_obj, features.avg_size,
                              cpu, mb)
    acc = wm.accuracy(world, si, shape, nprop, trk.astype(int), ds, features.movement)
    return CandidateSet(list(branches), acc, l_dnn / si + l_tr, l_dnn, l_tr)


def best_static_branch(world: wm.WorldModelConfig, branches: Sequence[BranchConfig],
                       trace: Trace, contention: ContentionVector, l_req: float,
                       window: int = DEFAULT_MOVEMENT_WINDOW) -> BranchConfig:
    """Most accurate branch meeting `l_req` under fixed contention, judged on the
    trace's average content and with no scheduling overhead."""
    feats = feature_series(trace, window)
    mean = ContentFeatures(feats[0].height, feats[0].width,
                           float(np.mean([f.n_obj for f in feats])),
                           float(np.mean([f.avg_size for f in feats])),
                           float(np.mean([f.movement for f in feats])))
    cands = oracle_candidates(world, branches, mean, contention)
    i, _, _ = select_index(cands, l_req, OverheadConstants(0.0, 0.0))
    return cands.branches[i]


def oracle_select(cands: CandidateSet, l_req: float, overheads: OverheadConstants,
                  current: BranchConfig | None, frames_left: int) -> tuple[int, float, int]:
    """Ground-truth choice charging exactly the overhead the simulator will charge.

    Unlike the estimator's rule, the switch cost is added only for branches
    other than `current`, and the overhead is spread over the frames that will
    actually carry it.
    """
    switch = np.array([current is not None and b != current for b in cands.branches])
    span = np.minimum(cands.si, frames_left)
    cost = cands.l_fr + (overheads.l_sc + overheads.l_sw * switch) / span
    feasible = np.flatnonzero(cost < l_req)
    if feasible.size:
        order = np.lexsort((cands.rank[feasible], cost[feasible], -cands.est_accuracy[feasible]))
        i = int(feasible[order[0]])
    else:
        i = int(np.lexsort((cands.rank, -cands.est_accuracy, cost))[0])
    return i, float(cost[i]), int(feasible.size)


def _check_schedules(n: int, contention: ContentionSchedule, sla: SlaSchedule) -> None:
    for name, entries in (("contention", contention.entries), ("SLA", sla.entries)):
        late = [s for s, _ in entries if s >= n]
        if late:
            raise ParameterError(f"{name} schedule starts {late} lie beyond the {n}-frame trace")


def run_simulation(trace: Trace, contention: ContentionSchedule, sla: SlaSchedule,
                   policy: Policy, world: wm.WorldModelConfig,
                   models: ModelBundle | None = None, seed: int = 0,
                   overheads: OverheadConstants = OverheadConstants(),
                   branches: Sequence[BranchConfig] | None = None,
                   window: int = DEFAULT_MOVEMENT_WINDOW, sensor_window: int = 8,
                   scenario: str = "") -> SimulationResult:
    """Run one policy over the whole trace; deterministic for a given seed.

    Candidate branches default to those in the model bundle's offline log,
    or the full knob grid when no bundle is given (oracle only).
    """
    n = len(trace)
    if n < 1:
        raise ParameterError("trace has no frames")
    _check_schedules(n, contention, sla)
    if policy.kind == "adaptive" and models is None:
        raise ModelMisuseError("adaptive policy needs fitted models")
    world.validate()
    if branches is None and policy.schedules:
        branches = models.branches if models is not None else enumerate_branches()
    branches = list(branches) if branches is not None else []
    K = knob_matrix(branches) if branches else None
    feats = feature_series(trace, window)
    sensor = SensorState(sensor_window)
    sensed = NO_CONTENTION

    frames: list[FrameLog] = []
    decisions: list[DecisionLog] = []
    current = policy.branch
    last: SchedulerDecision | None = None
    group_start = 0
    pending = []  # per-frame overhead shares still to charge
    label = policy.label

    for f in range(n):
        feat = feats[f]
        true_c = level_at(contention, f)
        l_req = sla.at(f)
        decided = switched = False
        overhead = 0.0
        if policy.schedules and should_schedule(f, last):
            if policy.kind == "adaptive":
                if len(sensor) and current is not None:
                    try:
                        sensed = sense_contention(models.offline_log, sensor, current)
                    except SensorUnavailableError:
                        pass  # keep the previous estimate
                # movement needs one completed step, which exists from frame 2
                acc_model = models.linear if f >= 2 else models.tree
                cands = build_candidates(branches, acc_model, models.latency, feat, sensed, K)
                i, l_est, n_feas = select_index(cands, l_req, overheads)
            else:
                sensed = true_c
                cands = oracle_candidates(world, branches, feat, true_c, K)
                i, l_est, n_feas = oracle_select(cands, l_req, overheads, current, n - f)
            chosen = cands.branches[i]
            last = SchedulerDecision(chosen, l_est, float(cands.est_accuracy[i]), n_feas, f,
                                     float(l_req))
            decisions.append(DecisionLog(label, last, sensed))
            decided = True
            switched = current is not None and chosen != current
            if current is None or switched:
                group_start = f
            current = chosen
            overhead = overheads.l_sc + (overheads.l_sw if switched else 0.0)
            m = min(current.si, n - f)
            share = overhead / m
            pending = [share] * (m - 1) + [overhead - share * (m - 1)]
        b = current
        l_dnn, l_tr = wm.world_true_latency(world, b, feat, true_c, seed, f)
        base = l_dnn / b.si + l_tr
        charged = base + (pending.pop(0) if pending else 0.0)
        detect = (f - group_start) % b.si == 0
        spike = (l_dnn if detect else 0.0) + l_tr + overhead
        sensor.observe(b, base)
        frames.append(FrameLog(f, label, b, l_dnn, l_tr, charged, spike, float(l_req),
                               charged > l_req, wm.world_true_accuracy(world, b, feat.movement),
                               sensed if policy.schedules else NO_CONTENTION, true_c,
                               decided, switched))
    report = summarize(frames, sla, label, scenario, seed)
    return SimulationResult(report, frames, decisions)


def write_frames_csv(results: Sequence[SimulationResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=FRAME_FIELDS, lineterminator="\n")
        w.writeheader()
        for res in results:
            for fr in res.frames:
                w.writerow(fr.as_row())


def write_decisions_csv(results: Sequence[SimulationResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=DECISION_FIELDS, lineterminator="\n")
        w.writeheader()
        for res in results:
            for d in res.decisions:
                w.writerow(d.as_row())


def write_metrics_json(results: Sequence[SimulationResult], path, scenario: str = "") -> None:
    doc = {"scenario": scenario, "runs": [r.report.to_dict() for r in results]}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def conservation_gap(result: SimulationResult, overheads: OverheadConstants) -> float:
    """Charged total minus its decomposition; zero up to rounding."""
    fr = result.frames
    total = math.fsum(f.charged for f in fr)
    parts = (math.fsum(f.l_dnn / f.branch.si for f in fr) + math.fsum(f.l_tracker for f in fr)
             + overheads.l_sw * result.report.switches + overheads.l_sc * result.report.decisions)
    return total - parts
