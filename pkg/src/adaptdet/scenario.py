"""Scenario files: a trace, contention and SLA schedules, and the policies to run."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .contention import ContentionSchedule, level_at
from .errors import ParameterError
from .fitting import ModelBundle
from .knobs import BranchConfig, enumerate_branches
from .simulate import Policy, SimulationResult, SlaSchedule, best_static_branch, run_simulation
from .trace import Trace, TraceSpec, generate_trace
from .world import WorldModelConfig

AUTO_STATIC = "best_at_start"


def data_path(*parts: str) -> Path:
    return Path(str(resources.files("adaptdet").joinpath("data", *parts)))


def bundled_scenarios() -> dict[str, Path]:
    return {p.stem: p for p in sorted(data_path("scenarios").glob("*.json"))}


@dataclass
class Scenario:
    name: str
    trace: Trace
    contention: ContentionSchedule
    sla: SlaSchedule
    policies: list  # Policy objects or AUTO_STATIC
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "Scenario":
        missing = [k for k in ("trace", "contention", "sla") if k not in d and
                   not (k == "trace" and "trace_file" in d)]
        if missing:
            raise ParameterError(f"scenario lacks {missing}")
        if "trace_file" in d:
            p = Path(d["trace_file"])
            trace = Trace.load(p if p.is_absolute() or base_dir is None else base_dir / p)
        else:
            trace = generate_trace(TraceSpec.from_dict(d["trace"]), int(d.get("trace_seed", 0)))
        policies = [_parse_policy(p) for p in d.get("policies", ["adaptive"])]
        return cls(str(d.get("name", "scenario")), trace,
                   ContentionSchedule.from_list(d["contention"]), SlaSchedule.from_list(d["sla"]),
                   policies, int(d.get("seed", 0)))

    @classmethod
    def load(cls, path) -> "Scenario":
        p = Path(path)
        return cls.from_dict(json.loads(p.read_text()), p.parent)

    def resolve(self, world: WorldModelConfig, models: ModelBundle | None) -> list[Policy]:
        """Concrete policies; the automatic static branch is the best one for the
        starting contention and requirement."""
        out = []
        for p in self.policies:
            if p == AUTO_STATIC:
                branches = models.branches if models is not None else enumerate_branches()
                b = best_static_branch(world, branches, self.trace,
                                       level_at(self.contention, 0), self.sla.at(0))
                out.append(Policy("static", b))
            else:
                out.append(p)
        return out

    def needs_models(self) -> bool:
        return any(p != AUTO_STATIC and p.kind == "adaptive" for p in self.policies)

    def run(self, world: WorldModelConfig, models: ModelBundle | None,
            seed: int | None = None) -> list[SimulationResult]:
        seed = self.seed if seed is None else seed
        return [run_simulation(self.trace, self.contention, self.sla, p, world, models, seed,
                               scenario=self.name)
                for p in self.resolve(world, models)]


def _parse_policy(p):
    if isinstance(p, str):
        if p == "static":
            raise ParameterError("static policy needs a branch")
        return Policy(p)
    if not isinstance(p, dict) or "kind" not in p:
        raise ParameterError(f"bad policy entry {p!r}")
    if p["kind"] == "static":
        br = p.get("branch", AUTO_STATIC)
        if br == AUTO_STATIC:
            return AUTO_STATIC
        return Policy("static", BranchConfig(int(br["si"]), int(br["shape"]), int(br["nprop"]),
                                             br["tracker"], int(br["ds"])))
    return Policy(p["kind"])
