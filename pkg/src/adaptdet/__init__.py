"""Contention- and content-aware branch scheduling for detection+tracking pipelines."""

from .errors import (AdaptDetError, DomainError, ModelMisuseError, ParameterError,
                     SensorUnavailableError, SingularFitError)
from .knobs import BranchConfig, KnobDomains, Tracker, enumerate_branches, sample_branches
from .latency import ContentionVector, QuadraticModel, compose_frame_latency, \
    estimate_branch_latency, fit_quadratic
from .scheduler import OverheadConstants, SchedulerDecision, select_branch, should_schedule

__version__ = "0.1.0"

__all__ = [
    "AdaptDetError", "BranchConfig", "ContentionVector", "DomainError", "KnobDomains",
    "ModelMisuseError", "OverheadConstants", "ParameterError", "QuadraticModel",
    "SchedulerDecision", "SensorUnavailableError", "SingularFitError", "Tracker",
    "compose_frame_latency", "enumerate_branches", "estimate_branch_latency", "fit_quadratic",
    "sample_branches", "select_branch", "should_schedule", "__version__",
]
