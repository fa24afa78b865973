import dataclasses

import pytest

from adaptdet.fitting import fit_bundle
from adaptdet.profiler import SamplingPlan, collect_profiles
from adaptdet.world import WorldModelConfig


@pytest.fixture(scope="session")
def world():
    return WorldModelConfig()


@pytest.fixture(scope="session")
def quiet_world():
    return WorldModelConfig().noiseless()


@pytest.fixture(scope="session")
def default_records(world):
    return collect_profiles(SamplingPlan(), world)


@pytest.fixture(scope="session")
def bundle(default_records):
    return fit_bundle(default_records)


@pytest.fixture(scope="session")
def quiet_bundle(quiet_world):
    return fit_bundle(collect_profiles(SamplingPlan(), quiet_world))


@pytest.fixture
def tiny_plan():
    from adaptdet.knobs import KnobDomains
    from adaptdet.latency import ContentionVector

    return SamplingPlan(branch_fraction=1.0, contention_levels=(ContentionVector(),),
                        n_obj_values=(4,), avg_size_values=(12000.0,),
                        movement_classes=("medium",),
                        domains=KnobDomains((8,), (576,), (100,), ("MedianFlow",), (1,)))


def replace(obj, **kw):
    return dataclasses.replace(obj, **kw)


_VERDICTS: list = []


@pytest.fixture
def verdict():
    """Record and print one pass/fail line for an acceptance criterion, then assert it."""

    def record(number: int, title: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}" + (f" ({detail})" if detail else "")
        _VERDICTS.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
