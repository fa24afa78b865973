import os

import pytest

from adaptdet.errors import ParameterError
from adaptdet.stressor import StressReport, run_stressor, steady_window_mean

CORES = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()


def test_zero_duration_spawns_nothing():
    r = run_stressor(1, 500, 0)
    assert r == StressReport(1, 500.0, 0.0)
    assert r.samples_mbps == [] and not r.saturated


@pytest.mark.parametrize("args", [(0, 100, 1), (CORES + 1, 100, 1), (1, -5, 1), (1, 100, -1)])
def test_bad_arguments(args):
    with pytest.raises(ParameterError):
        run_stressor(*args)


def test_short_run_reports(tmp_path):
    r = run_stressor(1, 200, 1.0, buffer_mb=16, warmup=0.5)
    assert r.samples_mbps and r.mean_mbps > 0 and r.core_occupancy > 0
    assert 1.0 <= r.final_stride <= 1 << 17
    assert set(r.to_dict()) >= {"mean_mbps", "std_mbps", "core_occupancy", "saturated"}
    assert "achieved" in r.summary()


def test_steady_window_mean():
    r = StressReport(1, 100.0, 3.0, samples_mbps=[10.0] * 10 + [100.0] * 20)
    assert steady_window_mean(r, 1.0) == 100.0
    assert steady_window_mean(StressReport(1, 1.0, 0.0), 5.0) == 0.0


@pytest.mark.hardware
def test_holds_500_mbps_within_ten_percent():
    r = run_stressor(1, 500, 10)
    assert abs(r.mean_mbps - 500) <= 50, r.summary()


@pytest.mark.hardware
def test_minimum_target_is_cpu_occupancy():
    r = run_stressor(1, 1, 5)
    assert r.mean_mbps < 10 and r.core_occupancy > 0.8, r.summary()


@pytest.mark.hardware
def test_unreachable_target_flags_saturation():
    r = run_stressor(1, 1e7, 4)
    assert r.saturated and r.mean_mbps < 1e7, r.summary()
