"""Host CPU and memory-bandwidth stressor with a feedback-controlled write stride.

Each worker owns a slice of one large buffer and keeps writing every
`stride`-th float64 in fixed-size windows, walking through its slice. A
controller samples the total bytes written every tick and rescales the
shared stride so the aggregate write rate tracks the target. With a
maximal stride the workers barely touch memory and simply occupy their
cores.
"""

from __future__ import annotations

import math
import multiprocessing as mp
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ParameterError

DEFAULT_BUFFER_MB = 152
DEFAULT_TICK_S = 0.05
WARMUP_S = 1.0
WINDOW_ELEMS = 1 << 17  # 1 MiB of float64 per step
SPIN_ELEMS = 1 << 12  # cache-resident work that bounds the step rate
MIN_MBPS = 1.0


@dataclass
class StressReport:
    target_cores: int
    target_mbps: float
    duration_s: float
    mean_mbps: float = 0.0
    std_mbps: float = 0.0
    core_occupancy: float = 0.0
    saturated: bool = False
    final_stride: float = 0.0
    samples_mbps: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        flag = " (saturated: target above host capability)" if self.saturated else ""
        return (f"cores={self.target_cores} target={self.target_mbps:.1f} MB/s "
                f"achieved={self.mean_mbps:.1f}±{self.std_mbps:.1f} MB/s "
                f"occupancy={self.core_occupancy:.2f}{flag}")


def _worker(index: int, n_elems: int, stride, written, cpu_time, stop) -> None:
    try:
        os.sched_setaffinity(0, {sorted(os.sched_getaffinity(0))[index % os.cpu_count()]})
    except (AttributeError, OSError):
        pass
    buf = np.zeros(n_elems)
    spin = np.ones(SPIN_ELEMS)
    pos = 0
    local = 0
    carry = 0.0
    t0 = time.process_time()
    while not stop.is_set():
        # dither between floor and ceil so fractional strides average out
        x = stride.value
        s = int(x)
        carry += x - s
        if carry >= 1.0:
            s, carry = s + 1, carry - 1.0
        end = min(pos + WINDOW_ELEMS, n_elems)
        buf[pos:end:s] = 1.0
        local += 8 * len(range(pos, end, s))
        spin *= 1.0000001
        pos = 0 if end >= n_elems else end
        if local >= 1 << 16:
            with written.get_lock():
                written.value += local
            local = 0
    with written.get_lock():
        written.value += local
    cpu_time.value = time.process_time() - t0


def run_stressor(target_cores: int, target_mbps: float, duration: float,
                 buffer_mb: float = DEFAULT_BUFFER_MB, tick: float = DEFAULT_TICK_S,
                 warmup: float = WARMUP_S) -> StressReport:
    """Hold `target_cores` busy writing about `target_mbps` MB/s for `duration` seconds."""
    available = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    if target_cores < 1 or target_cores > available:
        raise ParameterError(f"target_cores must be in 1..{available}")
    if target_mbps < 0 or duration < 0 or tick <= 0 or buffer_mb <= 0:
        raise ParameterError("target_mbps and duration must be >= 0; tick and buffer_mb > 0")
    report = StressReport(target_cores, float(target_mbps), float(duration))
    if duration == 0:
        return report

    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    n_elems = max(int(buffer_mb * 1e6 / 8 / target_cores), WINDOW_ELEMS)
    stride = ctx.Value("d", 64.0, lock=False)
    written = ctx.Value("q", 0)
    stop = ctx.Event()
    times = [ctx.Value("d", 0.0, lock=False) for _ in range(target_cores)]
    procs = [ctx.Process(target=_worker, args=(i, n_elems, stride, written, times[i], stop),
                         daemon=True) for i in range(target_cores)]
    for p in procs:
        p.start()

    target = max(float(target_mbps), MIN_MBPS)
    samples, strides = [], []
    start = last_t = time.perf_counter()
    last_bytes = 0
    try:
        while True:
            time.sleep(tick)
            now = time.perf_counter()
            total = written.value
            rate = (total - last_bytes) / (now - last_t) / 1e6
            last_t, last_bytes = now, total
            if now - start >= warmup:
                samples.append(rate)
                strides.append(stride.value)
            if rate > 0:
                # multiplicative proportional step, damped to avoid overshoot
                factor = (rate / target) ** 0.5
                stride.value = min(max(stride.value * factor, 1.0), float(WINDOW_ELEMS))
            else:
                stride.value = max(stride.value / 2, 1.0)
            if now - start >= duration:
                break
    finally:
        stop.set()
        for p in procs:
            p.join(timeout=5)
            if p.is_alive():
                p.terminate()
    wall = time.perf_counter() - start
    if samples:
        report.mean_mbps = float(np.mean(samples))
        report.std_mbps = float(np.std(samples))
    report.samples_mbps = [float(s) for s in samples]
    report.final_stride = float(stride.value)
    report.core_occupancy = float(sum(t.value for t in times) / (wall * target_cores))
    pinned = strides[len(strides) // 2:] if strides else []
    report.saturated = bool(pinned and all(s <= 1.0 for s in pinned)
                            and report.mean_mbps < 0.9 * target_mbps)
    return report


def steady_window_mean(report: StressReport, seconds: float, tick: float = DEFAULT_TICK_S) -> float:
    """Mean rate over the last `seconds` of post-warmup samples."""
    n = max(1, int(math.ceil(seconds / tick)))
    tail = report.samples_mbps[-n:]
    return float(np.mean(tail)) if tail else 0.0
