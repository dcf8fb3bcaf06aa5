from __future__ import annotations

import os
import platform
import time
from dataclasses import dataclass

import numpy as np

from ..inference import infer


@dataclass(frozen=True)
class BenchmarkResult:
    n_params: int
    fps: float  # median over runs
    fps_runs: tuple[float, ...]
    n_timed: int
    hardware: str


def hardware_string() -> str:
    cpu = platform.processor() or platform.machine()
    return f"{platform.system()} {platform.machine()} {cpu}, {os.cpu_count()} logical CPUs, numpy {np.__version__}"


def benchmark(model, frames, n_timed: int = 50, runs: int = 3, warmup: int = 2) -> BenchmarkResult:
    """End-to-end single-frame inference rate (voxelize, plan, forward, decode).

    Frames are cycled; warmup inferences are not timed.
    """
    if not frames:
        raise ValueError("benchmark needs at least one frame")
    if n_timed < 1 or runs < 1:
        raise ValueError("n_timed and runs must be positive")
    for i in range(warmup):
        infer(model, [frames[i % len(frames)]], batch_size=1)
    rates = []
    for _ in range(runs):
        t0 = time.perf_counter()
        for i in range(n_timed):
            infer(model, [frames[i % len(frames)]], batch_size=1)
        rates.append(n_timed / (time.perf_counter() - t0))
    return BenchmarkResult(model.num_parameters(), float(np.median(rates)), tuple(rates), n_timed, hardware_string())
