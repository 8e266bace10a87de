"""Latency and memory benchmarking of inference backends.

Protocol: a fixed number of unmeasured warmup calls, then a fixed number of
measured calls on the same input, timed with a monotonic clock around the
infer call only (preprocessing excluded). The averaged latency is the
headline figure; std, min, max and percentiles are recorded too because a
single mean hides variance on shared CPUs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .backends import InferenceBackend, PreparedInput
from .errors import BenchAborted, UnsupportedFeatureError, ValidationError

DEFAULT_WARMUP_RUNS = 5
DEFAULT_MEASURED_RUNS = 50


@dataclass
class BenchConfig:
    warmup_runs: int = DEFAULT_WARMUP_RUNS
    measured_runs: int = DEFAULT_MEASURED_RUNS
    input: PreparedInput | None = None
    # Cycled when more than one input is given; default is one fixed input.
    inputs: Sequence[PreparedInput] | None = None
    clock: Callable[[], float] = time.perf_counter

    def __post_init__(self):
        if self.measured_runs < 1:
            raise ValidationError(f"measured_runs must be >= 1, got {self.measured_runs}")
        if self.warmup_runs < 0:
            raise ValidationError(f"warmup_runs must be >= 0, got {self.warmup_runs}")

    def input_for(self, i: int) -> PreparedInput | None:
        if self.inputs:
            return self.inputs[i % len(self.inputs)]
        return self.input

    def echo(self) -> dict:
        return {
            "warmup_runs": self.warmup_runs,
            "measured_runs": self.measured_runs,
            "n_inputs": len(self.inputs) if self.inputs else 1,
        }


def percentile(sorted_values: Sequence[float], q: float) -> float:
    """Linear-interpolation percentile of an ascending-sorted sequence."""
    if not sorted_values:
        raise ValidationError("percentile of empty sequence")
    if len(sorted_values) == 1:
        return sorted_values[0]
    rank = (len(sorted_values) - 1) * q / 100.0
    lo = math.floor(rank)
    hi = math.ceil(rank)
    if lo == hi:
        return sorted_values[lo]
    frac = rank - lo
    return sorted_values[lo] * (1.0 - frac) + sorted_values[hi] * frac


@dataclass
class BenchReport:
    mean_ms: float
    std_ms: float
    min_ms: float
    max_ms: float
    p50_ms: float
    p95_ms: float
    runs: list[float]
    config: dict = field(default_factory=dict)
    peak_memory_bytes: int | None = None

    @classmethod
    def from_runs(cls, runs: Sequence[float], config: dict) -> "BenchReport":
        ordered = sorted(runs)
        n = len(ordered)
        mean = sum(ordered) / n
        # Population std: describes exactly these runs, not an estimate.
        std = math.sqrt(sum((v - mean) ** 2 for v in ordered) / n)
        return cls(
            mean_ms=mean,
            std_ms=std,
            min_ms=ordered[0],
            max_ms=ordered[-1],
            p50_ms=percentile(ordered, 50.0),
            p95_ms=percentile(ordered, 95.0),
            runs=list(runs),
            config=config,
        )

    def to_dict(self) -> dict:
        return {
            "mean_ms": self.mean_ms,
            "std_ms": self.std_ms,
            "min_ms": self.min_ms,
            "max_ms": self.max_ms,
            "p50_ms": self.p50_ms,
            "p95_ms": self.p95_ms,
            "peak_memory_bytes": self.peak_memory_bytes,
            "runs": self.runs,
            "config": self.config,
        }


def run_bench(backend: InferenceBackend, config: BenchConfig) -> BenchReport:
    """Warmup, then time measured runs; statistics cover measured runs only.

    A backend failure mid-run raises BenchAborted carrying a report over the
    runs completed so far (None if the failure precedes the first sample).
    """
    completed: list[float] = []
    try:
        for i in range(config.warmup_runs):
            backend.infer(config.input_for(i))
        for i in range(config.measured_runs):
            prepared = config.input_for(i)
            start = config.clock()
            backend.infer(prepared)
            stop = config.clock()
            completed.append((stop - start) * 1000.0)
    except Exception as exc:
        partial = BenchReport.from_runs(completed, config.echo()) if completed else None
        raise BenchAborted(
            f"backend failed after {len(completed)} measured runs: {exc}", partial=partial
        ) from exc
    return BenchReport.from_runs(completed, config.echo())


def _read_peak_rss_bytes() -> int:
    status = Path("/proc/self/status")
    if status.exists():
        for line in status.read_text().splitlines():
            if line.startswith("VmHWM:"):
                return int(line.split()[1]) * 1024
    try:
        import resource
    except ImportError as exc:
        raise UnsupportedFeatureError("no memory introspection on this platform") from exc
    usage = resource.getrusage(resource.RUSAGE_SELF)
    return usage.ru_maxrss * 1024  # kilobytes on Linux


def _reset_peak_rss() -> None:
    # Writing "5" resets the high watermark on Linux; best-effort elsewhere.
    try:
        Path("/proc/self/clear_refs").write_text("5")
    except OSError:
        pass


def measure_memory(backend: InferenceBackend, prepared: PreparedInput | None = None) -> int:
    """Peak resident memory of this process over one inference cycle, in
    bytes. The loaded model's footprint is included since its weights are
    resident throughout."""
    _reset_peak_rss()
    backend.infer(prepared)
    return _read_peak_rss_bytes()
