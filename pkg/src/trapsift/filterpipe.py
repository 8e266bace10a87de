"""The deployable filtering pipeline.

Preprocess images, score them through a backend, apply a calibrated
threshold, keep or discard, and account for storage savings. The bias is
fail-safe: a lost animal image is unrecoverable while a kept empty image
only costs storage, so every error path keeps the file.

Concurrency: decode/preprocess run concurrently across images with a bounded
in-flight window (memory stays flat on small devices); inference is
serialized per backend instance; decisions and the savings accumulator are
applied by the single coordinating thread.
"""

from __future__ import annotations

import io
import json
import shutil
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fnmatch import fnmatch
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .backends import InferenceBackend, PreparedInput
from .errors import ConfigError, DecodeError, ValidationError
from .metrics import OperatingPoint, decide_nonempty, metrics_at
from .scorestore import Detection, EvalSet, reduce_detections

SCALE_UNIT = "unit"          # [0, 1]
SCALE_SYMMETRIC = "symmetric"  # [-1, 1]
ALLOWED_TARGET_SIZES = (224, 300, 320, 512)

ACTION_MOVE = "move_to_dir"
ACTION_DELETE = "delete"
ACTION_MARK = "mark_only"
ACTIONS = (ACTION_MOVE, ACTION_DELETE, ACTION_MARK)

KEEP = "keep"
DISCARD = "discard"

MARKER_SUFFIX = ".processed"


@dataclass(frozen=True)
class PreprocessSpec:
    target_size: int = 224
    pixel_scale: str = SCALE_SYMMETRIC
    resize_method: str = "bilinear"

    def __post_init__(self):
        if self.target_size not in ALLOWED_TARGET_SIZES:
            raise ValidationError(
                f"target_size must be one of {ALLOWED_TARGET_SIZES}, got {self.target_size}"
            )
        if self.pixel_scale not in (SCALE_UNIT, SCALE_SYMMETRIC):
            raise ValidationError(f"unknown pixel_scale {self.pixel_scale!r}")
        if self.resize_method != "bilinear":
            raise ValidationError(f"unsupported resize_method {self.resize_method!r}")

    def check_against_backend(self, metadata: dict) -> None:
        resolution = metadata.get("input_resolution")
        if resolution is not None and resolution != self.target_size:
            raise ConfigError(
                f"preprocess target_size {self.target_size} does not match "
                f"backend input resolution {resolution}"
            )


def preprocess(data: bytes, spec: PreprocessSpec) -> np.ndarray:
    """Decode, resize (plain bilinear to the square target, no letterboxing)
    and scale pixels. Returns float32 of shape (target, target, 3)."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            rgb = img.convert("RGB").resize(
                (spec.target_size, spec.target_size), Image.BILINEAR
            )
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"undecodable image: {exc}") from exc
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    if spec.pixel_scale == SCALE_SYMMETRIC:
        arr = arr * 2.0 - 1.0
    return arr


@dataclass
class FilterConfig:
    threshold: float
    action: str = ACTION_MOVE
    quarantine_dir: Path | None = None
    patterns: tuple[str, ...] = ("*.jpg", "*.jpeg", "*.png")
    sidecar_marker: bool = False
    max_in_flight: int = 8

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValidationError(f"action must be one of {ACTIONS}, got {self.action!r}")
        if self.action == ACTION_MOVE and self.quarantine_dir is None:
            raise ConfigError("move_to_dir action needs a quarantine_dir")
        if self.max_in_flight < 1:
            raise ValidationError("max_in_flight must be >= 1")


@dataclass(frozen=True)
class FilterDecision:
    path: str
    nonempty_score: float | None
    decision: str
    latency_ms: float
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "nonempty_score": self.nonempty_score,
            "decision": self.decision,
            "latency_ms": self.latency_ms,
            "error": self.error,
        }


@dataclass
class SavingsReport:
    n_processed: int
    n_discarded: int
    n_errors: int
    bytes_saved: int
    discard_fraction: float

    @classmethod
    def from_counts(cls, n_processed, n_discarded, n_errors, bytes_saved) -> "SavingsReport":
        fraction = n_discarded / n_processed if n_processed else 0.0
        return cls(n_processed, n_discarded, n_errors, bytes_saved, fraction)

    def to_dict(self) -> dict:
        return {
            "n_processed": self.n_processed,
            "n_discarded": self.n_discarded,
            "n_errors": self.n_errors,
            "bytes_saved": self.bytes_saved,
            "discard_fraction": self.discard_fraction,
        }


def _score_of(output: float | list[Detection]) -> float:
    if isinstance(output, (int, float)):
        return float(output)
    return reduce_detections(output)


def _apply_action(path: Path, cfg: FilterConfig) -> None:
    if cfg.action == ACTION_MOVE:
        cfg.quarantine_dir.mkdir(parents=True, exist_ok=True)
        shutil.move(str(path), str(cfg.quarantine_dir / path.name))
    elif cfg.action == ACTION_DELETE:
        path.unlink()
    # mark_only: the decision log is the only side effect.


def _decode_one(path: Path, spec: PreprocessSpec):
    data = path.read_bytes()
    return preprocess(data, spec), len(data)


def run_filter(
    paths: Sequence[str | Path],
    cfg: FilterConfig,
    spec: PreprocessSpec,
    backend: InferenceBackend,
    decision_sink: Callable[[FilterDecision], None] | None = None,
) -> tuple[list[FilterDecision], SavingsReport]:
    """Score every input and keep or discard it.

    Every input yields exactly one decision. Decode and I/O failures are
    logged on the decision (score null, decision keep) and the file is left
    untouched. A backend failure aborts the run with partial results already
    flushed through ``decision_sink``.
    """
    spec.check_against_backend(backend.metadata())
    paths = [Path(p) for p in paths]
    decisions: list[FilterDecision] = []
    n_discarded = 0
    n_errors = 0
    bytes_saved = 0
    infer_lock = threading.Lock()

    def emit(decision: FilterDecision) -> None:
        decisions.append(decision)
        if decision_sink is not None:
            decision_sink(decision)

    with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
        window: deque = deque()
        queue = deque(paths)

        def submit_next():
            if queue:
                path = queue.popleft()
                window.append((path, pool.submit(_decode_one, path, spec)))

        for _ in range(min(cfg.max_in_flight, len(queue))):
            submit_next()

        while window:
            path, future = window.popleft()
            submit_next()
            try:
                tensor, size = future.result()
            except (DecodeError, OSError) as exc:
                n_errors += 1
                emit(FilterDecision(str(path), None, KEEP, 0.0, error=str(exc)))
                continue
            started = time.perf_counter()
            with infer_lock:
                output = backend.infer(PreparedInput(tensor, source_id=str(path)))
            score = _score_of(output)
            latency_ms = (time.perf_counter() - started) * 1000.0
            keep = decide_nonempty(score, cfg.threshold)
            decision = FilterDecision(str(path), score, KEEP if keep else DISCARD, latency_ms)
            if not keep:
                n_discarded += 1
                bytes_saved += size
                _apply_action(path, cfg)
            if cfg.sidecar_marker:
                Path(str(path) + MARKER_SUFFIX).touch()
            emit(decision)

    report = SavingsReport.from_counts(len(paths), n_discarded, n_errors, bytes_saved)
    return decisions, report


def simulate_filter(
    e: EvalSet, threshold: float, byte_sizes: dict[str, int] | None = None
) -> tuple[OperatingPoint, SavingsReport]:
    """Offline what-if over a labeled EvalSet: the operating point at the
    threshold plus the savings a deployed filter would have realized."""
    point = metrics_at(e, threshold)
    discarded = [it for it in e.items if not decide_nonempty(it.nonempty_score, threshold)]
    bytes_saved = 0
    if byte_sizes:
        bytes_saved = sum(byte_sizes.get(it.image_id, 0) for it in discarded)
    report = SavingsReport.from_counts(len(e.items), len(discarded), 0, bytes_saved)
    return point, report


def discover_new_files(
    root: Path, patterns: Sequence[str], seen: set[str]
) -> list[Path]:
    """Files under root matching any pattern and not yet seen; updates seen.

    Event replays with duplicates are harmless: the seen set guarantees each
    file is surfaced exactly once. Files carrying a sidecar marker from a
    previous run are skipped too.
    """
    fresh: list[Path] = []
    for path in sorted(root.iterdir()):
        if not path.is_file():
            continue
        name = path.name
        if name.endswith(MARKER_SUFFIX):
            continue
        if not any(fnmatch(name, pat) for pat in patterns):
            continue
        key = str(path)
        if key in seen:
            continue
        if Path(key + MARKER_SUFFIX).exists():
            seen.add(key)
            continue
        seen.add(key)
        fresh.append(path)
    return fresh


def watch_directory(
    root: str | Path,
    cfg: FilterConfig,
    spec: PreprocessSpec,
    backend: InferenceBackend,
    stop: threading.Event,
    poll_interval: float = 0.2,
    idle_timeout: float | None = None,
    decision_sink: Callable[[FilterDecision], None] | None = None,
) -> tuple[list[FilterDecision], SavingsReport]:
    """Poll a directory, filtering each matching file exactly once.

    Runs until ``stop`` is set, or until ``idle_timeout`` seconds pass with
    no new files (when given). Totals are aggregated across batches.
    """
    root = Path(root)
    seen: set[str] = set()
    decisions: list[FilterDecision] = []
    totals = [0, 0, 0]  # discarded, errors, bytes
    last_activity = time.monotonic()
    while not stop.is_set():
        fresh = discover_new_files(root, cfg.patterns, seen)
        if fresh:
            batch, report = run_filter(fresh, cfg, spec, backend, decision_sink)
            decisions.extend(batch)
            totals[0] += report.n_discarded
            totals[1] += report.n_errors
            totals[2] += report.bytes_saved
            last_activity = time.monotonic()
        elif idle_timeout is not None and time.monotonic() - last_activity > idle_timeout:
            break
        else:
            time.sleep(poll_interval)
    report = SavingsReport.from_counts(len(decisions), totals[0], totals[1], totals[2])
    return decisions, report


def write_decisions_jsonl(decisions: Iterable[FilterDecision], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for decision in decisions:
            fh.write(json.dumps(decision.to_dict(), sort_keys=True) + "\n")


def decision_appender(path: str | Path) -> Callable[[FilterDecision], None]:
    """A sink that appends each decision to a JSON Lines log as it happens,
    so partial results survive an aborted run."""
    path = Path(path)

    def sink(decision: FilterDecision) -> None:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(decision.to_dict(), sort_keys=True) + "\n")

    return sink
