"""Inference backends behind one abstract interface.

Backends take a preprocessed input and return either a nonempty probability
(classifier style) or a list of Detections (detector style). The replay
backend makes benchmarking and the filter pipeline fully testable without
any model runtime installed; the tflite backend loads real artifacts when
the tensorflow package is available.
"""

from __future__ import annotations

import hashlib
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import BackendError
from .scorestore import Detection


@dataclass(frozen=True)
class PreparedInput:
    """A preprocessed tensor plus the identity of its source image.

    ``source_id`` exists so deterministic test backends can replay a score
    per image; runtime backends only look at ``tensor``.
    """

    tensor: np.ndarray
    source_id: str | None = None


class InferenceBackend(ABC):
    """Contract: ``load`` once, then ``infer`` is deterministic for a fixed
    model and input, stateless between calls apart from loaded weights."""

    @abstractmethod
    def load(self, artifact) -> None: ...

    @abstractmethod
    def infer(self, prepared: PreparedInput) -> float | list[Detection]: ...

    @abstractmethod
    def metadata(self) -> dict: ...


class VirtualClock:
    """Monotonic clock advanced explicitly; lets tests inject exact latencies."""

    def __init__(self):
        self._now = 0.0

    def __call__(self) -> float:
        return self._now

    def advance(self, seconds: float) -> None:
        self._now += seconds


class ReplayBackend(InferenceBackend):
    """Deterministic backend replaying scripted scores and latencies.

    Scores come from, in order of precedence: a ``score_fn`` callable, a
    mapping keyed by ``source_id``, or ``default_score``. Per-call latency is
    simulated either on the backend's own VirtualClock (``latencies_ms``,
    cycled) or by really sleeping (``sleep_ms``).
    """

    def __init__(
        self,
        scores: Mapping[str, float] | None = None,
        default_score: float = 0.0,
        score_fn: Callable[[PreparedInput], float] | None = None,
        detections: Mapping[str, Sequence[Detection]] | None = None,
        latencies_ms: Sequence[float] | None = None,
        sleep_ms: float | None = None,
        fail_after: int | None = None,
    ):
        self._scores = dict(scores) if scores else {}
        self._default = default_score
        self._score_fn = score_fn
        self._detections = dict(detections) if detections else None
        self._latencies = list(latencies_ms) if latencies_ms else None
        self._sleep_ms = sleep_ms
        self._fail_after = fail_after
        self._calls = 0
        self.clock = VirtualClock()
        self._loaded = True

    def load(self, artifact) -> None:
        # Nothing to load; accepts any artifact reference for interface parity.
        self._loaded = True

    def infer(self, prepared: PreparedInput) -> float | list[Detection]:
        if self._fail_after is not None and self._calls >= self._fail_after:
            raise BackendError(f"replay backend scripted to fail after {self._fail_after} calls")
        if self._latencies:
            self.clock.advance(self._latencies[self._calls % len(self._latencies)] / 1000.0)
        if self._sleep_ms:
            time.sleep(self._sleep_ms / 1000.0)
        self._calls += 1
        if self._detections is not None and prepared.source_id in self._detections:
            return list(self._detections[prepared.source_id])
        if self._score_fn is not None:
            return self._score_fn(prepared)
        if prepared.source_id is not None and prepared.source_id in self._scores:
            return self._scores[prepared.source_id]
        return self._default

    def metadata(self) -> dict:
        return {"backend_id": "replay", "model_name": "replay", "precision_mode": "float"}


class TFLiteBackend(InferenceBackend):
    """Runs flatbuffer model artifacts with the TensorFlow Lite interpreter.

    Classifier artifacts must emit a single probability tensor of shape
    (1, 1) or (1, 2); shape (1, 2) is read as [empty, nonempty]. Detector
    artifacts must emit the standard postprocessed quadruple
    (boxes, classes, scores, count).
    """

    def __init__(self):
        self._interpreter = None
        self._input = None
        self._outputs = None

    def load(self, artifact) -> None:
        try:
            from tensorflow import lite  # deferred: optional heavy dependency
        except ImportError as exc:
            raise BackendError(
                "the tflite backend requires the tensorflow package"
            ) from exc
        try:
            self._interpreter = lite.Interpreter(model_path=str(artifact))
            self._interpreter.allocate_tensors()
        except Exception as exc:
            raise BackendError(f"failed to load model artifact {artifact}: {exc}") from exc
        self._input = self._interpreter.get_input_details()[0]
        self._outputs = self._interpreter.get_output_details()

    def infer(self, prepared: PreparedInput) -> float | list[Detection]:
        if self._interpreter is None:
            raise BackendError("tflite backend used before load()")
        tensor = np.asarray(prepared.tensor, dtype=self._input["dtype"])
        if tensor.ndim == 3:
            tensor = tensor[np.newaxis, ...]
        self._interpreter.set_tensor(self._input["index"], tensor)
        self._interpreter.invoke()
        values = [self._interpreter.get_tensor(o["index"]) for o in self._outputs]
        if len(values) >= 4:
            boxes, classes, scores, count = values[0], values[1], values[2], values[3]
            n = int(np.ravel(count)[0])
            return [
                Detection(
                    class_id=str(int(np.ravel(classes)[i])),
                    confidence=float(np.clip(np.ravel(scores)[i], 0.0, 1.0)),
                )
                for i in range(n)
            ]
        flat = np.ravel(values[0])
        if flat.size == 1:
            return float(np.clip(flat[0], 0.0, 1.0))
        if flat.size == 2:
            return float(np.clip(flat[1], 0.0, 1.0))
        raise BackendError(
            f"unexpected classifier output of size {flat.size}; expected 1 or 2"
        )

    def metadata(self) -> dict:
        meta: dict = {"backend_id": "tflite"}
        if self._input is not None:
            shape = list(self._input["shape"])
            if len(shape) == 4:
                meta["input_resolution"] = int(shape[1])
        return meta


_BACKENDS: dict[str, type[InferenceBackend]] = {
    "replay": ReplayBackend,
    "tflite": TFLiteBackend,
}


def get_backend(name: str, **kwargs) -> InferenceBackend:
    try:
        cls = _BACKENDS[name]
    except KeyError:
        known = ", ".join(sorted(_BACKENDS))
        raise BackendError(f"unknown backend {name!r}; available: {known}") from None
    return cls(**kwargs)


def register_backend(name: str, cls: type[InferenceBackend]) -> None:
    _BACKENDS[name] = cls


def tensor_digest(tensor: np.ndarray) -> str:
    """Stable identity for a preprocessed tensor (replay keying fallback)."""
    return hashlib.sha256(np.ascontiguousarray(tensor).tobytes()).hexdigest()[:16]
