"""Model prediction storage: detector reduction, score files, label joins.

A score file is JSON Lines: the first line is the RunManifest object, each
following line one ScoreRecord, all field names snake_case. Scores are kept
at full precision; threshold calibration is sensitive near the operating
point, so nothing is rounded.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import IntegrityError, JoinError, ValidationError
from .manifest import LABELS, LabeledSet

SOURCE_CLASSIFIER = "classifier"
SOURCE_DETECTOR = "detector"
PRECISION_MODES = ("float", "int8", "int8_qat")


@dataclass(frozen=True)
class Detection:
    class_id: str
    confidence: float
    box: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(
                f"detection confidence must be in [0, 1], got {self.confidence}"
            )
        if self.box is not None:
            object.__setattr__(self, "box", tuple(float(v) for v in self.box))


def reduce_detections(
    detections: Iterable[Detection], exclude_classes: frozenset[str] = frozenset()
) -> float:
    """Single nonempty confidence for a detector output: the maximum
    confidence over all detections, regardless of class identity or box.
    No detections means no evidence of an animal, so 0.

    Classes in ``exclude_classes`` (e.g. an explicit background class) do
    not participate in the maximum.
    """
    best = 0.0
    for det in detections:
        if det.class_id in exclude_classes:
            continue
        if det.confidence > best:
            best = det.confidence
    return best


@dataclass(frozen=True)
class RunManifest:
    run_id: str
    model_name: str
    precision_mode: str = "float"
    input_resolution: int = 224
    width_multiplier: float | None = None
    dataset_split: str = ""
    backend_id: str = ""
    background_classes: tuple[str, ...] = ()

    def __post_init__(self):
        if self.precision_mode not in PRECISION_MODES:
            raise ValidationError(
                f"precision_mode must be one of {PRECISION_MODES}, got {self.precision_mode!r}"
            )
        if self.input_resolution <= 0:
            raise ValidationError("input_resolution must be positive")
        object.__setattr__(self, "background_classes", tuple(self.background_classes))

    def to_dict(self) -> dict:
        return asdict(self) | {"background_classes": list(self.background_classes)}


@dataclass(frozen=True)
class ScoreRecord:
    image_id: str
    nonempty_score: float
    source: str = SOURCE_CLASSIFIER
    detections: tuple[Detection, ...] | None = None

    def __post_init__(self):
        if not 0.0 <= self.nonempty_score <= 1.0:
            raise ValidationError(
                f"record {self.image_id}: nonempty_score must be in [0, 1]"
            )
        if self.source not in (SOURCE_CLASSIFIER, SOURCE_DETECTOR):
            raise ValidationError(f"record {self.image_id}: unknown source {self.source!r}")
        if self.detections is not None:
            object.__setattr__(self, "detections", tuple(self.detections))

    def to_dict(self) -> dict:
        out: dict = {
            "image_id": self.image_id,
            "nonempty_score": self.nonempty_score,
            "source": self.source,
        }
        if self.detections is not None:
            out["detections"] = [
                {
                    "class_id": d.class_id,
                    "confidence": d.confidence,
                    "box": list(d.box) if d.box is not None else None,
                }
                for d in self.detections
            ]
        return out


def detector_record(
    image_id: str,
    detections: Sequence[Detection],
    exclude_classes: frozenset[str] = frozenset(),
) -> ScoreRecord:
    """Build a detector ScoreRecord whose score satisfies the reduction
    invariant by construction."""
    return ScoreRecord(
        image_id=image_id,
        nonempty_score=reduce_detections(detections, exclude_classes),
        source=SOURCE_DETECTOR,
        detections=tuple(detections),
    )


def _check_reduction(record: ScoreRecord, manifest: RunManifest) -> None:
    if record.source != SOURCE_DETECTOR or record.detections is None:
        return
    expected = reduce_detections(
        record.detections, frozenset(manifest.background_classes)
    )
    if record.nonempty_score != expected:
        raise ValidationError(
            f"record {record.image_id}: nonempty_score {record.nonempty_score} "
            f"does not equal the detection maximum {expected}"
        )


def write_scores(
    path: str | Path, manifest: RunManifest, records: Iterable[ScoreRecord]
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest.to_dict(), sort_keys=True) + "\n")
        for record in records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def read_scores(path: str | Path) -> tuple[RunManifest, list[ScoreRecord]]:
    """Read a score file; verifies detector reduction and id uniqueness."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise ValidationError(f"{path}: missing run manifest line")
    head = json.loads(lines[0])
    manifest = RunManifest(
        run_id=head["run_id"],
        model_name=head["model_name"],
        precision_mode=head.get("precision_mode", "float"),
        input_resolution=head.get("input_resolution", 224),
        width_multiplier=head.get("width_multiplier"),
        dataset_split=head.get("dataset_split", ""),
        backend_id=head.get("backend_id", ""),
        background_classes=tuple(head.get("background_classes", ())),
    )
    records: list[ScoreRecord] = []
    seen: set[str] = set()
    for line in lines[1:]:
        raw = json.loads(line)
        detections = None
        if raw.get("detections") is not None:
            detections = tuple(
                Detection(
                    class_id=d["class_id"],
                    confidence=d["confidence"],
                    box=tuple(d["box"]) if d.get("box") is not None else None,
                )
                for d in raw["detections"]
            )
        record = ScoreRecord(
            image_id=raw["image_id"],
            nonempty_score=raw["nonempty_score"],
            source=raw.get("source", SOURCE_CLASSIFIER),
            detections=detections,
        )
        if record.image_id in seen:
            raise IntegrityError("duplicate image_id in score file", (record.image_id,))
        seen.add(record.image_id)
        _check_reduction(record, manifest)
        records.append(record)
    return manifest, records


def write_scores_csv(records: Iterable[ScoreRecord], path: str | Path) -> None:
    """Interoperability export: image_id,nonempty_score."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "nonempty_score"])
        for record in records:
            writer.writerow([record.image_id, repr(record.nonempty_score)])


@dataclass(frozen=True)
class EvalItem:
    image_id: str
    label: str
    nonempty_score: float

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValidationError(f"label must be one of {LABELS}, got {self.label!r}")
        if not 0.0 <= self.nonempty_score <= 1.0:
            raise ValidationError(f"{self.image_id}: score must be in [0, 1]")


@dataclass
class EvalSet:
    items: list[EvalItem]

    def __post_init__(self):
        ids = [it.image_id for it in self.items]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise IntegrityError("duplicate image ids in eval set", tuple(dupes))

    def __len__(self) -> int:
        return len(self.items)

    def positives(self) -> int:
        return sum(1 for it in self.items if it.label == LABELS[1])

    def negatives(self) -> int:
        return sum(1 for it in self.items if it.label == LABELS[0])


@dataclass(frozen=True)
class JoinResult:
    eval_set: EvalSet
    unmatched_scores: int
    unmatched_labels: int


def join(scores: Sequence[ScoreRecord], labels: LabeledSet) -> JoinResult:
    """Inner join of predictions with ground truth on image_id."""
    score_ids = [s.image_id for s in scores]
    if len(score_ids) != len(set(score_ids)):
        dupes = sorted({i for i in score_ids if score_ids.count(i) > 1})
        raise IntegrityError("duplicate image ids among scores", tuple(dupes))
    label_by_id = {it.image_id: it.label for it in labels.items}
    items = [
        EvalItem(s.image_id, label_by_id[s.image_id], s.nonempty_score)
        for s in scores
        if s.image_id in label_by_id
    ]
    if not items and (scores or labels.items):
        raise JoinError(
            "scores and labels share no image ids; check the split/run pairing "
            f"({len(scores)} scores vs {len(labels.items)} labels)"
        )
    return JoinResult(
        eval_set=EvalSet(items),
        unmatched_scores=len(scores) - len(items),
        unmatched_labels=len(labels.items) - len(items),
    )
