"""Precision-recall analysis and recall-targeted threshold calibration.

The decision rule everywhere is: predict nonempty iff nonempty_score >=
threshold. Nonempty is the positive class; empty is the negative class, so
the true negative rate (TNR) is the fraction of empty images that a deployed
filter would discard.

Counts are exact integers; ratios are computed in double precision. Ratio
conventions at zero denominators: precision = 1.0 when nothing is predicted
positive (anchors the curve's sentinel point), recall = 0.0 when there are
no positives, tnr = 0.0 when there are no negatives. Degenerate sets aside,
every ratio is an honest quotient of counts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError
from .manifest import NONEMPTY
from .scorestore import EvalSet


def decide_nonempty(score: float, threshold: float) -> bool:
    """The shared keep/discard rule: nonempty iff score >= threshold."""
    return score >= threshold


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    tnr: float

    @classmethod
    def from_counts(cls, threshold: float, tp: int, fp: int, tn: int, fn: int) -> "OperatingPoint":
        precision = tp / (tp + fp) if tp + fp > 0 else 1.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        tnr = tn / (tn + fp) if tn + fp > 0 else 0.0
        return cls(threshold, tp, fp, tn, fn, precision, recall, tnr)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "tnr": self.tnr,
        }


@dataclass
class PRCurve:
    points: list[OperatingPoint]

    def __post_init__(self):
        for a, b in zip(self.points, self.points[1:]):
            if not b.threshold < a.threshold:
                raise ValidationError("curve thresholds must be strictly decreasing")
            if b.recall < a.recall:
                raise ValidationError("recall must be non-decreasing along the curve")


@dataclass(frozen=True)
class CalibrationResult:
    threshold: float
    point: OperatingPoint
    target_recall: float
    achieved: bool

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "point": self.point.to_dict(),
            "target_recall": self.target_recall,
            "achieved_recall": self.point.recall,
            "achieved": self.achieved,
        }


@dataclass(frozen=True)
class DeltaReport:
    run_a: str
    run_b: str
    point_a: OperatingPoint
    point_b: OperatingPoint
    precision_delta: float
    tnr_delta: float
    degraded: bool

    def to_dict(self) -> dict:
        return {
            "run_a": self.run_a,
            "run_b": self.run_b,
            "point_a": self.point_a.to_dict(),
            "point_b": self.point_b.to_dict(),
            "precision_delta": self.precision_delta,
            "tnr_delta": self.tnr_delta,
            "degraded": self.degraded,
        }


def _grouped_counts(e: EvalSet) -> tuple[list[tuple[float, int, int]], int, int]:
    """Distinct scores in descending order with per-score positive/negative
    tallies, plus the total positive and negative counts."""
    tallies: dict[float, list[int]] = {}
    n_pos = 0
    n_neg = 0
    for item in e.items:
        cell = tallies.setdefault(item.nonempty_score, [0, 0])
        if item.label == NONEMPTY:
            cell[0] += 1
            n_pos += 1
        else:
            cell[1] += 1
            n_neg += 1
    groups = [(score, pos, neg) for score, (pos, neg) in tallies.items()]
    groups.sort(key=lambda g: -g[0])
    return groups, n_pos, n_neg


def pr_curve(e: EvalSet) -> PRCurve:
    """One operating point per distinct score (ties grouped), descending,
    preceded by a sentinel at threshold +inf (recall 0, precision 1)."""
    groups, n_pos, n_neg = _grouped_counts(e)
    if n_pos == 0 or n_neg == 0:
        raise ValidationError(
            f"a PR curve needs both classes (positives={n_pos}, negatives={n_neg})"
        )
    points = [OperatingPoint.from_counts(math.inf, 0, 0, n_neg, n_pos)]
    tp = 0
    fp = 0
    for score, pos, neg in groups:
        tp += pos
        fp += neg
        points.append(OperatingPoint.from_counts(score, tp, fp, n_neg - fp, n_pos - tp))
    return PRCurve(points)


def metrics_at(e: EvalSet, threshold: float) -> OperatingPoint:
    """Confusion counts under the >= rule at an arbitrary threshold."""
    tp = fp = tn = fn = 0
    for item in e.items:
        predicted_nonempty = decide_nonempty(item.nonempty_score, threshold)
        if item.label == NONEMPTY:
            if predicted_nonempty:
                tp += 1
            else:
                fn += 1
        else:
            if predicted_nonempty:
                fp += 1
            else:
                tn += 1
    return OperatingPoint.from_counts(threshold, tp, fp, tn, fn)


def calibrate_threshold(e: EvalSet, target_recall: float = 0.96) -> CalibrationResult:
    """Largest candidate threshold whose recall meets the target.

    Candidates are the distinct observed scores. Because the decision rule is
    >=, the smallest score always admits every positive, so any target <= 1
    is attainable; the achieved recall is reported alongside the target since
    an exact match is generally impossible on finite data.
    """
    if not 0.0 < target_recall <= 1.0:
        raise ValidationError(f"target_recall must be in (0, 1], got {target_recall}")
    groups, n_pos, n_neg = _grouped_counts(e)
    if n_pos == 0:
        raise ValidationError("calibration needs at least one positive")
    tp = 0
    fp = 0
    for score, pos, neg in groups:
        tp += pos
        fp += neg
        if tp / n_pos >= target_recall:
            point = OperatingPoint.from_counts(score, tp, fp, n_neg - fp, n_pos - tp)
            return CalibrationResult(score, point, target_recall, achieved=True)
    # Unreachable under the >= rule; kept as a defensive fallback.
    lowest = groups[-1][0]
    return CalibrationResult(lowest, metrics_at(e, lowest), target_recall, achieved=False)


def pr_auc(e: EvalSet) -> float:
    """Area under the precision-recall curve by trapezoidal integration over
    recall between consecutive curve points (sentinel included)."""
    return auc_of_curve(pr_curve(e))


def compare_runs(
    a: EvalSet,
    b: EvalSet,
    target_recall: float = 0.96,
    degradation_margin: float = 0.05,
    run_a: str = "a",
    run_b: str = "b",
) -> DeltaReport:
    """Calibrate each run independently at the target recall and report the
    deltas (b minus a). ``degraded`` flags a TNR drop larger than the margin,
    the failure mode quantized models can show at a fixed recall level."""
    cal_a = calibrate_threshold(a, target_recall)
    cal_b = calibrate_threshold(b, target_recall)
    precision_delta = cal_b.point.precision - cal_a.point.precision
    tnr_delta = cal_b.point.tnr - cal_a.point.tnr
    return DeltaReport(
        run_a=run_a,
        run_b=run_b,
        point_a=cal_a.point,
        point_b=cal_b.point,
        precision_delta=precision_delta,
        tnr_delta=tnr_delta,
        degraded=tnr_delta < -degradation_margin,
    )


CURVE_CSV_HEADER = ("threshold", "tp", "fp", "tn", "fn", "precision", "recall", "tnr")


def write_curve_csv(curve: PRCurve, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_CSV_HEADER)
        for p in curve.points:
            writer.writerow(
                [repr(p.threshold), p.tp, p.fp, p.tn, p.fn,
                 repr(p.precision), repr(p.recall), repr(p.tnr)]
            )


def read_curve_csv(path: str | Path) -> PRCurve:
    points: list[OperatingPoint] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CURVE_CSV_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            points.append(
                OperatingPoint(
                    threshold=float(row["threshold"]),
                    tp=int(row["tp"]),
                    fp=int(row["fp"]),
                    tn=int(row["tn"]),
                    fn=int(row["fn"]),
                    precision=float(row["precision"]),
                    recall=float(row["recall"]),
                    tnr=float(row["tnr"]),
                )
            )
    return PRCurve(points)


def auc_of_curve(curve: PRCurve) -> float:
    """Trapezoid over recall for an already-built curve (e.g. read from CSV)."""
    area = 0.0
    for a, b in zip(curve.points, curve.points[1:]):
        area += (b.recall - a.recall) * (a.precision + b.precision) / 2.0
    return area
