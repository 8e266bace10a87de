"""Partitioning policies for labeled camera-trap sets.

Supports location-disjoint splits (new-site generalization), season splits
(new-time generalization), per-location caps on one class, exact class
balancing, bbox-only subsets, and random whole-location holdouts. Every
seeded operation is a pure function of (input multiset, seed): items are
canonically ordered by image_id before sampling, so input order never
changes a selection.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, ValidationError
from .manifest import EMPTY, NONEMPTY, LabeledItem, LabeledSet, Manifest, write_labeled_csv
from .rng import CounterRng

PARTITIONS = ("train", "val_dev", "val")


@dataclass
class SplitResult:
    train: LabeledSet
    val_dev: LabeledSet
    val: LabeledSet
    provenance: dict = field(default_factory=dict, compare=False)

    def partitions(self) -> dict[str, LabeledSet]:
        return {"train": self.train, "val_dev": self.val_dev, "val": self.val}

    def __post_init__(self):
        seen: set[str] = set()
        for name, part in self.partitions().items():
            overlap = seen & part.image_ids()
            if overlap:
                raise ValidationError(
                    f"partition {name} shares image ids with another partition: "
                    f"{sorted(overlap)[:5]}"
                )
            seen |= part.image_ids()


def _check_assignment(assignment: dict[str, str], kind: str) -> None:
    bad = sorted({p for p in assignment.values() if p not in PARTITIONS})
    if bad:
        raise ConfigError(f"{kind} assignment uses unknown partitions {bad}; expected {PARTITIONS}")


def split_by_location(labeled: LabeledSet, assignment: dict[str, str]) -> SplitResult:
    """Route every item to its location's partition. Partitions end up
    location-disjoint by construction."""
    _check_assignment(assignment, "location")
    missing = sorted(labeled.locations() - set(assignment))
    if missing:
        raise ConfigError(f"locations without a partition assignment: {missing}")
    buckets: dict[str, list[LabeledItem]] = {p: [] for p in PARTITIONS}
    for item in labeled.items:
        buckets[assignment[item.location_id]].append(item)
    return SplitResult(
        train=LabeledSet(buckets["train"]),
        val_dev=LabeledSet(buckets["val_dev"]),
        val=LabeledSet(buckets["val"]),
        provenance={"policy": "by_location"},
    )


def split_by_time(labeled: LabeledSet, assignment: dict[str, str]) -> SplitResult:
    """Route every item by season; a location may span several partitions."""
    _check_assignment(assignment, "season")
    no_season = sorted(it.image_id for it in labeled.items if it.season is None)
    if no_season:
        raise ConfigError(
            f"{len(no_season)} items have no season (first: {no_season[:5]}); "
            "a season split needs one per item"
        )
    missing = sorted({it.season for it in labeled.items} - set(assignment))  # type: ignore[arg-type]
    if missing:
        raise ConfigError(f"seasons without a partition assignment: {missing}")
    buckets: dict[str, list[LabeledItem]] = {p: [] for p in PARTITIONS}
    for item in labeled.items:
        buckets[assignment[item.season]].append(item)  # type: ignore[index]
    return SplitResult(
        train=LabeledSet(buckets["train"]),
        val_dev=LabeledSet(buckets["val_dev"]),
        val=LabeledSet(buckets["val"]),
        provenance={"policy": "by_time"},
    )


def cap_class_per_location(
    labeled: LabeledSet, label: str, cap: int, seed: int
) -> LabeledSet:
    """Keep at most ``cap`` items of ``label`` per location, seeded uniform
    sampling without replacement. Other-class items pass through untouched."""
    if cap < 1:
        raise ValidationError(f"cap must be >= 1, got {cap}")
    per_location: dict[str, list[str]] = {}
    for item in labeled.items:
        if item.label == label:
            per_location.setdefault(item.location_id, []).append(item.image_id)

    rng = CounterRng(seed)
    kept: set[str] = set()
    for location in sorted(per_location):
        ids = sorted(per_location[location])
        if len(ids) <= cap:
            kept.update(ids)
        else:
            kept.update(rng.sample(ids, cap))

    items = [it for it in labeled.items if it.label != label or it.image_id in kept]
    return LabeledSet(items)


def balance_classes(labeled: LabeledSet, seed: int) -> LabeledSet:
    """Downsample the majority class (seeded, uniform, without replacement)
    to the minority count, yielding exactly equal class counts."""
    n_empty = labeled.count(EMPTY)
    n_nonempty = labeled.count(NONEMPTY)
    if n_empty == 0 or n_nonempty == 0:
        raise ValidationError(
            f"balancing needs both classes present (empty={n_empty}, nonempty={n_nonempty})"
        )
    if n_empty == n_nonempty:
        return LabeledSet(list(labeled.items))
    majority = EMPTY if n_empty > n_nonempty else NONEMPTY
    target = min(n_empty, n_nonempty)
    ids = sorted(it.image_id for it in labeled.items if it.label == majority)
    kept = set(CounterRng(seed).sample(ids, target))
    items = [it for it in labeled.items if it.label != majority or it.image_id in kept]
    return LabeledSet(items)


def select_bbox_subset(labeled: LabeledSet, manifest: Manifest) -> LabeledSet:
    """Drop nonempty items lacking any bounding box; empty items stay."""
    boxed = manifest.boxed_image_ids()
    items = [it for it in labeled.items if it.label == EMPTY or it.image_id in boxed]
    return LabeledSet(items)


def random_location_holdout(
    labeled: LabeledSet, k: int, seed: int
) -> tuple[LabeledSet, LabeledSet]:
    """Move k whole locations, chosen at random, into a holdout set."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    locations = sorted(labeled.locations())
    if len(locations) < k:
        raise ConfigError(f"cannot hold out {k} locations, only {len(locations)} present")
    held = set(CounterRng(seed).sample(locations, k))
    holdout = [it for it in labeled.items if it.location_id in held]
    remainder = [it for it in labeled.items if it.location_id not in held]
    return LabeledSet(remainder), LabeledSet(holdout)


def load_assignment_csv(path: str | Path) -> dict[str, str]:
    """CSV of key,partition rows (location or season as the key)."""
    assignment: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0] in ("key", "location", "season"):
                continue
            if len(row) < 2:
                raise ConfigError(f"{path}: assignment row needs key,partition, got {row}")
            assignment[row[0]] = row[1]
    _check_assignment(assignment, str(path))
    return assignment


def save_split(result: SplitResult, out_dir: str | Path) -> dict[str, Path]:
    """Persist the three partitions as CSV plus a provenance sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    counts: dict[str, dict[str, int]] = {}
    for name, part in result.partitions().items():
        path = out_dir / f"{name}.csv"
        write_labeled_csv(part, path)
        paths[name] = path
        counts[name] = {EMPTY: part.count(EMPTY), NONEMPTY: part.count(NONEMPTY)}
    sidecar = dict(result.provenance)
    sidecar["counts"] = counts
    prov_path = out_dir / "provenance.json"
    prov_path.write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    paths["provenance"] = prov_path
    return paths
