"""Camera-trap dataset manifests and the binary empty/nonempty labeling.

The on-disk format is the COCO-Camera-Traps JSON layout used by the public
camera-trap repositories: top-level ``images`` (id, file_name, location,
season optional, corrupt optional), ``annotations`` (image_id, category_id,
bbox optional as ``[x, y, w, h]``), and ``categories`` (id, name). Unknown
extra fields are ignored.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IntegrityError, ManifestParseError, ValidationError

EMPTY = "empty"
NONEMPTY = "nonempty"
LABELS = (EMPTY, NONEMPTY)

# Covers both dataset vocabularies: "empty" (Caltech-style) and "blank" (SS-style).
DEFAULT_EMPTY_CATEGORIES = frozenset({"empty", "blank"})


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    file_name: str
    location_id: str
    season: str | None = None
    category: str = ""
    byte_size: int | None = None
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if self.byte_size is not None and self.byte_size < 0:
            raise ValidationError(f"image {self.image_id}: negative byte_size")
        for name in ("width", "height"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValidationError(f"image {self.image_id}: {name} must be positive")


@dataclass(frozen=True)
class BoundingBox:
    image_id: str
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"box on {self.image_id}: w and h must be positive")
        if self.x < 0 or self.y < 0:
            raise ValidationError(f"box on {self.image_id}: x and y must be non-negative")


@dataclass
class Manifest:
    images: list[ImageRecord]
    boxes: list[BoundingBox]
    categories: set[str]
    locations: set[str]
    # Images dropped at parse time because of a truthy "corrupt" flag.
    corrupt_excluded: int = field(default=0, compare=False)

    def __post_init__(self):
        ids = [img.image_id for img in self.images]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise IntegrityError("duplicate image ids", tuple(dupes))
        by_id = {img.image_id: img for img in self.images}
        dangling = sorted({b.image_id for b in self.boxes if b.image_id not in by_id})
        if dangling:
            raise IntegrityError("boxes reference unknown image ids", tuple(dangling))
        for box in self.boxes:
            img = by_id[box.image_id]
            if img.width is not None and img.height is not None:
                if box.x + box.w > img.width or box.y + box.h > img.height:
                    raise ValidationError(
                        f"box on {box.image_id} exceeds image bounds "
                        f"({img.width}x{img.height})"
                    )

    def boxed_image_ids(self) -> set[str]:
        return {b.image_id for b in self.boxes}


@dataclass(frozen=True)
class LabelPolicy:
    empty_categories: frozenset[str] = DEFAULT_EMPTY_CATEGORIES
    require_bbox_for_nonempty: bool = False

    def __post_init__(self):
        if not self.empty_categories:
            raise ValidationError("empty_categories must not be empty")


@dataclass(frozen=True)
class LabeledItem:
    image_id: str
    label: str
    location_id: str
    season: str | None = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValidationError(f"label must be one of {LABELS}, got {self.label!r}")


@dataclass
class LabeledSet:
    items: list[LabeledItem]
    # How many manifest images the labeling policy excluded (no box, not empty).
    excluded_count: int = field(default=0, compare=False)

    def __post_init__(self):
        ids = [it.image_id for it in self.items]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise IntegrityError("duplicate image ids in labeled set", tuple(dupes))

    def __len__(self) -> int:
        return len(self.items)

    def image_ids(self) -> set[str]:
        return {it.image_id for it in self.items}

    def count(self, label: str) -> int:
        return sum(1 for it in self.items if it.label == label)

    def locations(self) -> set[str]:
        return {it.location_id for it in self.items}


def parse_manifest(path: str | Path, season_map: dict[str, str] | None = None) -> Manifest:
    """Load a COCO-Camera-Traps JSON document.

    Records flagged corrupt are dropped and counted in ``corrupt_excluded``.
    When an image has no ``season`` field, ``season_map`` (image_id -> season)
    fills it in.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(f"{path}: {exc.msg}", exc.lineno, exc.colno) from exc
    if not isinstance(doc, dict):
        raise ManifestParseError(f"{path}: top level must be an object")

    category_names: dict[object, str] = {}
    for cat in doc.get("categories", []):
        category_names[cat["id"]] = str(cat["name"])

    images: list[ImageRecord] = []
    known_ids: set[str] = set()
    corrupt = 0
    for entry in doc.get("images", []):
        if entry.get("corrupt"):
            corrupt += 1
            continue
        image_id = str(entry["id"])
        season = entry.get("season")
        if season is None and season_map is not None:
            season = season_map.get(image_id)
        images.append(
            ImageRecord(
                image_id=image_id,
                file_name=str(entry.get("file_name", "")),
                location_id=str(entry.get("location", "")),
                season=str(season) if season is not None else None,
                byte_size=entry.get("byte_size"),
                width=entry.get("width"),
                height=entry.get("height"),
            )
        )
        known_ids.add(image_id)

    # First annotation in file order sets the image category; every bbox is kept.
    categories_by_image: dict[str, str] = {}
    boxes: list[BoundingBox] = []
    dangling: list[str] = []
    for ann in doc.get("annotations", []):
        image_id = str(ann["image_id"])
        if image_id not in known_ids:
            dangling.append(image_id)
            continue
        name = category_names.get(ann.get("category_id"), str(ann.get("category_id")))
        categories_by_image.setdefault(image_id, name)
        bbox = ann.get("bbox")
        if bbox is not None:
            x, y, w, h = (float(v) for v in bbox)
            boxes.append(BoundingBox(image_id, x, y, w, h))
    if dangling:
        raise IntegrityError(
            "annotations reference unknown image ids", tuple(sorted(set(dangling)))
        )

    images = [
        ImageRecord(
            image_id=img.image_id,
            file_name=img.file_name,
            location_id=img.location_id,
            season=img.season,
            category=categories_by_image.get(img.image_id, ""),
            byte_size=img.byte_size,
            width=img.width,
            height=img.height,
        )
        for img in images
    ]
    return Manifest(
        images=images,
        boxes=boxes,
        categories=set(category_names.values()),
        locations={img.location_id for img in images},
        corrupt_excluded=corrupt,
    )


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    """Serialize back to the COCO-Camera-Traps layout (parse round-trips)."""
    names = sorted(manifest.categories | {img.category for img in manifest.images if img.category})
    cat_ids = {name: i for i, name in enumerate(names)}

    boxes_by_image: dict[str, list[BoundingBox]] = {}
    for box in manifest.boxes:
        boxes_by_image.setdefault(box.image_id, []).append(box)

    images_out = []
    annotations = []
    for img in manifest.images:
        entry: dict = {"id": img.image_id, "file_name": img.file_name, "location": img.location_id}
        if img.season is not None:
            entry["season"] = img.season
        if img.byte_size is not None:
            entry["byte_size"] = img.byte_size
        if img.width is not None:
            entry["width"] = img.width
        if img.height is not None:
            entry["height"] = img.height
        images_out.append(entry)

        cat_id = cat_ids.get(img.category)
        img_boxes = boxes_by_image.get(img.image_id, [])
        if img_boxes:
            for box in img_boxes:
                annotations.append(
                    {
                        "image_id": img.image_id,
                        "category_id": cat_id,
                        "bbox": [box.x, box.y, box.w, box.h],
                    }
                )
        elif img.category:
            annotations.append({"image_id": img.image_id, "category_id": cat_id})

    doc = {
        "images": images_out,
        "annotations": annotations,
        "categories": [{"id": i, "name": name} for name, i in sorted(cat_ids.items(), key=lambda kv: kv[1])],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def to_labeled(manifest: Manifest, policy: LabelPolicy) -> LabeledSet:
    """Apply the binary labeling policy.

    An image is empty iff its category is in ``policy.empty_categories``
    (category wins even if boxes exist). With ``require_bbox_for_nonempty``,
    images that are neither empty nor box-annotated are excluded and counted
    in the result's ``excluded_count``.
    """
    boxed = manifest.boxed_image_ids()
    items: list[LabeledItem] = []
    excluded = 0
    for img in manifest.images:
        if img.category in policy.empty_categories:
            label = EMPTY
        elif policy.require_bbox_for_nonempty and img.image_id not in boxed:
            excluded += 1
            continue
        else:
            label = NONEMPTY
        items.append(LabeledItem(img.image_id, label, img.location_id, img.season))
    return LabeledSet(items=items, excluded_count=excluded)


@dataclass
class LabelSummary:
    total: int
    by_label: dict[str, int]
    by_location: dict[str, dict[str, int]]
    excluded_count: int = 0

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "by_label": dict(sorted(self.by_label.items())),
            "by_location": {
                loc: dict(sorted(counts.items()))
                for loc, counts in sorted(self.by_location.items())
            },
            "excluded_count": self.excluded_count,
        }


def summarize(labeled: LabeledSet) -> LabelSummary:
    by_label = {EMPTY: 0, NONEMPTY: 0}
    by_location: dict[str, dict[str, int]] = {}
    for item in labeled.items:
        by_label[item.label] += 1
        loc = by_location.setdefault(item.location_id, {EMPTY: 0, NONEMPTY: 0})
        loc[item.label] += 1
    return LabelSummary(
        total=len(labeled.items),
        by_label=by_label,
        by_location=by_location,
        excluded_count=labeled.excluded_count,
    )


LABELED_CSV_HEADER = ("image_id", "label", "location", "season")


def write_labeled_csv(labeled: LabeledSet, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABELED_CSV_HEADER)
        for item in labeled.items:
            writer.writerow(
                [item.image_id, item.label, item.location_id, item.season or ""]
            )


def read_labeled_csv(path: str | Path) -> LabeledSet:
    items: list[LabeledItem] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(LABELED_CSV_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            items.append(
                LabeledItem(
                    image_id=row["image_id"],
                    label=row["label"],
                    location_id=row["location"],
                    season=row["season"] or None,
                )
            )
    return LabeledSet(items=items)


def load_season_map(path: str | Path) -> dict[str, str]:
    """CSV of image_id,season pairs for datasets without a season field."""
    mapping: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return mapping
        rows = [header] if header and header[0] != "image_id" else []
        rows.extend(reader)
        for row in rows:
            if len(row) >= 2:
                mapping[row[0]] = row[1]
    return mapping
