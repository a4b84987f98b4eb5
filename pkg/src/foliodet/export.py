"""Writers for COCO-AABB JSON, YOLO-AABB/OBB label trees, and manifests.

Writers are pure: they return bytes (or a relative-path -> bytes map)
and never touch the filesystem, so callers can write atomically after
everything succeeded.  Output is deterministic byte-for-byte.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace

from .corpus import CategoryDef, CorpusDataset
from .errors import ConfigError, ParseError
from .geometry import Aabb, Obb, Polygon, min_area_obb, obb_corners, polygon_area

FORMATS = ("coco_aabb", "yolo_aabb", "yolo_obb")

_SLUG_RE = re.compile(r"[^\w.-]+")


@dataclass(frozen=True)
class ExportSpec:
    format: str = "coco_aabb"
    label_level: str | int = "leaf"
    output_root: str = "."
    coordinate_precision: int = 6

    def __post_init__(self):
        if self.format not in FORMATS:
            raise ConfigError(f"unknown export format {self.format!r}")
        if self.coordinate_precision < 4:
            raise ConfigError("coordinate_precision must be at least 4")
        if self.label_level != "leaf" and (
            not isinstance(self.label_level, int) or self.label_level < 1
        ):
            raise ConfigError("label_level must be 'leaf' or a positive integer")


def _paths_by_node(ds: CorpusDataset) -> dict[str, tuple[str, ...]]:
    """Root-to-node path for every node named in any instance's labels."""
    paths: dict[str, tuple[str, ...]] = {}
    for img in ds.images:
        for inst in img.instances:
            if not inst.labels:
                continue
            for i, name in enumerate(inst.labels):
                paths.setdefault(name, inst.labels[: i + 1])
    return paths


def relabel_to_level(ds: CorpusDataset, level: str | int) -> CorpusDataset:
    """Collapse categories to their ancestor at `level` ("leaf" = no-op).

    Nodes shallower than `level` keep their own name.  The output
    registry holds the surviving names in original registry order.
    """
    if level == "leaf":
        return ds
    if not ds.label_expanded:
        raise ConfigError("hierarchy-level export needs a label-expanded dataset")

    paths = _paths_by_node(ds)

    def at_level(name: str) -> str:
        path = paths.get(name, (name,))
        return path[min(level, len(path)) - 1]

    names: list[str] = []
    for c in ds.categories:
        name = at_level(c.name)
        if name not in names:
            names.append(name)
    phrase = {c.name: c.descriptive_phrase for c in ds.categories}
    categories = tuple(
        CategoryDef(i, name, phrase.get(name)) for i, name in enumerate(names)
    )
    images = tuple(
        replace(
            img,
            instances=tuple(
                replace(inst, labels=paths[inst.category][: min(level, len(paths[inst.category]))])
                for inst in img.instances
            ),
        )
        for img in ds.images
    )
    return replace(ds, categories=categories, images=images)


def _fmt(value: float, precision: int) -> str:
    return f"{value:.{precision}f}"


def _category_ids(ds: CorpusDataset) -> dict[str, int]:
    return {c.name: c.id for c in ds.categories}


def write_coco_aabb(ds: CorpusDataset, spec: ExportSpec) -> bytes:
    """COCO JSON with pixel bboxes and the source polygon as segmentation."""
    ds = relabel_to_level(ds, spec.label_level)
    ids = _category_ids(ds)
    prec = spec.coordinate_precision

    images = []
    annotations = []
    ann_id = 1
    for i, img in enumerate(ds.images, start=1):
        images.append(
            {
                "id": i,
                "file_name": img.file_name,
                "width": img.width,
                "height": img.height,
            }
        )
        for inst in img.instances:
            ring: list[float] = []
            for x, y in inst.polygon.vertices:
                ring.append(round(x, prec))
                ring.append(round(y, prec))
            box = inst.aabb
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": i,
                    "category_id": ids[inst.category],
                    "bbox": [
                        round(box.x, prec),
                        round(box.y, prec),
                        round(box.w, prec),
                        round(box.h, prec),
                    ],
                    "area": round(polygon_area(inst.polygon), prec),
                    "segmentation": [ring],
                    "iscrowd": 0,
                }
            )
            ann_id += 1

    doc = {
        "images": images,
        "annotations": annotations,
        "categories": [
            {"id": c.id, "name": c.name, "supercategory": ""} for c in ds.categories
        ],
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def _label_slug(image_id: str) -> str:
    return _SLUG_RE.sub("__", image_id)


def _label_paths(ds: CorpusDataset) -> dict[str, str]:
    out: dict[str, str] = {}
    taken: set[str] = set()
    for img in ds.images:
        path = f"labels/{_label_slug(img.image_id)}.txt"
        if path in taken:
            raise ConfigError(f"label file collision for image {img.image_id!r}")
        taken.add(path)
        out[img.image_id] = path
    return out


def _require_dims(ds: CorpusDataset) -> None:
    for img in ds.images:
        if img.width <= 0 or img.height <= 0:
            raise ConfigError(f"image {img.image_id!r} has zero dimension")


def _names_bytes(ds: CorpusDataset) -> bytes:
    return ("".join(c.name + "\n" for c in ds.categories)).encode("utf-8")


def _clamp01(v: float) -> float:
    return min(1.0, max(0.0, v))


def write_yolo_obb(ds: CorpusDataset, spec: ExportSpec) -> dict[str, bytes]:
    """One label file per image plus names.txt.

    Line format: "class x1 y1 x2 y2 x3 y3 x4 y4" with corners normalized
    by image size, in counter-clockwise order starting at the corner with
    the smallest (y, x).
    """
    ds = relabel_to_level(ds, spec.label_level)
    _require_dims(ds)
    ids = _category_ids(ds)
    label_paths = _label_paths(ds)
    prec = spec.coordinate_precision

    files = {"names.txt": _names_bytes(ds)}
    for img in ds.images:
        lines = []
        for inst in img.instances:
            # Pick the start corner on the quantized values that get
            # written, so rotation round-off cannot flip the ordering.
            norm = [
                (
                    round(_clamp01(x / img.width), prec),
                    round(_clamp01(y / img.height), prec),
                )
                for x, y in obb_corners(inst.obb)
            ]
            start = min(range(4), key=lambda k: (norm[k][1], norm[k][0]))
            ordered = norm[start:] + norm[:start]
            parts = [str(ids[inst.category])]
            for x, y in ordered:
                parts.append(_fmt(x, prec))
                parts.append(_fmt(y, prec))
            lines.append(" ".join(parts) + "\n")
        files[label_paths[img.image_id]] = "".join(lines).encode("utf-8")
    return files


def write_yolo_aabb(ds: CorpusDataset, spec: ExportSpec) -> dict[str, bytes]:
    """One label file per image plus names.txt; lines "class cx cy w h"."""
    ds = relabel_to_level(ds, spec.label_level)
    _require_dims(ds)
    ids = _category_ids(ds)
    label_paths = _label_paths(ds)
    prec = spec.coordinate_precision

    files = {"names.txt": _names_bytes(ds)}
    for img in ds.images:
        lines = []
        for inst in img.instances:
            box = inst.aabb
            parts = [
                str(ids[inst.category]),
                _fmt(_clamp01((box.x + box.w / 2) / img.width), prec),
                _fmt(_clamp01((box.y + box.h / 2) / img.height), prec),
                _fmt(_clamp01(box.w / img.width), prec),
                _fmt(_clamp01(box.h / img.height), prec),
            ]
            lines.append(" ".join(parts) + "\n")
        files[label_paths[img.image_id]] = "".join(lines).encode("utf-8")
    return files


def write_manifest(ds: CorpusDataset, spec: ExportSpec) -> bytes:
    """Dataset summary: categories (with paths and phrases), images with
    split membership, and per-split instance counts."""
    paths = _paths_by_node(ds)
    categories = [
        {
            "id": c.id,
            "name": c.name,
            "descriptive_phrase": c.descriptive_phrase,
            "path": list(paths[c.name]) if c.name in paths else [c.name],
            "level": len(paths[c.name]) if c.name in paths else 1,
        }
        for c in ds.categories
    ]
    images = [
        {
            "image_id": img.image_id,
            "file_name": img.file_name,
            "width": img.width,
            "height": img.height,
            "split": img.split,
            "n_instances": len(img.instances),
        }
        for img in ds.images
    ]
    splits: dict[str, dict] = {}
    for img in ds.images:
        entry = splits.setdefault(
            img.split, {"n_images": 0, "n_instances": 0, "per_category": {}}
        )
        entry["n_images"] += 1
        entry["n_instances"] += len(img.instances)
        for inst in img.instances:
            per = entry["per_category"]
            per[inst.category] = per.get(inst.category, 0) + 1
    for entry in splits.values():
        entry["per_category"] = dict(sorted(entry["per_category"].items()))

    doc = {
        "corpus_id": ds.corpus_id,
        "label_expanded": ds.label_expanded,
        "categories": categories,
        "images": images,
        "splits": dict(sorted(splits.items())),
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def read_names(text: str) -> list[str]:
    return [line for line in text.splitlines() if line.strip()]


def read_yolo_obb_file(
    text: str, width: int, height: int
) -> list[tuple[int, Obb]]:
    """Parse one YOLO-OBB label file back into (class_index, Obb) pairs."""
    out: list[tuple[int, Obb]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 9:
            raise ParseError(f"line {lineno}: expected 9 fields, got {len(parts)}")
        cls = int(parts[0])
        vals = [float(p) for p in parts[1:]]
        corners = [
            (vals[2 * k] * width, vals[2 * k + 1] * height) for k in range(4)
        ]
        out.append((cls, min_area_obb(Polygon.of(corners))))
    return out


def read_yolo_aabb_file(
    text: str, width: int, height: int
) -> list[tuple[int, Aabb]]:
    """Parse one YOLO-AABB label file back into (class_index, Aabb) pairs."""
    out: list[tuple[int, Aabb]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ParseError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        cls = int(parts[0])
        cx, cy, w, h = (float(p) for p in parts[1:])
        out.append(
            (
                cls,
                Aabb(
                    (cx - w / 2) * width,
                    (cy - h / 2) * height,
                    w * width,
                    h * height,
                ),
            )
        )
    return out
