"""Canonical in-memory dataset model plus PAGE XML and COCO JSON parsers.

Datasets are immutable after assembly; pipeline transforms build new
ones.  Parsers are deterministic and order-preserving: instances appear
in document order, and re-parsing the same bytes yields an identical
dataset.
"""

from __future__ import annotations

import json
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass

from .errors import ParseError
from .geometry import (
    Aabb,
    DegeneratePolygonError,
    Obb,
    Polygon,
    aabb_of,
    min_area_obb,
)

logger = logging.getLogger(__name__)

SPLITS = ("trainval", "test", "unassigned")

# Line-level PAGE elements are never ingested as instances.
_LINE_LEVEL_XML_TAGS = {"TextLine", "Word", "Glyph", "Baseline"}

# A source tag counts as line-level when it is a single CamelCase token
# ending in "Line" (DefaultLine, InterlinearLine, ...).  Spaced region names
# such as "Date Line" do not match.
LINE_LEVEL_TAG_RE = re.compile(r"\w*Line")

_CUSTOM_STRUCTURE_RE = re.compile(r"structure\s*\{[^}]*?type\s*:\s*([^;}]+)")


def is_line_level_tag(tag: str) -> bool:
    """True for tags naming line/word/glyph annotations rather than regions."""
    return tag in _LINE_LEVEL_XML_TAGS or LINE_LEVEL_TAG_RE.fullmatch(tag) is not None


@dataclass(frozen=True)
class CategoryDef:
    id: int
    name: str
    descriptive_phrase: str | None = None


@dataclass(frozen=True)
class InstanceRecord:
    """One annotated region with derived boxes.

    ``labels`` is the root-to-leaf ontology path, set by label expansion;
    before expansion the effective category is ``source_tag``.
    """

    polygon: Polygon
    source_tag: str
    aabb: Aabb
    obb: Obb
    labels: tuple[str, ...] | None = None

    @classmethod
    def from_polygon(cls, polygon: Polygon, source_tag: str) -> "InstanceRecord":
        return cls(
            polygon=polygon,
            source_tag=source_tag,
            aabb=aabb_of(polygon),
            obb=min_area_obb(polygon),
        )

    @property
    def category(self) -> str:
        return self.labels[-1] if self.labels else self.source_tag


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    file_name: str
    width: int
    height: int
    instances: tuple[InstanceRecord, ...] = ()
    split: str = "unassigned"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}, expected one of {SPLITS}")


@dataclass(frozen=True)
class CorpusDataset:
    """A corpus: category registry plus images with their instances."""

    corpus_id: str
    categories: tuple[CategoryDef, ...] = ()
    images: tuple[ImageRecord, ...] = ()
    label_expanded: bool = False

    def category_names(self) -> list[str]:
        return [c.name for c in self.categories]

    def category_by_name(self) -> dict[str, CategoryDef]:
        return {c.name: c for c in self.categories}

    def images_in_split(self, split: str) -> tuple[ImageRecord, ...]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}, expected one of {SPLITS}")
        return tuple(img for img in self.images if img.split == split)

    def all_instances(self):
        for img in self.images:
            for inst in img.instances:
                yield img, inst

    @property
    def n_instances(self) -> int:
        return sum(len(img.instances) for img in self.images)


def assemble_dataset(
    corpus_id: str,
    images,
    phrases: dict[str, str] | None = None,
) -> CorpusDataset:
    """Build a dataset from parsed images.

    The category registry lists source tags in first-appearance order
    (deterministic given the image order).  Duplicate image ids are a
    hard error.
    """
    images = tuple(images)
    seen_ids = set()
    for img in images:
        if img.image_id in seen_ids:
            raise ParseError(f"duplicate image_id {img.image_id!r}")
        seen_ids.add(img.image_id)
    tags: list[str] = []
    for img in images:
        for inst in img.instances:
            if inst.source_tag not in tags:
                tags.append(inst.source_tag)
    phrases = phrases or {}
    categories = tuple(
        CategoryDef(i, tag, phrases.get(tag)) for i, tag in enumerate(tags)
    )
    return CorpusDataset(corpus_id=corpus_id, categories=categories, images=images)


# ---------------------------------------------------------------------------
# PAGE XML
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CategoryPolicy:
    """How region categories are resolved from PAGE XML attributes.

    The custom attribute's ``structure {type:...}`` wins over the
    element's ``type`` attribute (both conventions occur across PAGE
    producers).  Regions with neither are skipped with a warning unless
    ``use_element_tag`` falls back to the element name.
    """

    prefer_custom: bool = True
    use_type_attr: bool = True
    use_element_tag: bool = False


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _clamp_points(points, width: int, height: int):
    return [(min(max(x, 0.0), float(width)), min(max(y, 0.0), float(height))) for x, y in points]


def _parse_points_attr(points: str) -> list[tuple[float, float]]:
    out = []
    for token in points.split():
        x_str, _, y_str = token.partition(",")
        out.append((float(x_str), float(y_str)))
    return out


def _resolve_region_tag(elem, policy: CategoryPolicy) -> str | None:
    custom = elem.get("custom")
    if policy.prefer_custom and custom:
        m = _CUSTOM_STRUCTURE_RE.search(custom)
        if m:
            return m.group(1).strip()
    if policy.use_type_attr:
        type_attr = elem.get("type")
        if type_attr:
            return type_attr.strip()
    if policy.use_element_tag:
        return _local(elem.tag)
    return None


def parse_page_xml(
    document: bytes,
    category_policy: CategoryPolicy | None = None,
    warnings: list[str] | None = None,
) -> ImageRecord:
    """Parse one PAGE XML document into an ImageRecord.

    Region elements anywhere under Page are ingested in document order;
    line-level elements (TextLine and descendants) are never ingested.
    Unresolvable or degenerate regions are skipped with a warning, not
    fatal.  Coordinates are clamped to the image bounds before box
    derivation.
    """
    policy = category_policy or CategoryPolicy()
    sink = warnings if warnings is not None else []

    def warn(message: str) -> None:
        sink.append(message)
        if warnings is None:
            logger.warning(message)

    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        line, col = exc.position
        raise ParseError(f"malformed XML at line {line}, column {col}: {exc.msg}") from exc

    page = root if _local(root.tag) == "Page" else None
    if page is None:
        for elem in root.iter():
            if _local(elem.tag) == "Page":
                page = elem
                break
    if page is None:
        raise ParseError("no Page element found")

    file_name = page.get("imageFilename")
    width_attr = page.get("imageWidth")
    height_attr = page.get("imageHeight")
    if not file_name or not width_attr or not height_attr:
        raise ParseError("Page element must carry imageFilename, imageWidth and imageHeight")
    width = int(round(float(width_attr)))
    height = int(round(float(height_attr)))
    if width <= 0 or height <= 0:
        raise ParseError(f"non-positive page dimensions {width}x{height}")

    instances: list[InstanceRecord] = []

    def visit(elem) -> None:
        for child in elem:
            tag = _local(child.tag)
            if tag in _LINE_LEVEL_XML_TAGS:
                continue
            if tag.endswith("Region"):
                ingest(child, tag)
            visit(child)

    def ingest(elem, tag: str) -> None:
        source_tag = _resolve_region_tag(elem, policy)
        if source_tag is None:
            warn(f"{file_name}: {tag} without resolvable type skipped")
            return
        coords = None
        for child in elem:
            if _local(child.tag) == "Coords":
                coords = child
                break
        points_attr = coords.get("points") if coords is not None else None
        if not points_attr:
            warn(f"{file_name}: {source_tag} region without Coords skipped")
            return
        try:
            points = _parse_points_attr(points_attr)
        except ValueError:
            warn(f"{file_name}: {source_tag} region with unparsable Coords skipped")
            return
        try:
            polygon = Polygon.of(_clamp_points(points, width, height))
        except DegeneratePolygonError as exc:
            warn(f"{file_name}: {source_tag} region skipped ({exc})")
            return
        instances.append(InstanceRecord.from_polygon(polygon, source_tag))

    visit(page)

    stem = file_name.rsplit("/", 1)[-1]
    stem = stem.rsplit(".", 1)[0] if "." in stem else stem
    return ImageRecord(
        image_id=stem,
        file_name=file_name,
        width=width,
        height=height,
        instances=tuple(instances),
    )


# ---------------------------------------------------------------------------
# COCO JSON
# ---------------------------------------------------------------------------


def parse_coco(
    document: bytes,
    corpus_id: str = "coco",
    warnings: list[str] | None = None,
) -> CorpusDataset:
    """Parse a COCO JSON annotation file into a dataset.

    When an annotation carries segmentation polygons, the instance
    polygon is the first ring and the OBB is derived from it; otherwise
    the polygon is the bbox corners (theta-0 box).  Category ids are
    re-indexed to be contiguous from 0 in ascending original-id order.
    """
    sink = warnings if warnings is not None else []

    def warn(message: str) -> None:
        sink.append(message)
        if warnings is None:
            logger.warning(message)

    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("COCO document must be a JSON object")
    for key in ("images", "annotations", "categories"):
        if key not in doc or not isinstance(doc[key], list):
            raise ParseError(f"COCO document missing {key!r} array")

    try:
        return _parse_coco_body(doc, corpus_id, warn)
    except KeyError as exc:
        raise ParseError(f"COCO document missing key {exc}") from exc


def _parse_coco_body(doc: dict, corpus_id: str, warn) -> CorpusDataset:
    cats_sorted = sorted(doc["categories"], key=lambda c: c["id"])
    if len({c["id"] for c in cats_sorted}) != len(cats_sorted):
        raise ParseError("duplicate category ids in COCO document")
    if len({c["name"] for c in cats_sorted}) != len(cats_sorted):
        raise ParseError("duplicate category names in COCO document")
    old_to_name = {c["id"]: c["name"] for c in cats_sorted}
    categories = tuple(CategoryDef(i, c["name"]) for i, c in enumerate(cats_sorted))

    image_meta: dict = {}
    for img in doc["images"]:
        if img["id"] in image_meta:
            raise ParseError(f"duplicate image id {img['id']} in COCO document")
        image_meta[img["id"]] = img

    dangling_images = sorted(
        {a["image_id"] for a in doc["annotations"] if a["image_id"] not in image_meta}
    )
    dangling_cats = sorted(
        {a["category_id"] for a in doc["annotations"] if a["category_id"] not in old_to_name}
    )
    if dangling_images or dangling_cats:
        parts = []
        if dangling_images:
            parts.append(f"unknown image ids {dangling_images}")
        if dangling_cats:
            parts.append(f"unknown category ids {dangling_cats}")
        raise ParseError("dangling annotation references: " + "; ".join(parts))

    per_image: dict = {img_id: [] for img_id in image_meta}
    for ann in doc["annotations"]:
        per_image[ann["image_id"]].append(ann)

    images: list[ImageRecord] = []
    for img_id, meta in image_meta.items():
        width = int(meta["width"])
        height = int(meta["height"])
        file_name = meta.get("file_name", f"{img_id}")
        instances: list[InstanceRecord] = []
        for ann in per_image[img_id]:
            tag = old_to_name[ann["category_id"]]
            if ann.get("iscrowd"):
                warn(f"image {img_id}: iscrowd annotation treated as a plain instance")
            seg = ann.get("segmentation")
            if seg and isinstance(seg, list) and seg[0]:
                ring = seg[0]
                points = [(float(ring[i]), float(ring[i + 1])) for i in range(0, len(ring), 2)]
            else:
                x, y, w, h = (float(v) for v in ann["bbox"])
                points = [(x, y), (x + w, y), (x + w, y + h), (x, y + h)]
            try:
                polygon = Polygon.of(_clamp_points(points, width, height))
            except DegeneratePolygonError as exc:
                warn(f"image {img_id}: {tag} annotation skipped ({exc})")
                continue
            instances.append(InstanceRecord.from_polygon(polygon, tag))
        images.append(
            ImageRecord(
                image_id=str(img_id),
                file_name=file_name,
                width=width,
                height=height,
                instances=tuple(instances),
            )
        )

    return CorpusDataset(corpus_id=corpus_id, categories=categories, images=tuple(images))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationIssue:
    kind: str
    where: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[ValidationIssue, ...] = ()

    @property
    def is_clean(self) -> bool:
        return not self.issues

    def by_kind(self, kind: str) -> tuple[ValidationIssue, ...]:
        return tuple(i for i in self.issues if i.kind == kind)

    def __str__(self) -> str:
        if self.is_clean:
            return "clean"
        return "\n".join(f"[{i.kind}] {i.where}: {i.message}" for i in self.issues)


def validate_dataset(ds: CorpusDataset) -> ValidationReport:
    """Report degeneracies, out-of-bounds coordinates, empty categories and
    duplicate ids.  The dataset itself is never modified."""
    from .geometry import polygon_problem

    issues: list[ValidationIssue] = []

    seen_image_ids = set()
    for img in ds.images:
        if img.image_id in seen_image_ids:
            issues.append(
                ValidationIssue("duplicate_id", img.image_id, "duplicate image_id")
            )
        seen_image_ids.add(img.image_id)

    expected_ids = list(range(len(ds.categories)))
    if [c.id for c in ds.categories] != expected_ids:
        issues.append(
            ValidationIssue(
                "duplicate_id",
                ds.corpus_id,
                f"category ids not contiguous from 0: {[c.id for c in ds.categories]}",
            )
        )
    names = [c.name for c in ds.categories]
    if len(set(names)) != len(names):
        issues.append(
            ValidationIssue("duplicate_id", ds.corpus_id, "duplicate category names")
        )

    known = set(names)
    used: set[str] = set()
    for img in ds.images:
        if img.width <= 0 or img.height <= 0:
            issues.append(
                ValidationIssue(
                    "bad_dims", img.image_id, f"non-positive dimensions {img.width}x{img.height}"
                )
            )
            continue
        for k, inst in enumerate(img.instances):
            where = f"{img.image_id}#{k}"
            problem = polygon_problem(inst.polygon)
            if problem is not None:
                issues.append(ValidationIssue("degenerate_polygon", where, problem))
            else:
                for x, y in inst.polygon.vertices:
                    if x < 0 or y < 0 or x > img.width or y > img.height:
                        issues.append(
                            ValidationIssue(
                                "out_of_bounds",
                                where,
                                f"vertex ({x}, {y}) outside {img.width}x{img.height}",
                            )
                        )
                        break
            used.add(inst.category)
            if inst.category not in known:
                issues.append(
                    ValidationIssue(
                        "unknown_tag", where, f"category {inst.category!r} not registered"
                    )
                )
    for name in names:
        if name not in used:
            issues.append(
                ValidationIssue("empty_category", name, "no instances with this category")
            )

    return ValidationReport(tuple(issues))
