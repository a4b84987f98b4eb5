"""Shared fixture builders and random generators for the test suite."""

from __future__ import annotations

import math
import random

from foliodet.corpus import (
    CategoryDef,
    CorpusDataset,
    ImageRecord,
    InstanceRecord,
)
from foliodet.geometry import Obb, Polygon

PAGE_NS = "http://schema.primaresearch.org/PAGE/gts/pagecontent/2013-07-15"


def rect_poly(x: float, y: float, w: float, h: float) -> Polygon:
    return Polygon.of([(x, y), (x + w, y), (x + w, y + h), (x, y + h)])


def rect_instance(tag: str, x: float, y: float, w: float, h: float) -> InstanceRecord:
    return InstanceRecord.from_polygon(rect_poly(x, y, w, h), tag)


def make_image(
    image_id: str,
    instances,
    width: int = 1000,
    height: int = 1000,
    split: str = "unassigned",
) -> ImageRecord:
    return ImageRecord(
        image_id=image_id,
        file_name=f"{image_id}.jpg",
        width=width,
        height=height,
        instances=tuple(instances),
        split=split,
    )


def make_dataset(corpus_id: str, images, categories=None) -> CorpusDataset:
    images = tuple(images)
    if categories is None:
        tags: list[str] = []
        for img in images:
            for inst in img.instances:
                if inst.source_tag not in tags:
                    tags.append(inst.source_tag)
        categories = tuple(CategoryDef(i, t) for i, t in enumerate(tags))
    return CorpusDataset(corpus_id=corpus_id, categories=tuple(categories), images=images)


def page_xml(file_name: str, width: int, height: int, regions, ns: str = PAGE_NS) -> bytes:
    """Minimal PAGE XML document. `regions` is a list of dicts with keys
    element, points, and optionally custom/type/children."""

    def render(region: dict, indent: str = "  ") -> str:
        attrs = ""
        if "custom" in region:
            attrs += f' custom="{region["custom"]}"'
        if "type" in region:
            attrs += f' type="{region["type"]}"'
        body = f'{indent}  <Coords points="{region["points"]}"/>\n'
        for child in region.get("children", ()):
            body += render(child, indent + "  ")
        return f'{indent}<{region["element"]}{attrs}>\n{body}{indent}</{region["element"]}>\n'

    regions_text = "".join(render(r) for r in regions)
    xmlns = f' xmlns="{ns}"' if ns else ""
    return (
        f'<?xml version="1.0" encoding="UTF-8"?>\n'
        f"<PcGts{xmlns}>\n"
        f' <Page imageFilename="{file_name}" imageWidth="{width}" imageHeight="{height}">\n'
        f"{regions_text}"
        f" </Page>\n"
        f"</PcGts>\n"
    ).encode("utf-8")


def points_attr(*pts) -> str:
    return " ".join(f"{int(x)},{int(y)}" for x, y in pts)


def rect_points(x: float, y: float, w: float, h: float) -> str:
    return points_attr((x, y), (x + w, y), (x + w, y + h), (x, y + h))


def random_obb(rng: random.Random, span: float = 100.0) -> Obb:
    return Obb.canonical(
        rng.uniform(0.2 * span, 0.8 * span),
        rng.uniform(0.2 * span, 0.8 * span),
        rng.uniform(0.05 * span, 0.5 * span),
        rng.uniform(0.05 * span, 0.5 * span),
        rng.uniform(0.0, math.pi),
    )


def random_obb_pair(rng: random.Random, span: float = 100.0) -> tuple[Obb, Obb]:
    """Pairs biased toward overlap so IoU oracles see non-trivial values."""
    a = random_obb(rng, span)
    b = Obb.canonical(
        a.cx + rng.uniform(-0.3 * span, 0.3 * span),
        a.cy + rng.uniform(-0.3 * span, 0.3 * span),
        rng.uniform(0.05 * span, 0.5 * span),
        rng.uniform(0.05 * span, 0.5 * span),
        rng.uniform(0.0, math.pi),
    )
    return a, b


def random_polygon(rng: random.Random, max_vertices: int = 12, span: float = 100.0) -> Polygon:
    while True:
        n = rng.randint(3, max_vertices)
        pts = [(rng.uniform(0, span), rng.uniform(0, span)) for _ in range(n)]
        try:
            return Polygon.of(pts)
        except Exception:
            continue
