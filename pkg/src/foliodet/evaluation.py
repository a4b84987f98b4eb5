"""COCO-protocol detection evaluation for axis-aligned and rotated boxes.

Protocol, in brief: detections are matched greedily per image and
category in descending score order (ties by input position) against the
unmatched ground truth with the highest IoU at or above the threshold.
AP is the 101-point interpolated area under the precision envelope;
mAP@.50:.95 averages AP over IoU thresholds 0.50 to 0.95 in 0.05 steps,
then over categories.  Categories with no ground truth in the split are
reported as n/a and excluded from the means.  The single-number P and R
are read off the IoU=0.50 curve at the score cut maximizing F1; average
recall additionally caps each image at its 100 top-scoring detections.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from operator import attrgetter
from typing import Callable, Sequence

from .corpus import CategoryDef, CorpusDataset
from .errors import EvalInputError
from .geometry import Aabb, Obb, iou_aabb, iou_obb
from .ontology import Ontology

IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * k, 2) for k in range(10))
RECALL_LEVELS = tuple(k / 100.0 for k in range(101))

GEOMETRY_KINDS = ("aabb", "obb")


@dataclass(frozen=True)
class Detection:
    image_id: str
    category_id: int
    geometry: Aabb | Obb
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise EvalInputError(f"detection score must be in [0, 1], got {self.score!r}")


@dataclass(frozen=True)
class EvalConfig:
    split: str = "test"
    geometry: str = "aabb"
    max_detections: int = 100
    f1_iou: float = 0.50

    def __post_init__(self):
        if self.geometry not in GEOMETRY_KINDS:
            raise EvalInputError(f"geometry must be one of {GEOMETRY_KINDS}")
        if self.max_detections < 1:
            raise EvalInputError("max_detections must be positive")


@dataclass(frozen=True)
class PrCurve:
    """Per-rank (recall, precision, score) along the ranked detections."""

    recalls: tuple[float, ...]
    precisions: tuple[float, ...]
    scores: tuple[float, ...]
    n_gt: int


@dataclass(frozen=True)
class MatchResult:
    """TP/FP flags by original detection index; matched flags per GT."""

    det_is_tp: tuple[bool, ...]
    det_gt_index: tuple[int | None, ...]
    gt_matched: tuple[bool, ...]


@dataclass(frozen=True)
class CategoryMetrics:
    """All values are None when the split holds no GT for the category."""

    name: str
    n_gt: int
    ap_by_threshold: tuple[float, ...] | None
    ap: float | None
    ap50: float | None
    precision: float | None
    recall: float | None
    f1_score_cut: float | None
    avg_recall: float | None


@dataclass(frozen=True)
class EvalSummary:
    split: str
    geometry: str
    thresholds: tuple[float, ...]
    categories: tuple[CategoryMetrics, ...]
    map_50_95: float
    map_50: float
    mean_precision: float
    mean_recall: float
    avg_recall: float


def load_detections(document: bytes, ds: CorpusDataset | None = None) -> tuple[Detection, ...]:
    """Parse a detection results array.

    Entries carry either "bbox": [x, y, w, h] or "obb":
    [cx, cy, w, h, theta]; one file must use one kind throughout.
    When a dataset is given, category ids are checked against it.
    """
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise EvalInputError(f"malformed detections JSON: {exc}") from exc
    if not isinstance(data, list):
        raise EvalInputError("detections document must be a JSON array")

    known = {c.id for c in ds.categories} if ds is not None else None
    kind: str | None = None
    out: list[Detection] = []
    for i, entry in enumerate(data):
        try:
            image_id = str(entry["image_id"])
            category_id = int(entry["category_id"])
            score = float(entry["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise EvalInputError(f"detection {i}: {exc}") from exc
        has_bbox = "bbox" in entry
        has_obb = "obb" in entry
        if has_bbox == has_obb:
            raise EvalInputError(f"detection {i}: exactly one of bbox/obb required")
        this_kind = "aabb" if has_bbox else "obb"
        if kind is None:
            kind = this_kind
        elif kind != this_kind:
            raise EvalInputError(
                f"detection {i}: mixed geometry kinds ({kind} then {this_kind})"
            )
        if known is not None and category_id not in known:
            raise EvalInputError(f"detection {i}: unknown category id {category_id}")
        if has_bbox:
            x, y, w, h = (float(v) for v in entry["bbox"])
            geometry: Aabb | Obb = Aabb(x, y, w, h)
        else:
            cx, cy, w, h, theta = (float(v) for v in entry["obb"])
            geometry = Obb.canonical(cx, cy, w, h, theta)
        out.append(Detection(image_id, category_id, geometry, score))
    return tuple(out)


def _greedy_rows(ious: list[list[float]], n_gt: int, threshold: float):
    """Greedy matching over precomputed IoUs; rows already in rank order."""
    matched = [False] * n_gt
    tp: list[bool] = []
    which: list[int | None] = []
    for row in ious:
        best = -1.0
        best_j: int | None = None
        for j, v in enumerate(row):
            if matched[j] or v < threshold:
                continue
            if v > best:
                best = v
                best_j = j
        if best_j is not None:
            matched[best_j] = True
        tp.append(best_j is not None)
        which.append(best_j)
    return tp, which, matched


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[Aabb | Obb],
    iou_threshold: float,
    iou_fn: Callable[[object, object], float],
) -> MatchResult:
    """Match one image's, one category's detections against its GT boxes."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    ious = [[iou_fn(dets[i].geometry, g) for g in gts] for i in order]
    tp, which, matched = _greedy_rows(ious, len(gts), iou_threshold)
    det_is_tp = [False] * len(dets)
    det_gt = [None] * len(dets)
    for rank, i in enumerate(order):
        det_is_tp[i] = tp[rank]
        det_gt[i] = which[rank]
    return MatchResult(tuple(det_is_tp), tuple(det_gt), tuple(matched))


def build_pr_curve(ranked_tp: Sequence[bool], scores: Sequence[float], n_gt: int) -> PrCurve:
    """Cumulative precision/recall along detections already in rank order."""
    if n_gt <= 0:
        raise EvalInputError("a PR curve needs at least one ground truth")
    recalls: list[float] = []
    precisions: list[float] = []
    tp_cum = 0
    for k, is_tp in enumerate(ranked_tp, start=1):
        tp_cum += int(is_tp)
        recalls.append(tp_cum / n_gt)
        precisions.append(tp_cum / k)
    return PrCurve(tuple(recalls), tuple(precisions), tuple(scores), n_gt)


def average_precision(curve: PrCurve) -> float:
    """101-point interpolated AP over the precision envelope."""
    if curve.n_gt <= 0:
        raise EvalInputError("AP is undefined for a category with no ground truth")
    n = len(curve.recalls)
    envelope = [0.0] * n
    best = 0.0
    for k in reversed(range(n)):
        best = max(best, curve.precisions[k])
        envelope[k] = best
    total = 0.0
    j = 0
    for level in RECALL_LEVELS:
        while j < n and curve.recalls[j] < level:
            j += 1
        if j < n:
            total += envelope[j]
    return total / len(RECALL_LEVELS)


def _f1_operating_point(curve: PrCurve) -> tuple[float, float, float | None]:
    """(precision, recall, score cut) at the rank maximizing F1."""
    best_f1 = -1.0
    best = (0.0, 0.0, None)
    for k in range(len(curve.recalls)):
        p = curve.precisions[k]
        r = curve.recalls[k]
        f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
        if f1 > best_f1:
            best_f1 = f1
            best = (p, r, curve.scores[k])
    return best


class _CategoryAccumulator:
    """Ground truth and detections for one category across split images."""

    def __init__(self):
        self.gts_by_image: dict[str, list] = {}
        self.dets_by_image: dict[str, list[tuple[int, Detection]]] = {}
        self.n_gt = 0

    def ranked(self, keep: set[int] | None = None) -> list[tuple[int, Detection]]:
        pairs = [
            (idx, det)
            for dets in self.dets_by_image.values()
            for idx, det in dets
            if keep is None or idx in keep
        ]
        pairs.sort(key=lambda p: (-p[1].score, p[0]))
        return pairs

    def tp_flags(
        self,
        threshold: float,
        iou_fn,
        iou_cache: dict,
        keep: set[int] | None = None,
    ) -> dict[int, bool]:
        """Original-index -> TP flag via per-image greedy matching."""
        flags: dict[int, bool] = {}
        for image_id, dets in self.dets_by_image.items():
            rows = [d for d in dets if keep is None or d[0] in keep]
            rows.sort(key=lambda p: (-p[1].score, p[0]))
            gts = self.gts_by_image.get(image_id, [])
            ious = [iou_cache[(idx, image_id)] for idx, _ in rows]
            tp, _, _ = _greedy_rows(ious, len(gts), threshold)
            for (idx, _), is_tp in zip(rows, tp):
                flags[idx] = is_tp
        return flags


def evaluate(ds: CorpusDataset, dets: Sequence[Detection], cfg: EvalConfig | None = None) -> EvalSummary:
    """Score detections against the dataset's chosen split."""
    cfg = cfg or EvalConfig()
    images = ds.images_in_split(cfg.split)
    if not images:
        raise EvalInputError(f"no images in split {cfg.split!r}")

    if cfg.geometry == "aabb":
        det_type, iou_fn = Aabb, iou_aabb
        gt_geom = attrgetter("aabb")
    else:
        det_type, iou_fn = Obb, iou_obb
        gt_geom = attrgetter("obb")

    known = {c.id for c in ds.categories}
    for d in dets:
        if d.category_id not in known:
            raise EvalInputError(f"unknown detection category id {d.category_id}")
        if not isinstance(d.geometry, det_type):
            raise EvalInputError(
                f"{cfg.geometry} evaluation got a {type(d.geometry).__name__} detection"
            )

    split_ids = {img.image_id for img in images}
    by_name = ds.category_by_name()
    acc: dict[int, _CategoryAccumulator] = {c.id: _CategoryAccumulator() for c in ds.categories}
    for img in images:
        for inst in img.instances:
            a = acc[by_name[inst.category].id]
            a.gts_by_image.setdefault(img.image_id, []).append(gt_geom(inst))
            a.n_gt += 1
    for idx, d in enumerate(dets):
        if d.image_id not in split_ids:
            continue
        acc[d.category_id].dets_by_image.setdefault(d.image_id, []).append((idx, d))

    # Per-image top-k pool for average recall, across categories.
    by_image: dict[str, list[tuple[int, Detection]]] = {}
    for idx, d in enumerate(dets):
        if d.image_id in split_ids:
            by_image.setdefault(d.image_id, []).append((idx, d))
    keep: set[int] = set()
    for pairs in by_image.values():
        pairs.sort(key=lambda p: (-p[1].score, p[0]))
        keep.update(idx for idx, _ in pairs[: cfg.max_detections])

    metrics: list[CategoryMetrics] = []
    for c in ds.categories:
        a = acc[c.id]
        if a.n_gt == 0:
            metrics.append(CategoryMetrics(c.name, 0, None, None, None, None, None, None, None))
            continue

        iou_cache: dict = {}
        for image_id, det_pairs in a.dets_by_image.items():
            gts = a.gts_by_image.get(image_id, [])
            for idx, d in det_pairs:
                iou_cache[(idx, image_id)] = [iou_fn(d.geometry, g) for g in gts]

        ranked = a.ranked()
        scores = tuple(d.score for _, d in ranked)
        aps: list[float] = []
        f1_point: tuple[float, float, float | None] | None = None
        recalls_at_t: list[float] = []
        for t in IOU_THRESHOLDS:
            flags = a.tp_flags(t, iou_fn, iou_cache)
            ranked_tp = [flags[idx] for idx, _ in ranked]
            curve = build_pr_curve(ranked_tp, scores, a.n_gt)
            aps.append(average_precision(curve))
            if t == cfg.f1_iou:
                f1_point = _f1_operating_point(curve)

            capped = a.tp_flags(t, iou_fn, iou_cache, keep=keep)
            recalls_at_t.append(sum(capped.values()) / a.n_gt)

        if f1_point is None:
            flags = a.tp_flags(cfg.f1_iou, iou_fn, iou_cache)
            ranked_tp = [flags[idx] for idx, _ in ranked]
            f1_point = _f1_operating_point(build_pr_curve(ranked_tp, scores, a.n_gt))

        metrics.append(
            CategoryMetrics(
                name=c.name,
                n_gt=a.n_gt,
                ap_by_threshold=tuple(aps),
                ap=sum(aps) / len(aps),
                ap50=aps[0],
                precision=f1_point[0],
                recall=f1_point[1],
                f1_score_cut=f1_point[2],
                avg_recall=sum(recalls_at_t) / len(recalls_at_t),
            )
        )

    scored = [m for m in metrics if m.n_gt > 0]
    if not scored:
        raise EvalInputError(f"no ground truth in split {cfg.split!r}")

    def mean(vals):
        return sum(vals) / len(vals)

    return EvalSummary(
        split=cfg.split,
        geometry=cfg.geometry,
        thresholds=IOU_THRESHOLDS,
        categories=tuple(metrics),
        map_50_95=mean([m.ap for m in scored]),
        map_50=mean([m.ap50 for m in scored]),
        mean_precision=mean([m.precision for m in scored]),
        mean_recall=mean([m.recall for m in scored]),
        avg_recall=mean([m.avg_recall for m in scored]),
    )


def evaluate_rollup(
    ds: CorpusDataset,
    dets: Sequence[Detection],
    o: Ontology,
    level: int,
    cfg: EvalConfig | None = None,
) -> EvalSummary:
    """Evaluate after relabeling GT and detections to ancestors at `level`.

    Categories whose path is shallower than `level` keep their own name.
    """
    if not ds.label_expanded:
        raise EvalInputError("roll-up evaluation needs a label-expanded dataset")
    if level < 1:
        raise EvalInputError("level must be a positive integer")

    rolled_names: list[str] = []
    old_to_new: dict[int, int] = {}
    for c in ds.categories:
        name = o.ancestor_at(c.name, level)
        if name not in rolled_names:
            rolled_names.append(name)
        old_to_new[c.id] = rolled_names.index(name)

    categories = tuple(
        CategoryDef(i, name, o.phrases.get(name)) for i, name in enumerate(rolled_names)
    )
    images = tuple(
        replace(
            img,
            instances=tuple(
                replace(inst, labels=o.path(o.ancestor_at(inst.category, level)))
                for inst in img.instances
            ),
        )
        for img in ds.images
    )
    rolled_ds = replace(ds, categories=categories, images=images)
    rolled_dets = [replace(d, category_id=old_to_new[d.category_id]) for d in dets]
    return evaluate(rolled_ds, rolled_dets, cfg)


def _cell(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.3f}"


def format_summary_table(summary: EvalSummary) -> str:
    """Aligned plain-text table: category rows, metric columns."""
    headers = ["category", "n_gt", "mAP@.50:.95", "mAP@.50", "P", "R", "AR"]
    rows = [
        [
            m.name,
            str(m.n_gt),
            _cell(m.ap),
            _cell(m.ap50),
            _cell(m.precision),
            _cell(m.recall),
            _cell(m.avg_recall),
        ]
        for m in summary.categories
    ]
    n_gt_total = sum(m.n_gt for m in summary.categories)
    rows.append(
        [
            "mean",
            str(n_gt_total),
            _cell(summary.map_50_95),
            _cell(summary.map_50),
            _cell(summary.mean_precision),
            _cell(summary.mean_recall),
            _cell(summary.avg_recall),
        ]
    )
    widths = [max(len(headers[i]), *(len(r[i]) for r in rows)) for i in range(len(headers))]
    lines = []
    header = "  ".join(h.ljust(widths[i]) if i == 0 else h.rjust(widths[i]) for i, h in enumerate(headers))
    lines.append(header)
    lines.append("-" * len(header))
    for r in rows:
        lines.append(
            "  ".join(v.ljust(widths[i]) if i == 0 else v.rjust(widths[i]) for i, v in enumerate(r))
        )
    return "\n".join(lines) + "\n"


def summary_to_json(summary: EvalSummary) -> bytes:
    doc = {
        "split": summary.split,
        "geometry": summary.geometry,
        "iou_thresholds": list(summary.thresholds),
        "map_50_95": summary.map_50_95,
        "map_50": summary.map_50,
        "mean_precision": summary.mean_precision,
        "mean_recall": summary.mean_recall,
        "avg_recall": summary.avg_recall,
        "categories": [
            {
                "name": m.name,
                "n_gt": m.n_gt,
                "ap_by_threshold": list(m.ap_by_threshold) if m.ap_by_threshold else None,
                "map_50_95": m.ap,
                "map_50": m.ap50,
                "precision": m.precision,
                "recall": m.recall,
                "f1_score_cut": m.f1_score_cut,
                "avg_recall": m.avg_recall,
            }
            for m in summary.categories
        ],
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")
