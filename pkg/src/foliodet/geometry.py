"""Exact 2-D geometry for annotation regions.

Convex hulls, minimum-area oriented rectangles (rotating calipers),
convex polygon clipping (Sutherland-Hodgman) and IoU for both
axis-aligned and rotated boxes.  All coordinates are pixels; the image
convention (y grows downward) does not matter here because every
operation is orientation-consistent: "counter-clockwise" always means
positive shoelace area.

Oriented boxes use a canonical form so equality is testable:
``w >= h > 0``, ``theta`` (rotation of the w-axis from +x, radians) in
``[0, pi)``, and ``theta`` in ``[0, pi/2)`` when ``w == h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import FoliodetError

Point2 = tuple[float, float]

# Max outward distance tolerated by containment checks (px).
CONTAINMENT_EPS = 1e-6
# Tolerance for IoU identities (self-IoU, aabb/obb agreement).
IOU_EPS = 1e-9


class GeometryError(FoliodetError, ValueError):
    pass


class DegeneratePolygonError(GeometryError):
    pass


@dataclass(frozen=True)
class Polygon:
    """An ordered ring of vertices. Use :meth:`of` to build a validated one."""

    vertices: tuple[Point2, ...]

    @classmethod
    def of(cls, points) -> "Polygon":
        """Clean and validate a point sequence into a Polygon.

        Drops a closing vertex equal to the first and collapses runs of
        identical consecutive vertices.  Raises DegeneratePolygonError if
        fewer than 3 distinct vertices remain or the ring has zero area.
        """
        pts = [(float(x), float(y)) for x, y in points]
        for x, y in pts:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise GeometryError(f"non-finite vertex ({x}, {y})")
        if len(pts) > 1 and pts[0] == pts[-1]:
            pts.pop()
        cleaned: list[Point2] = []
        for p in pts:
            if not cleaned or p != cleaned[-1]:
                cleaned.append(p)
        poly = cls(tuple(cleaned))
        problem = polygon_problem(poly)
        if problem is not None:
            raise DegeneratePolygonError(f"degenerate polygon: {problem}")
        return poly

    @property
    def area(self) -> float:
        return polygon_area(self)


def polygon_problem(poly: Polygon) -> str | None:
    """Return a description of what makes `poly` invalid, or None if valid."""
    pts = poly.vertices
    if len(pts) < 3:
        return f"{len(pts)} vertices (need >= 3)"
    for x, y in pts:
        if not (math.isfinite(float(x)) and math.isfinite(float(y))):
            return f"non-finite vertex ({x}, {y})"
    for i, p in enumerate(pts):
        if p == pts[(i + 1) % len(pts)]:
            return f"repeated consecutive vertex {p}"
    if signed_area(pts) == 0.0:
        return "zero signed area (collinear or self-cancelling ring)"
    return None


def _require_valid(poly: Polygon) -> None:
    problem = polygon_problem(poly)
    if problem is not None:
        raise DegeneratePolygonError(f"degenerate polygon: {problem}")


def signed_area(vertices: tuple[Point2, ...]) -> float:
    """Shoelace signed area; positive for counter-clockwise rings."""
    total = 0.0
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        total += x1 * y2 - x2 * y1
    return total / 2.0


def polygon_area(poly: Polygon) -> float:
    _require_valid(poly)
    return abs(signed_area(poly.vertices))


def convex_hull(poly: Polygon) -> Polygon:
    """Convex hull by monotone chain; vertices are a subset of the input.

    The hull is counter-clockwise, starts at the lexicographically
    smallest vertex, and keeps only extreme points (collinear points on
    the boundary are dropped).
    """
    _require_valid(poly)
    pts = sorted(set(poly.vertices))
    if len(pts) < 3:
        raise DegeneratePolygonError("degenerate polygon: fewer than 3 distinct points")

    def cross(o: Point2, a: Point2, b: Point2) -> float:
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[Point2] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[Point2] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegeneratePolygonError("degenerate polygon: all points collinear")
    return Polygon(tuple(hull))


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box: top-left corner (x, y) plus width and height."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for v in (self.x, self.y, self.w, self.h):
            if not math.isfinite(v):
                raise GeometryError(f"non-finite aabb field {v}")
        if self.w <= 0 or self.h <= 0:
            raise GeometryError(f"aabb needs w > 0 and h > 0, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[Point2, Point2, Point2, Point2]:
        x, y, w, h = self.x, self.y, self.w, self.h
        return ((x, y), (x + w, y), (x + w, y + h), (x, y + h))


@dataclass(frozen=True)
class Obb:
    """Oriented box in canonical form (see module docstring)."""

    cx: float
    cy: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        for v in (self.cx, self.cy, self.w, self.h, self.theta):
            if not math.isfinite(v):
                raise GeometryError(f"non-finite obb field {v}")
        if not self.w >= self.h > 0:
            raise GeometryError(f"obb needs w >= h > 0, got w={self.w} h={self.h}")
        limit = math.pi / 2 if self.w == self.h else math.pi
        if not 0.0 <= self.theta < limit:
            raise GeometryError(
                f"obb theta {self.theta} outside canonical range [0, {limit})"
            )

    @classmethod
    def canonical(cls, cx: float, cy: float, w: float, h: float, theta: float) -> "Obb":
        """Build an Obb from arbitrary (possibly non-canonical) parameters."""
        if w < h:
            w, h = h, w
            theta += math.pi / 2
        period = math.pi / 2 if w == h else math.pi
        theta = math.fmod(theta, period)
        if theta < 0:
            theta += period
        if theta >= period:  # fmod rounding at the boundary
            theta = 0.0
        return cls(cx, cy, w, h, theta)

    @classmethod
    def from_aabb(cls, box: Aabb) -> "Obb":
        cx = box.x + box.w / 2.0
        cy = box.y + box.h / 2.0
        return cls.canonical(cx, cy, box.w, box.h, 0.0)

    @property
    def area(self) -> float:
        return self.w * self.h


def aabb_of(poly: Polygon) -> Aabb:
    """Tightest axis-aligned box over the polygon's vertices."""
    _require_valid(poly)
    xs = [p[0] for p in poly.vertices]
    ys = [p[1] for p in poly.vertices]
    return Aabb(min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys))


def min_area_obb(poly: Polygon) -> Obb:
    """Minimum-area oriented rectangle via rotating calipers.

    One side of the optimum is collinear with a convex-hull edge, so it
    suffices to sweep hull edges.  Equal-area candidates are resolved to
    the smallest canonical theta so the result is deterministic.
    """
    hull = convex_hull(poly).vertices
    n = len(hull)
    candidates: list[tuple[float, Obb]] = []
    for i in range(n):
        x1, y1 = hull[i]
        x2, y2 = hull[(i + 1) % n]
        ex, ey = x2 - x1, y2 - y1
        norm = math.hypot(ex, ey)
        ux, uy = ex / norm, ey / norm
        # Projections onto the edge direction and its left normal.
        us = [px * ux + py * uy for px, py in hull]
        vs = [px * -uy + py * ux for px, py in hull]
        umin, umax = min(us), max(us)
        vmin, vmax = min(vs), max(vs)
        w = umax - umin
        h = vmax - vmin
        area = w * h
        uc = (umin + umax) / 2.0
        vc = (vmin + vmax) / 2.0
        cx = uc * ux + vc * -uy
        cy = uc * uy + vc * ux
        candidates.append((area, Obb.canonical(cx, cy, w, h, math.atan2(uy, ux))))
    best_area = min(a for a, _ in candidates)
    tie_limit = best_area * (1.0 + 1e-12)
    ties = [obb for a, obb in candidates if a <= tie_limit]
    return min(ties, key=lambda b: b.theta)


def obb_corners(box: Obb) -> tuple[Point2, Point2, Point2, Point2]:
    """Corner points of the box, counter-clockwise from (-w/2, -h/2)."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    half_w, half_h = box.w / 2.0, box.h / 2.0
    out = []
    for lx, ly in ((-half_w, -half_h), (half_w, -half_h), (half_w, half_h), (-half_w, half_h)):
        out.append((box.cx + lx * c - ly * s, box.cy + lx * s + ly * c))
    return tuple(out)


def clip_convex(subject: Polygon, clipper: Polygon) -> Polygon | None:
    """Intersection of two convex CCW polygons (Sutherland-Hodgman).

    Returns None when the intersection is empty or has zero area (the
    polygons are disjoint or touch only along an edge or point).
    """
    output = list(subject.vertices)
    clip = clipper.vertices
    n = len(clip)
    scale = max(
        1.0,
        max(abs(v) for pt in subject.vertices + clip for v in pt),
    )
    for i in range(n):
        if not output:
            return None
        cx1, cy1 = clip[i]
        cx2, cy2 = clip[(i + 1) % n]
        edge_len = math.hypot(cx2 - cx1, cy2 - cy1)
        # Points within a relative hair of the clip line count as inside;
        # otherwise nearly coincident edges (e.g. a box against a version of
        # itself perturbed at machine precision) would funnel into the
        # intersection division with a noise-level denominator.
        tol = 1e-12 * edge_len * scale

        def inside(p: Point2) -> bool:
            return (cx2 - cx1) * (p[1] - cy1) - (cy2 - cy1) * (p[0] - cx1) >= -tol

        def intersection(a: Point2, b: Point2) -> Point2:
            dcx, dcy = cx1 - cx2, cy1 - cy2
            dpx, dpy = a[0] - b[0], a[1] - b[1]
            n1 = cx1 * cy2 - cy1 * cx2
            n2 = a[0] * b[1] - a[1] * b[0]
            denom = dcx * dpy - dcy * dpx
            return ((n1 * dpx - n2 * dcx) / denom, (n1 * dpy - n2 * dcy) / denom)

        current = output
        output = []
        prev = current[-1]
        for point in current:
            if inside(point):
                if not inside(prev):
                    output.append(intersection(prev, point))
                output.append(point)
            elif inside(prev):
                output.append(intersection(prev, point))
            prev = point
    deduped: list[Point2] = []
    for p in output:
        if not deduped or (abs(p[0] - deduped[-1][0]) > 1e-9 or abs(p[1] - deduped[-1][1]) > 1e-9):
            deduped.append(p)
    while len(deduped) > 1 and abs(deduped[0][0] - deduped[-1][0]) <= 1e-9 and abs(deduped[0][1] - deduped[-1][1]) <= 1e-9:
        deduped.pop()
    if len(deduped) < 3 or signed_area(tuple(deduped)) == 0.0:
        return None
    return Polygon(tuple(deduped))


def iou_aabb(a: Aabb, b: Aabb) -> float:
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def iou_obb(a: Obb, b: Obb) -> float:
    """Exact rotated IoU via convex clipping of the corner polygons.

    Operand areas come from the same shoelace evaluation as the
    intersection, so the self-IoU is exactly 1.0.
    """
    pa = Polygon(obb_corners(a))
    pb = Polygon(obb_corners(b))
    inter = clip_convex(pa, pb)
    if inter is None:
        return 0.0
    inter_area = abs(signed_area(inter.vertices))
    area_a = abs(signed_area(pa.vertices))
    area_b = abs(signed_area(pb.vertices))
    union = area_a + area_b - inter_area
    if union <= 0:
        return 0.0
    return min(inter_area / union, 1.0)


def aspect_ratio(box: Obb) -> float:
    """Longer side over shorter side; >= 1 under the canonical form."""
    return box.w / box.h
