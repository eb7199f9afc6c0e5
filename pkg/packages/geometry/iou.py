"""
Rotated bird's-eye-view IoU by convex polygon clipping.

Both footprints are convex rectangles, so Sutherland-Hodgman clipping of one
by the other yields the exact intersection polygon; its area comes from the
shoelace formula.
"""
from typing import List, Sequence, Tuple

import numpy as np

from packages.geometry.boxes import Box3D

Point = Tuple[float, float]

MIN_INTERSECTION_AREA = 1e-12
_EDGE_EPS = 1e-12


def polygon_area(points: Sequence[Point]) -> float:
    """Absolute polygon area (shoelace)."""
    n = len(points)
    if n < 3:
        return 0.0
    area = 0.0
    for i in range(n):
        x1, y1 = points[i]
        x2, y2 = points[(i + 1) % n]
        area += x1 * y2 - x2 * y1
    return abs(area) / 2.0


def clip_convex(subject: Sequence[Point], clip: Sequence[Point]) -> List[Point]:
    """
    Sutherland-Hodgman clipping of `subject` by the convex, counter-clockwise `clip`.

    Returns the vertices of the intersection polygon (possibly empty).
    """
    output: List[Point] = list(subject)
    n = len(clip)
    for i in range(n):
        if not output:
            break
        cp1 = clip[i]
        cp2 = clip[(i + 1) % n]
        ex, ey = cp2[0] - cp1[0], cp2[1] - cp1[1]

        def side(p: Point) -> float:
            return ex * (p[1] - cp1[1]) - ey * (p[0] - cp1[0])

        input_list = output
        output = []
        s = input_list[-1]
        s_side = side(s)
        for e in input_list:
            e_side = side(e)
            if e_side >= -_EDGE_EPS:
                if s_side < -_EDGE_EPS:
                    output.append(_intersect(s, e, s_side, e_side))
                output.append(e)
            elif s_side >= -_EDGE_EPS:
                output.append(_intersect(s, e, s_side, e_side))
            s, s_side = e, e_side
    return output


def _intersect(s: Point, e: Point, s_side: float, e_side: float) -> Point:
    denom = s_side - e_side
    if abs(denom) < 1e-300:
        return e
    t = s_side / denom
    return (s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1]))


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    if np.hypot(a.cx - b.cx, a.cy - b.cy) >= a.bev_radius + b.bev_radius:
        return 0.0
    poly = clip_convex(
        [tuple(p) for p in a.bev_corners()],
        [tuple(p) for p in b.bev_corners()],
    )
    area = polygon_area(poly)
    return area if area >= MIN_INTERSECTION_AREA else 0.0


def rotated_iou_bev(a: Box3D, b: Box3D) -> float:
    """BEV intersection-over-union of two oriented footprints, in [0, 1]."""
    # canonical argument order makes the result bitwise symmetric
    if b.as_tuple() < a.as_tuple():
        a, b = b, a
    area_a, area_b = a.bev_area, b.bev_area
    if area_a < MIN_INTERSECTION_AREA or area_b < MIN_INTERSECTION_AREA:
        return 0.0
    inter = bev_intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def iou_matrix(boxes_a: Sequence[Box3D], boxes_b: Sequence[Box3D]) -> np.ndarray:
    """Pairwise rotated BEV IoU; pairs whose circumscribed circles are disjoint are skipped."""
    out = np.zeros((len(boxes_a), len(boxes_b)))
    if not boxes_a or not boxes_b:
        return out
    ca = np.array([[b.cx, b.cy, b.bev_radius] for b in boxes_a])
    cb = np.array([[b.cx, b.cy, b.bev_radius] for b in boxes_b])
    dist = np.hypot(ca[:, None, 0] - cb[None, :, 0], ca[:, None, 1] - cb[None, :, 1])
    candidates = np.argwhere(dist < ca[:, None, 2] + cb[None, :, 2])
    for i, j in candidates:
        out[i, j] = rotated_iou_bev(boxes_a[i], boxes_b[j])
    return out
