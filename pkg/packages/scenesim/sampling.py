"""
Per-agent LiDAR point sampling.

Vehicle returns are drawn on the box faces that point towards the sensor.
The expected count on a face is

    points_per_m2_at_10m * (range / 10) ** -density_falloff_exponent * area * cos(incidence)

and a face whose center is hidden behind a nearer footprint (2D sight line
test against other vehicles and clutter) receives no points at all. Clutter
returns themselves are never occluded.
"""
import math
from typing import List, Sequence, Tuple

import numpy as np

from packages.geometry.boxes import Box3D
from packages.scenesim.world import ClutterObject

Vec3 = Tuple[float, float, float]

MIN_FALLOFF_RANGE = 1.0


class Face:
    """One planar face of an oriented box"""

    __slots__ = ("center", "normal", "u_axis", "half_u", "v_axis", "half_v")

    def __init__(self, center, normal, u_axis, half_u, v_axis, half_v):
        self.center = np.asarray(center, dtype=float)
        self.normal = np.asarray(normal, dtype=float)
        self.u_axis = np.asarray(u_axis, dtype=float)
        self.half_u = float(half_u)
        self.v_axis = np.asarray(v_axis, dtype=float)
        self.half_v = float(half_v)

    @property
    def area(self) -> float:
        return 4.0 * self.half_u * self.half_v

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.uniform(-self.half_u, self.half_u, n)
        v = rng.uniform(-self.half_v, self.half_v, n)
        return self.center + u[:, None] * self.u_axis + v[:, None] * self.v_axis


def box_faces(box: Box3D) -> List[Face]:
    """The four side faces and the roof of a box (the floor is never observed)"""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    fwd = np.array([c, s, 0.0])
    left = np.array([-s, c, 0.0])
    up = np.array([0.0, 0.0, 1.0])
    center = box.center
    hl, hw, hh = 0.5 * box.l, 0.5 * box.w, 0.5 * box.h
    return [
        Face(center + hl * fwd, fwd, left, hw, up, hh),
        Face(center - hl * fwd, -fwd, left, hw, up, hh),
        Face(center + hw * left, left, fwd, hl, up, hh),
        Face(center - hw * left, -left, fwd, hl, up, hh),
        Face(center + hh * up, up, fwd, hl, left, hw),
    ]


def _cross(ox, oy, ax, ay, bx, by) -> float:
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def _segments_cross(p0, p1, q0, q1) -> bool:
    d1 = _cross(q0[0], q0[1], q1[0], q1[1], p0[0], p0[1])
    d2 = _cross(q0[0], q0[1], q1[0], q1[1], p1[0], p1[1])
    d3 = _cross(p0[0], p0[1], p1[0], p1[1], q0[0], q0[1])
    d4 = _cross(p0[0], p0[1], p1[0], p1[1], q1[0], q1[1])
    return (d1 > 0) != (d2 > 0) and (d3 > 0) != (d4 > 0)


def _inside_convex(p, corners) -> bool:
    n = len(corners)
    for i in range(n):
        a, b = corners[i], corners[(i + 1) % n]
        if _cross(a[0], a[1], b[0], b[1], p[0], p[1]) < 0:
            return False
    return True


def sight_line_blocked(sensor_xy, target_xy, occluder: Box3D) -> bool:
    """True when the 2D segment sensor -> target passes through the occluder footprint"""
    sx, sy = sensor_xy
    tx, ty = target_xy
    dx, dy = tx - sx, ty - sy
    seg_len2 = dx * dx + dy * dy
    # distance from the occluder center to the segment, against its circumscribed radius
    t = 0.0 if seg_len2 == 0 else max(0.0, min(1.0, ((occluder.cx - sx) * dx + (occluder.cy - sy) * dy) / seg_len2))
    if math.hypot(sx + t * dx - occluder.cx, sy + t * dy - occluder.cy) > occluder.bev_radius:
        return False
    corners = [tuple(p) for p in occluder.bev_corners()]
    if _inside_convex((sx, sy), corners) or _inside_convex((tx, ty), corners):
        return True
    return any(
        _segments_cross((sx, sy), (tx, ty), corners[i], corners[(i + 1) % 4])
        for i in range(4)
    )


def expected_face_points(face: Face, sensor: np.ndarray, density_at_10m: float, exponent: float) -> float:
    to_sensor = sensor - face.center
    rng_m = float(np.linalg.norm(to_sensor))
    if rng_m == 0.0:
        return 0.0
    cos_incidence = float(face.normal @ to_sensor) / rng_m
    if cos_incidence <= 0.0:
        return 0.0
    falloff = (max(rng_m, MIN_FALLOFF_RANGE) / 10.0) ** (-exponent)
    return density_at_10m * falloff * face.area * cos_incidence


def sample_vehicle(box: Box3D, sensor: np.ndarray, occluders: Sequence[Box3D], rng: np.random.Generator,
                   density_at_10m: float, exponent: float, occlusion: bool, max_range: float) -> np.ndarray:
    """World-frame returns of one vehicle as seen from `sensor` (3-vector)"""
    chunks = []
    for face in box_faces(box):
        if float(np.linalg.norm(face.center - sensor)) > max_range:
            continue
        expected = expected_face_points(face, sensor, density_at_10m, exponent)
        if expected <= 0.0:
            continue
        if occlusion:
            target_range = math.hypot(face.center[0] - sensor[0], face.center[1] - sensor[1])
            blocked = False
            for other in occluders:
                if other is box:
                    continue
                if math.hypot(other.cx - sensor[0], other.cy - sensor[1]) - other.bev_radius > target_range:
                    continue
                if sight_line_blocked(sensor[:2], face.center[:2], other):
                    blocked = True
                    break
            if blocked:
                continue
        n = int(rng.poisson(expected))
        if n:
            chunks.append(face.sample(rng, n))
    if not chunks:
        return np.zeros((0, 3))
    return np.vstack(chunks)


def sample_clutter(obj: ClutterObject, sensor: np.ndarray, rng: np.random.Generator,
                   exponent: float, max_range: float) -> np.ndarray:
    """Compact blob of returns for one clutter object; the budget is the count seen at 10 m"""
    box = obj.box
    dist = math.hypot(box.cx - sensor[0], box.cy - sensor[1])
    if dist > max_range:
        return np.zeros((0, 3))
    scale = min(1.0, (max(dist, MIN_FALLOFF_RANGE) / 10.0) ** (-exponent))
    n = int(rng.binomial(obj.point_budget, scale))
    if n == 0:
        return np.zeros((0, 3))
    hl, hw, hh = 0.5 * box.l, 0.5 * box.w, 0.5 * box.h
    if obj.kind == "bush":
        # ragged ellipsoid shell
        direction = rng.normal(size=(n, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        shell = rng.uniform(0.7, 1.0, n)[:, None]
        local = direction * shell * np.array([hl, hw, hh])
    elif obj.kind == "pole":
        theta = rng.uniform(0.0, 2.0 * math.pi, n)
        local = np.column_stack([hl * np.cos(theta), hw * np.sin(theta), rng.uniform(-hh, hh, n)])
    else:
        faces = [f for f in box_faces(box) if float(f.normal @ (sensor - f.center)) > 0.0]
        if not faces:
            return np.zeros((0, 3))
        picks = rng.integers(len(faces), size=n)
        return np.vstack([faces[i].sample(rng, int(np.sum(picks == i))) for i in range(len(faces))])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + box.center


def sample_ground(rng: np.random.Generator, n: int, ground_range: float, jitter: float) -> np.ndarray:
    """Ground returns around an agent, in that agent's frame; density thins out as 1/range"""
    if n == 0:
        return np.zeros((0, 3))
    r = rng.uniform(2.0, ground_range, n)
    theta = rng.uniform(-math.pi, math.pi, n)
    z = rng.normal(0.0, jitter, n) if jitter > 0 else np.zeros(n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
