import math
from typing import NamedTuple

import numpy as np

from packages.geometry.boxes import Box3D, PointCloud, PoseSE3


class PointQuery(NamedTuple):
    count: int
    indices: np.ndarray


def transform_points(cloud: PointCloud, pose: PoseSE3) -> PointCloud:
    """Map every point by rotation then translation; count and source agent are preserved."""
    return PointCloud(pose.apply(cloud.points), cloud.source_agent)


def transform_box(box: Box3D, pose: PoseSE3) -> Box3D:
    center = pose.apply(box.center)[0]
    return Box3D(center[0], center[1], center[2], box.l, box.w, box.h, box.yaw + pose.yaw)


def relative_pose(target: PoseSE3, source: PoseSE3) -> PoseSE3:
    """T_{source -> target} = target^-1 ∘ source"""
    return target.inverse().compose(source)


def to_box_frame(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Express points in box-local coordinates: center at origin, heading along +x."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx = pts[:, 0] - box.cx
    dy = pts[:, 1] - box.cy
    local = np.empty_like(pts)
    local[:, 0] = c * dx + s * dy
    local[:, 1] = -s * dx + c * dy
    local[:, 2] = pts[:, 2] - box.cz
    return local


def points_in_box(cloud: PointCloud, box: Box3D) -> PointQuery:
    """Indices of points inside the rotated footprint and the [cz - h/2, cz + h/2] slab."""
    pts = cloud.points
    if len(pts) == 0:
        return PointQuery(0, np.zeros(0, dtype=int))
    # cheap radius gate before rotating
    near = np.flatnonzero(
        (np.abs(pts[:, 0] - box.cx) <= box.bev_radius)
        & (np.abs(pts[:, 1] - box.cy) <= box.bev_radius)
    )
    if near.size == 0:
        return PointQuery(0, near)
    local = to_box_frame(pts[near], box)
    inside = (
        (np.abs(local[:, 0]) <= 0.5 * box.l)
        & (np.abs(local[:, 1]) <= 0.5 * box.w)
        & (np.abs(local[:, 2]) <= 0.5 * box.h)
    )
    indices = near[inside]
    return PointQuery(int(indices.size), indices)
