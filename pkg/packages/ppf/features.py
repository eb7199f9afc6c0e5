"""
Box-local geometric descriptors of a proposal's point crop.

The same 12-dimensional vector feeds the weak detectors' scorers and the
proposal purifying classifier. Everything is computed in the box frame, so the
features do not change when the cloud and the box move together.
"""
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from packages.geometry.boxes import Box3D, PointCloud
from packages.geometry.transforms import points_in_box, to_box_frame

HISTOGRAM_BINS = 4

FEATURE_NAMES = (
    "log_point_count",
    "bev_extent_l",
    "bev_extent_w",
    "height_extent",
    "point_density",
    "pca_eigen_ratio_1",
    "pca_eigen_ratio_2",
    "mean_height_above_ground",
) + tuple(f"vertical_hist_{i}" for i in range(HISTOGRAM_BINS))

FEATURE_DIM = len(FEATURE_NAMES)


@dataclass(frozen=True)
class InstanceFeatures:
    point_count: float
    bev_extent_l: float
    bev_extent_w: float
    height_extent: float
    point_density: float
    pca_eigen_ratio_1: float
    pca_eigen_ratio_2: float
    mean_height_above_ground: float
    vertical_histogram: Tuple[float, ...] = (0.0,) * HISTOGRAM_BINS

    def as_vector(self) -> np.ndarray:
        return np.array([
            self.point_count,
            self.bev_extent_l,
            self.bev_extent_w,
            self.height_extent,
            self.point_density,
            self.pca_eigen_ratio_1,
            self.pca_eigen_ratio_2,
            self.mean_height_above_ground,
            *self.vertical_histogram,
        ], dtype=float)

    @classmethod
    def empty(cls) -> "InstanceFeatures":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def crop(cloud: PointCloud, box: Box3D) -> PointCloud:
    """Points inside the box, re-expressed in box-local coordinates (heading along +x)."""
    query = points_in_box(cloud, box)
    if query.count == 0:
        return PointCloud(np.zeros((0, 3)), cloud.source_agent)
    return PointCloud(to_box_frame(cloud.points[query.indices], box), cloud.source_agent)


def instance_features(local_points: np.ndarray, box: Box3D) -> InstanceFeatures:
    """Descriptors of a crop given in box-local coordinates; an empty crop maps to all zeros."""
    pts = np.asarray(local_points, dtype=float).reshape(-1, 3)
    n = pts.shape[0]
    if n == 0:
        return InstanceFeatures.empty()

    extent = pts.max(axis=0) - pts.min(axis=0)
    volume = box.l * box.w * box.h

    ratio_1 = ratio_2 = 0.0
    if n >= 2:
        eig = np.sort(np.linalg.eigvalsh(np.cov(pts, rowvar=False)))[::-1]
        eig = np.clip(eig, 0.0, None)
        if eig[0] > 1e-12:
            ratio_1, ratio_2 = float(eig[1] / eig[0]), float(eig[2] / eig[0])

    half_h = 0.5 * box.h
    hist, _ = np.histogram(pts[:, 2], bins=HISTOGRAM_BINS, range=(-half_h, half_h))
    hist = hist / n

    return InstanceFeatures(
        point_count=float(np.log1p(n)),
        bev_extent_l=float(extent[0]),
        bev_extent_w=float(extent[1]),
        height_extent=float(extent[2]),
        point_density=float(n / volume),
        pca_eigen_ratio_1=ratio_1,
        pca_eigen_ratio_2=ratio_2,
        mean_height_above_ground=float(np.mean(pts[:, 2]) + half_h),
        vertical_histogram=tuple(float(v) for v in hist),
    )


def extract_features(cloud: PointCloud, box: Box3D) -> InstanceFeatures:
    return instance_features(crop(cloud, box).points, box)


def feature_matrix(cloud: PointCloud, boxes: Sequence[Box3D]) -> np.ndarray:
    """(n, FEATURE_DIM) descriptors of every box's crop"""
    if not boxes:
        return np.zeros((0, FEATURE_DIM))
    return np.vstack([extract_features(cloud, b).as_vector() for b in boxes])
