"""
Weak 3D detector: grid clustering proposer with a logistic scorer.

Proposals are produced in two steps. `extract_candidates` removes ground and
own-vehicle returns, groups the rest by connected components on a BEV grid
and fits a raw oriented box to every large enough cluster. Raw geometry and
instance features depend only on the cloud and the clustering settings, so the
pipeline computes them once per frame and reuses them. `score_candidates` and
`candidate_boxes` then apply the trainable part of the model: a logistic
scorer over standardized features and an affine correction of l, w, h and z.
"""
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage
from scipy.special import expit

from packages.errors import InvalidInputError
from packages.geometry.boxes import Box3D, PointCloud, Proposal, ProposalSet, View
from packages.ppf.features import FEATURE_DIM, crop, instance_features

BOX_OFFSET_DIMS = ("l", "w", "h", "z")
MIN_EXTENT = 0.1
CROP_MARGIN = 0.1

# 8-connected neighbourhood on the BEV grid
_CONNECTIVITY = np.ones((3, 3), dtype=int)


@dataclass
class DetectorModel:
    name: str = "detector"
    scorer_weights: np.ndarray = field(default_factory=lambda: np.zeros(FEATURE_DIM))
    scorer_bias: float = 0.0
    # weight of the auxiliary cross-view input; the input is zero at inference
    aux_weight: float = 0.0
    box_scale: np.ndarray = field(default_factory=lambda: np.ones(len(BOX_OFFSET_DIMS)))
    box_bias: np.ndarray = field(default_factory=lambda: np.zeros(len(BOX_OFFSET_DIMS)))
    feature_mean: np.ndarray = field(default_factory=lambda: np.zeros(FEATURE_DIM))
    feature_std: np.ndarray = field(default_factory=lambda: np.ones(FEATURE_DIM))
    min_cluster_points: int = 8
    cluster_cell_size: float = 0.5
    ground_z: float = 0.3
    self_filter: Tuple[float, float] = (6.0, 2.6)
    min_confidence: float = 0.01

    def __post_init__(self):
        self.scorer_weights = _vector(self.scorer_weights, FEATURE_DIM, "scorer_weights")
        self.box_scale = _vector(self.box_scale, len(BOX_OFFSET_DIMS), "box_scale")
        self.box_bias = _vector(self.box_bias, len(BOX_OFFSET_DIMS), "box_bias")
        self.feature_mean = _vector(self.feature_mean, FEATURE_DIM, "feature_mean")
        self.feature_std = _vector(self.feature_std, FEATURE_DIM, "feature_std")
        self.scorer_bias = float(self.scorer_bias)
        self.aux_weight = float(self.aux_weight)
        self.self_filter = (float(self.self_filter[0]), float(self.self_filter[1]))
        if self.min_cluster_points < 1:
            raise InvalidInputError(f"min_cluster_points must be >= 1, got {self.min_cluster_points}")
        if self.cluster_cell_size <= 0:
            raise InvalidInputError(f"cluster_cell_size must be positive, got {self.cluster_cell_size}")
        if np.any(self.feature_std <= 0):
            raise InvalidInputError("feature_std entries must be positive")

    @property
    def box_offset_params(self) -> np.ndarray:
        """(4, 2) array of (scale, bias) for l, w, h, z"""
        return np.column_stack([self.box_scale, self.box_bias])

    def copy(self) -> "DetectorModel":
        return replace(
            self,
            scorer_weights=self.scorer_weights.copy(),
            box_scale=self.box_scale.copy(),
            box_bias=self.box_bias.copy(),
            feature_mean=self.feature_mean.copy(),
            feature_std=self.feature_std.copy(),
        )

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=float) - self.feature_mean) / self.feature_std

    def logits(self, features: np.ndarray, aux: Optional[np.ndarray] = None) -> np.ndarray:
        z = self.standardize(features) @ self.scorer_weights + self.scorer_bias
        if aux is not None:
            z = z + self.aux_weight * np.asarray(aux, dtype=float)
        return z


def _vector(values, size: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.shape != (size,):
        raise InvalidInputError(f"{name} must have {size} entries, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class Candidates:
    """Cluster geometry and features of one cloud, independent of trainable parameters"""
    frame_id: int
    crop_boxes: Tuple[Box3D, ...]
    # columns: l_raw, w_raw, h_raw, cz_raw
    raw_dims: np.ndarray
    centers: np.ndarray
    yaws: np.ndarray
    features: np.ndarray

    def __len__(self) -> int:
        return len(self.crop_boxes)

    @classmethod
    def empty(cls, frame_id: int) -> "Candidates":
        return cls(frame_id, (), np.zeros((0, 4)), np.zeros((0, 2)), np.zeros(0), np.zeros((0, FEATURE_DIM)))


def object_points(model: DetectorModel, cloud: PointCloud) -> np.ndarray:
    """Returns above the ground threshold and outside the own-vehicle footprint"""
    pts = cloud.points
    keep = pts[:, 2] >= model.ground_z
    half_l, half_w = 0.5 * model.self_filter[0], 0.5 * model.self_filter[1]
    if half_l > 0 and half_w > 0:
        keep &= ~((np.abs(pts[:, 0]) <= half_l) & (np.abs(pts[:, 1]) <= half_w))
    return pts[keep]


def cluster_labels(points_xy: np.ndarray, cell_size: float) -> np.ndarray:
    """
    Connected-component label of every point's BEV cell (8-connectivity).

    Labels start at 0 and follow the raster order of the grid.
    """
    if len(points_xy) == 0:
        return np.zeros(0, dtype=int)
    cells = np.floor((points_xy - points_xy.min(axis=0)) / cell_size).astype(int)
    occupancy = np.zeros(tuple(cells.max(axis=0) + 1), dtype=bool)
    occupancy[cells[:, 0], cells[:, 1]] = True
    labeled, _ = ndimage.label(occupancy, structure=_CONNECTIVITY)
    return labeled[cells[:, 0], cells[:, 1]] - 1


def fit_raw_box(points: np.ndarray) -> Tuple[float, float, float, float, float, float, float]:
    """
    Oriented box around a cluster: yaw from the BEV principal axis, extents
    from the projected min/max. Returns (cx, cy, cz, l, w, h, yaw) with l >= w.
    """
    xy = points[:, :2]
    mean = xy.mean(axis=0)
    yaw = 0.0
    if len(points) >= 2:
        evals, evecs = np.linalg.eigh(np.cov(xy, rowvar=False))
        if evals[-1] > 1e-12:
            major = evecs[:, -1]
            yaw = math.atan2(major[1], major[0])
    u = np.array([math.cos(yaw), math.sin(yaw)])
    v = np.array([-u[1], u[0]])
    a = (xy - mean) @ u
    b = (xy - mean) @ v
    l_raw, w_raw = float(a.max() - a.min()), float(b.max() - b.min())
    center = mean + u * 0.5 * (a.max() + a.min()) + v * 0.5 * (b.max() + b.min())
    if w_raw > l_raw:
        l_raw, w_raw = w_raw, l_raw
        yaw += 0.5 * math.pi
    # heading is ambiguous by pi; fold into (-pi/2, pi/2]
    while yaw > 0.5 * math.pi:
        yaw -= math.pi
    while yaw <= -0.5 * math.pi:
        yaw += math.pi
    z_lo, z_hi = float(points[:, 2].min()), float(points[:, 2].max())
    return float(center[0]), float(center[1]), 0.5 * (z_lo + z_hi), l_raw, w_raw, z_hi - z_lo, yaw


def extract_candidates(model: DetectorModel, cloud: PointCloud, frame_id: int = 0) -> Candidates:
    """Cluster a cloud into candidate boxes with their instance features."""
    pts = object_points(model, cloud)
    labels = cluster_labels(pts[:, :2], model.cluster_cell_size)
    if labels.size == 0:
        return Candidates.empty(frame_id)

    counts = np.bincount(labels)
    crop_boxes: List[Box3D] = []
    raw_dims, centers, yaws, feats = [], [], [], []
    for label in np.flatnonzero(counts >= model.min_cluster_points):
        cx, cy, cz, l_raw, w_raw, h_raw, yaw = fit_raw_box(pts[labels == label])
        box = Box3D(
            cx, cy, cz,
            max(l_raw, MIN_EXTENT) + 2 * CROP_MARGIN,
            max(w_raw, MIN_EXTENT) + 2 * CROP_MARGIN,
            max(h_raw, MIN_EXTENT) + 2 * CROP_MARGIN,
            yaw,
        )
        crop_boxes.append(box)
        raw_dims.append((l_raw, w_raw, h_raw, cz))
        centers.append((cx, cy))
        yaws.append(box.yaw)
        feats.append(instance_features(crop(cloud, box).points, box).as_vector())

    if not crop_boxes:
        return Candidates.empty(frame_id)
    return Candidates(
        frame_id=frame_id,
        crop_boxes=tuple(crop_boxes),
        raw_dims=np.array(raw_dims, dtype=float),
        centers=np.array(centers, dtype=float),
        yaws=np.array(yaws, dtype=float),
        features=np.vstack(feats),
    )


def corrected_dims(model: DetectorModel, raw_dims: np.ndarray) -> np.ndarray:
    """Affine-corrected (l, w, h, cz); extents are floored at MIN_EXTENT"""
    dims = np.asarray(raw_dims, dtype=float) * model.box_scale + model.box_bias
    if dims.size:
        dims[:, :3] = np.maximum(dims[:, :3], MIN_EXTENT)
    return dims


def candidate_boxes(model: DetectorModel, cands: Candidates) -> List[Box3D]:
    dims = corrected_dims(model, cands.raw_dims)
    return [
        Box3D(cands.centers[i, 0], cands.centers[i, 1], dims[i, 3], dims[i, 0], dims[i, 1], dims[i, 2], cands.yaws[i])
        for i in range(len(cands))
    ]


def score_candidates(model: DetectorModel, cands: Candidates) -> np.ndarray:
    if len(cands) == 0:
        return np.zeros(0)
    return expit(model.logits(cands.features))


def proposals_from_candidates(model: DetectorModel, cands: Candidates,
                              view: View = View.MULTI) -> ProposalSet:
    """Score and correct cached candidates; proposals below model.min_confidence are dropped."""
    conf = score_candidates(model, cands)
    boxes = candidate_boxes(model, cands)
    items = [
        Proposal(box, float(c))
        for box, c in zip(boxes, conf)
        if c >= model.min_confidence
    ]
    return ProposalSet(cands.frame_id, view, tuple(items))


def propose(model: DetectorModel, cloud: PointCloud, frame_id: int = 0,
            view: View = View.MULTI) -> ProposalSet:
    """Candidate proposals of one cloud, in that cloud's frame."""
    return proposals_from_candidates(model, extract_candidates(model, cloud, frame_id), view)
