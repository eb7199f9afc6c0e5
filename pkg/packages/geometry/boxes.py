"""
Core geometric value types: oriented boxes, proposals, planar poses and point clouds.

All boxes live in a right-handed frame with z up; yaw is the heading of the
box length axis measured counter-clockwise from +x.
"""
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from packages.errors import InvalidInputError


def normalize_yaw(yaw: float) -> float:
    """Map an angle into (-pi, pi]; values already in range are returned untouched."""
    if not math.isfinite(yaw):
        raise InvalidInputError(f"non-finite yaw: {yaw}")
    if -math.pi < yaw <= math.pi:
        return float(yaw)
    wrapped = math.atan2(math.sin(yaw), math.cos(yaw))
    if wrapped <= -math.pi:
        wrapped = math.pi
    return wrapped


@dataclass(frozen=True)
class Box3D:
    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float

    def __post_init__(self):
        for name in ("cx", "cy", "cz", "l", "w", "h", "yaw"):
            object.__setattr__(self, name, float(getattr(self, name)))
        values = (self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw)
        if not all(math.isfinite(v) for v in values):
            raise InvalidInputError(f"non-finite box component: {values}")
        if self.l <= 0 or self.w <= 0 or self.h <= 0:
            raise InvalidInputError(f"box extents must be positive: l={self.l} w={self.w} h={self.h}")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def bev_area(self) -> float:
        return self.l * self.w

    @property
    def bev_radius(self) -> float:
        """Radius of the circle circumscribing the footprint"""
        return 0.5 * math.hypot(self.l, self.w)

    @property
    def bev_range(self) -> float:
        """Planar distance of the box center from the frame origin"""
        return math.hypot(self.cx, self.cy)

    def bev_corners(self) -> np.ndarray:
        """Footprint corners as a (4, 2) array in counter-clockwise order"""
        hl, hw = 0.5 * self.l, 0.5 * self.w
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    def inflated(self, margin: float) -> "Box3D":
        return replace(self, l=self.l + margin, w=self.w + margin, h=self.h + margin)

    def as_tuple(self) -> Tuple[float, ...]:
        return (self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw)


@dataclass(frozen=True)
class Proposal:
    box: Box3D
    confidence: float

    def __post_init__(self):
        object.__setattr__(self, "confidence", float(self.confidence))
        if not (0.0 <= self.confidence <= 1.0) or math.isnan(self.confidence):
            raise InvalidInputError(f"confidence outside [0, 1]: {self.confidence}")

    def with_confidence(self, confidence: float) -> "Proposal":
        return Proposal(self.box, float(confidence))


class View(str, Enum):
    EGO = "ego"
    MULTI = "multi"


@dataclass(frozen=True)
class ProposalSet:
    """Proposals of one frame and one view, expressed in that frame's ego coordinates"""
    frame_id: int
    view: View
    items: Tuple[Proposal, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "view", View(self.view))
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def boxes(self) -> List[Box3D]:
        return [p.box for p in self.items]

    @property
    def confidences(self) -> np.ndarray:
        return np.array([p.confidence for p in self.items], dtype=float)

    def with_items(self, items: Iterable[Proposal]) -> "ProposalSet":
        return ProposalSet(self.frame_id, self.view, tuple(items))


@dataclass(frozen=True)
class PoseSE3:
    """Planar rigid pose: rotation about z by yaw, then translation"""
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw: float = 0.0

    def __post_init__(self):
        t = tuple(float(v) for v in self.translation)
        if len(t) != 3:
            raise InvalidInputError(f"translation must have 3 components, got {len(t)}")
        if not all(math.isfinite(v) for v in t) or not math.isfinite(self.yaw):
            raise InvalidInputError(f"non-finite pose: translation={t} yaw={self.yaw}")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "yaw", float(self.yaw))

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls()

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 transformation matrix"""
        m = np.eye(4)
        m[:3, :3] = self.rotation()
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """self ∘ other: apply other first, then self"""
        t = self.rotation() @ np.asarray(other.translation) + np.asarray(self.translation)
        return PoseSE3(tuple(t), self.yaw + other.yaw)

    def inverse(self) -> "PoseSE3":
        inv_rot = PoseSE3((0.0, 0.0, 0.0), -self.yaw).rotation()
        t = -(inv_rot @ np.asarray(self.translation))
        return PoseSE3(tuple(t), -self.yaw)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return pts @ self.rotation().T + np.asarray(self.translation)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    source_agent: str = "ego"

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidInputError(f"points must be (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def subset(self, indices: Sequence[int]) -> "PointCloud":
        return PointCloud(self.points[np.asarray(indices, dtype=int)], self.source_agent)
