"""
Static segment layouts for the synthetic multi-agent world.

Frames are grouped into segments. A segment fixes the road heading, the
connected agents' formation and speed, the parked vehicles and the clutter
objects; only the agents move from frame to frame, along the road at constant
speed. Every layout is a pure function of (seed, segment_id).
"""
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from packages.config.settings import SceneConfig
from packages.errors import SceneGenerationError
from packages.geometry.boxes import Box3D, PoseSE3
from packages.geometry.iou import bev_intersection_area

Dims = Tuple[float, float, float]

VEHICLE_LENGTH = (3.5, 5.5)
VEHICLE_WIDTH = (1.6, 2.2)
VEHICLE_HEIGHT = (1.4, 1.9)
LANE_OFFSET = 1.75
PLACEMENT_MARGIN = 0.5

# stream tag separating segment layouts from per-frame sampling
SEGMENT_STREAM = 1_000_003

CLUTTER_KINDS = ("bush", "pole", "wall", "box")
_CLUTTER_SIZES = {
    # (length range, width range, height range) in meters
    "bush": ((0.8, 2.5), (0.8, 2.5), (0.6, 1.8)),
    "pole": ((0.15, 0.35), (0.15, 0.35), (2.5, 5.0)),
    "wall": ((3.0, 8.0), (0.2, 0.5), (0.8, 2.5)),
    "box": ((0.5, 1.4), (0.5, 1.4), (0.5, 1.4)),
}


@dataclass(frozen=True)
class ClutterObject:
    kind: str
    box: Box3D
    point_budget: int


@dataclass(frozen=True)
class SegmentLayout:
    segment_id: int
    first_frame: int
    road_heading: float
    speed_mps: float
    agent_dims: Tuple[Dims, ...]
    # (along-road, across-road) offsets of every agent relative to the ego lane start
    agent_offsets: Tuple[Tuple[float, float], ...]
    parked: Tuple[Box3D, ...]
    clutter: Tuple[ClutterObject, ...]

    def agent_pose(self, agent: int, step: int, frame_interval_s: float) -> PoseSE3:
        """World pose of an agent `step` frames into the segment"""
        along, across = self.agent_offsets[agent]
        along += self.speed_mps * step * frame_interval_s
        x, y = _road_to_world(along, across, self.road_heading)
        return PoseSE3((x, y, 0.0), self.road_heading)

    def agent_box(self, agent: int, step: int, frame_interval_s: float) -> Box3D:
        pose = self.agent_pose(agent, step, frame_interval_s)
        l, w, h = self.agent_dims[agent]
        tx, ty, _ = pose.translation
        return Box3D(tx, ty, 0.5 * h, l, w, h, pose.yaw)


def segment_rng(seed: int, segment_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, SEGMENT_STREAM, segment_id])


def _road_to_world(along: float, across: float, heading: float) -> Tuple[float, float]:
    c, s = math.cos(heading), math.sin(heading)
    return c * along - s * across, s * along + c * across


def sample_vehicle_dims(rng: np.random.Generator) -> Dims:
    return (
        float(rng.uniform(*VEHICLE_LENGTH)),
        float(rng.uniform(*VEHICLE_WIDTH)),
        float(rng.uniform(*VEHICLE_HEIGHT)),
    )


def footprints_overlap(a: Box3D, b: Box3D, margin: float = PLACEMENT_MARGIN) -> bool:
    return bev_intersection_area(a.inflated(margin), b.inflated(margin)) > 0.0


def _off_road(road_box: Box3D, road_half_width: float) -> bool:
    """True when a footprint, in road coordinates, stays clear of the driving corridor"""
    ys = road_box.bev_corners()[:, 1]
    return bool(ys.min() > road_half_width or ys.max() < -road_half_width)


def _sample_formation(cfg: SceneConfig, rng: np.random.Generator, first_frame: int
                      ) -> Tuple[Tuple[Dims, ...], Tuple[Tuple[float, float], ...]]:
    dims: List[Dims] = [sample_vehicle_dims(rng) for _ in range(cfg.num_agents)]
    offsets: List[Tuple[float, float]] = [(0.0, -LANE_OFFSET)]
    placed = [Box3D(0.0, -LANE_OFFSET, 1.0, dims[0][0], dims[0][1], 1.0, 0.0)]
    for agent in range(1, cfg.num_agents):
        lane = LANE_OFFSET if agent % 2 == 1 else -LANE_OFFSET
        for _ in range(cfg.placement_attempts):
            along = float(rng.uniform(*cfg.agent_spacing)) * float(rng.choice([-1.0, 1.0]))
            along *= math.ceil(agent / 2)
            candidate = Box3D(along, lane, 1.0, dims[agent][0], dims[agent][1], 1.0, 0.0)
            if not any(footprints_overlap(candidate, other) for other in placed):
                break
        else:
            raise SceneGenerationError(
                f"cannot place agent {agent} in the convoy after {cfg.placement_attempts} attempts",
                frame_index=first_frame,
            )
        placed.append(candidate)
        offsets.append((along, lane))
    return tuple(dims), tuple(offsets)


def _place_off_road(cfg: SceneConfig, rng: np.random.Generator, dims: Dims, center_along: float,
                    placed_road: List[Box3D], first_frame: int, what: str) -> Box3D:
    """Rejection-sample a footprint (in road coordinates) clear of the corridor and of `placed_road`"""
    l, w, h = dims
    for _ in range(cfg.placement_attempts):
        along = center_along + float(rng.uniform(-cfg.map_extent, cfg.map_extent))
        across = float(rng.uniform(-cfg.map_extent, cfg.map_extent))
        yaw = float(rng.uniform(-math.pi, math.pi))
        candidate = Box3D(along, across, 0.5 * h, l, w, h, yaw)
        if not _off_road(candidate, cfg.road_half_width):
            continue
        if any(footprints_overlap(candidate, other) for other in placed_road):
            continue
        return candidate
    raise SceneGenerationError(
        f"cannot place {what} without overlap after {cfg.placement_attempts} attempts "
        f"(map_extent={cfg.map_extent})",
        frame_index=first_frame,
    )


def _to_world(road_box: Box3D, heading: float) -> Box3D:
    x, y = _road_to_world(road_box.cx, road_box.cy, heading)
    return Box3D(x, y, road_box.cz, road_box.l, road_box.w, road_box.h, road_box.yaw + heading)


def build_segment(cfg: SceneConfig, segment_id: int) -> SegmentLayout:
    """Sample the static layout shared by all frames of one segment."""
    rng = segment_rng(cfg.rng_seed, segment_id)
    first_frame = segment_id * cfg.frames_per_segment
    heading = float(rng.uniform(-math.pi, math.pi))
    agent_dims, offsets = _sample_formation(cfg, rng, first_frame)

    # parked vehicles and clutter are spread around the middle of the ego's drive
    drive = cfg.agent_speed_mps * (cfg.frames_per_segment - 1) * cfg.frame_interval_s
    center_along = 0.5 * drive

    total = int(rng.integers(cfg.vehicles_per_frame[0], cfg.vehicles_per_frame[1] + 1))
    n_parked = max(0, total - (cfg.num_agents - 1))
    placed_road: List[Box3D] = []
    for _ in range(n_parked):
        dims = sample_vehicle_dims(rng)
        placed_road.append(_place_off_road(cfg, rng, dims, center_along, placed_road,
                                           first_frame, "parked vehicle"))
    parked_road = list(placed_road)

    clutter: List[ClutterObject] = []
    n_clutter = int(rng.integers(cfg.clutter_clusters_per_frame[0], cfg.clutter_clusters_per_frame[1] + 1))
    for _ in range(n_clutter):
        kind = CLUTTER_KINDS[int(rng.integers(len(CLUTTER_KINDS)))]
        ranges = _CLUTTER_SIZES[kind]
        dims = tuple(float(rng.uniform(*r)) for r in ranges)
        box = _place_off_road(cfg, rng, dims, center_along, placed_road, first_frame, f"{kind} clutter")
        placed_road.append(box)
        budget = int(rng.integers(cfg.clutter_cluster_size[0], cfg.clutter_cluster_size[1] + 1))
        clutter.append(ClutterObject(kind, _to_world(box, heading), budget))

    return SegmentLayout(
        segment_id=segment_id,
        first_frame=first_frame,
        road_heading=heading,
        speed_mps=cfg.agent_speed_mps,
        agent_dims=agent_dims,
        agent_offsets=offsets,
        parked=tuple(_to_world(b, heading) for b in parked_road),
        clutter=tuple(clutter),
    )


def vehicle_boxes(layout: SegmentLayout, step: int, frame_interval_s: float) -> List[Box3D]:
    """World boxes of every vehicle at a step: agents first (ego at index 0), then parked."""
    agents = [layout.agent_box(v, step, frame_interval_s) for v in range(len(layout.agent_dims))]
    return agents + list(layout.parked)


def agent_poses(layout: SegmentLayout, step: int, frame_interval_s: float) -> Sequence[PoseSE3]:
    return [layout.agent_pose(v, step, frame_interval_s) for v in range(len(layout.agent_dims))]
