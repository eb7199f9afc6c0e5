"""
Scene generation and multi-agent fusion.

`Frame` is what the simulator produces: sensor data of every connected agent
plus the ground-truth boxes. Training code only ever sees a `SensorFrame`
(obtained with `Frame.sensor_view()`); ground truth reaches evaluation through
`ground_truth_index`.
"""
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from packages.config.settings import SceneConfig
from packages.errors import InvalidInputError
from packages.geometry.boxes import Box3D, PointCloud, PoseSE3
from packages.geometry.transforms import relative_pose, transform_box, transform_points
from packages.observability import get_logger
from packages.scenesim import sampling
from packages.scenesim.world import SegmentLayout, agent_poses, build_segment, vehicle_boxes
from packages.util.parallel import ordered_map

Dims = Tuple[float, float, float]


@dataclass(frozen=True)
class SensorFrame:
    """
    Data shared over the network at one time step.

    agent_poses are world poses (index 0 is the ego vehicle); every cloud is
    expressed in its own agent's frame.
    """
    frame_id: int
    segment_id: int
    agent_poses: Tuple[PoseSE3, ...]
    agent_clouds: Tuple[PointCloud, ...]
    agent_dims: Tuple[Dims, ...]

    def __post_init__(self):
        object.__setattr__(self, "agent_poses", tuple(self.agent_poses))
        object.__setattr__(self, "agent_clouds", tuple(self.agent_clouds))
        object.__setattr__(self, "agent_dims", tuple(tuple(float(v) for v in d) for d in self.agent_dims))
        if not (len(self.agent_poses) == len(self.agent_clouds) == len(self.agent_dims)):
            raise InvalidInputError(
                f"frame {self.frame_id}: {len(self.agent_poses)} poses, "
                f"{len(self.agent_clouds)} clouds, {len(self.agent_dims)} dims"
            )
        if not self.agent_poses:
            raise InvalidInputError(f"frame {self.frame_id}: at least the ego agent is required")

    @property
    def num_agents(self) -> int:
        return len(self.agent_poses)

    @property
    def ego_cloud(self) -> PointCloud:
        return self.agent_clouds[0]

    def relative_pose(self, agent: int) -> PoseSE3:
        """T_{agent -> ego}"""
        return relative_pose(self.agent_poses[0], self.agent_poses[agent])

    def prior_boxes(self) -> List[Box3D]:
        """Self boxes of the communicated agents in the ego frame, derived from their shared poses"""
        boxes = []
        for agent in range(1, self.num_agents):
            l, w, h = self.agent_dims[agent]
            boxes.append(transform_box(Box3D(0.0, 0.0, 0.5 * h, l, w, h, 0.0), self.relative_pose(agent)))
        return boxes


@dataclass(frozen=True)
class Frame(SensorFrame):
    gt_boxes: Tuple[Box3D, ...] = ()

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "gt_boxes", tuple(self.gt_boxes))

    def sensor_view(self) -> SensorFrame:
        return SensorFrame(self.frame_id, self.segment_id, self.agent_poses, self.agent_clouds, self.agent_dims)


def frame_rng(seed: int, frame_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, frame_id])


def render_frame(cfg: SceneConfig, layout: SegmentLayout, frame_id: int) -> Frame:
    """Sample every agent's cloud for one frame of a segment."""
    rng = frame_rng(cfg.rng_seed, frame_id)
    step = frame_id - layout.first_frame
    dt = cfg.frame_interval_s
    poses = agent_poses(layout, step, dt)
    vehicles = vehicle_boxes(layout, step, dt)

    clouds = []
    for agent, pose in enumerate(poses):
        tx, ty, _ = pose.translation
        sensor = np.array([tx, ty, cfg.sensor_height])
        own = vehicles[agent]
        others = [b for b in vehicles if b is not own]
        occluders = others + [obj.box for obj in layout.clutter]
        chunks = [np.zeros((0, 3))]
        for box in others:
            chunks.append(sampling.sample_vehicle(
                box, sensor, occluders, rng,
                cfg.points_per_m2_at_10m, cfg.density_falloff_exponent,
                cfg.occlusion_enabled, cfg.max_range,
            ))
        for obj in layout.clutter:
            chunks.append(sampling.sample_clutter(obj, sensor, rng, cfg.density_falloff_exponent, cfg.max_range))
        world_pts = np.vstack(chunks)
        local = pose.inverse().apply(world_pts) if len(world_pts) else world_pts
        ground = sampling.sample_ground(rng, cfg.ground_points_per_agent, cfg.ground_range, cfg.ground_jitter)
        clouds.append(PointCloud(np.vstack([local, ground]), source_agent=f"agent{agent}"))

    to_ego = poses[0].inverse()
    gt = tuple(transform_box(b, to_ego) for b in vehicles[1:])
    return Frame(
        frame_id=frame_id,
        segment_id=layout.segment_id,
        agent_poses=tuple(poses),
        agent_clouds=tuple(clouds),
        agent_dims=layout.agent_dims,
        gt_boxes=gt,
    )


def generate_scene(cfg: SceneConfig, workers: int = 1) -> List[Frame]:
    """
    Generate `cfg.num_frames` frames.

    Each frame depends only on (cfg.rng_seed, frame_id), so the result is the
    same for any number of workers.
    """
    logger = get_logger()
    frame_ids = list(range(cfg.num_frames))
    segment_ids = sorted({fid // cfg.frames_per_segment for fid in frame_ids})
    with logger.stage_timer("scene_generation"):
        layouts: Dict[int, SegmentLayout] = {sid: build_segment(cfg, sid) for sid in segment_ids}

        def render(fid: int) -> Frame:
            return render_frame(cfg, layouts[fid // cfg.frames_per_segment], fid)

        frames = ordered_map(render, frame_ids, workers)

    logger.log_structured("INFO", "scene_generated",
                          frames=len(frames),
                          segments=len(segment_ids),
                          agents=cfg.num_agents,
                          seed=cfg.rng_seed,
                          gt_boxes=sum(len(f.gt_boxes) for f in frames),
                          points=sum(len(c) for f in frames for c in f.agent_clouds))
    return frames


def fuse_to_ego(frame: SensorFrame) -> PointCloud:
    """Union of all agent clouds mapped into the ego frame through T_{v->e} = pose_e^-1 ∘ pose_v"""
    parts = [frame.agent_clouds[0].points]
    for agent in range(1, frame.num_agents):
        parts.append(transform_points(frame.agent_clouds[agent], frame.relative_pose(agent)).points)
    return PointCloud(np.vstack(parts), source_agent="fused")


def ground_truth_index(frames: Sequence[Frame]) -> Dict[int, Tuple[Box3D, ...]]:
    """Evaluation-only channel: frame_id -> ground-truth boxes in the ego frame"""
    return {f.frame_id: tuple(f.gt_boxes) for f in frames}


def sensor_views(frames: Sequence[Frame]) -> List[SensorFrame]:
    return [f.sensor_view() if isinstance(f, Frame) else f for f in frames]
