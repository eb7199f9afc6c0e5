"""
Robustness perturbations of shared poses and communication timing.
"""
import math
from dataclasses import replace
from typing import Dict, List, Sequence, TypeVar

import numpy as np

from packages.errors import InvalidInputError
from packages.geometry.boxes import PoseSE3
from packages.scenesim.scene import SensorFrame

F = TypeVar("F", bound=SensorFrame)

POSE_NOISE_STREAM = 2_000_003
DEFAULT_YAW_NOISE_DEG = 0.2


def perturb_poses(frames: Sequence[F], sigma_m: float, seed: int,
                  yaw_noise_deg: float = DEFAULT_YAW_NOISE_DEG,
                  yaw_noise_enabled: bool = True) -> List[F]:
    """
    Add zero-mean Gaussian noise to every communicated agent's shared pose.

    x and y get std `sigma_m`; yaw gets std `yaw_noise_deg` degrees unless
    disabled. The ego pose, all clouds and ground truth are left untouched.
    Each frame draws from its own (seed, frame_id) stream.
    """
    if sigma_m < 0:
        raise InvalidInputError(f"sigma_m must be non-negative, got {sigma_m}")
    yaw_std = math.radians(yaw_noise_deg) if yaw_noise_enabled else 0.0
    if sigma_m == 0 and yaw_std == 0:
        return list(frames)

    out: List[F] = []
    for frame in frames:
        rng = np.random.default_rng([seed, POSE_NOISE_STREAM, frame.frame_id])
        poses = [frame.agent_poses[0]]
        for pose in frame.agent_poses[1:]:
            dx, dy = rng.normal(0.0, sigma_m, 2) if sigma_m > 0 else (0.0, 0.0)
            dyaw = rng.normal(0.0, yaw_std) if yaw_std > 0 else 0.0
            x, y, z = pose.translation
            poses.append(PoseSE3((x + dx, y + dy, z), pose.yaw + dyaw))
        out.append(replace(frame, agent_poses=tuple(poses)))
    return out


def apply_latency(frames: Sequence[F], delay_frames: int) -> List[F]:
    """
    Deliver communicated-agent data `delay_frames` frames late.

    Frame t receives every non-ego cloud and pose from frame t - delay_frames.
    When that frame does not exist or belongs to another segment, frame t
    keeps only its ego data. The ego stream is never delayed.
    """
    if delay_frames < 0:
        raise InvalidInputError(f"delay_frames must be non-negative, got {delay_frames}")
    if delay_frames == 0:
        return list(frames)

    by_id: Dict[int, F] = {f.frame_id: f for f in frames}
    out: List[F] = []
    for frame in frames:
        source = by_id.get(frame.frame_id - delay_frames)
        if source is None or source.segment_id != frame.segment_id:
            out.append(replace(
                frame,
                agent_poses=frame.agent_poses[:1],
                agent_clouds=frame.agent_clouds[:1],
                agent_dims=frame.agent_dims[:1],
            ))
            continue
        out.append(replace(
            frame,
            agent_poses=frame.agent_poses[:1] + source.agent_poses[1:],
            agent_clouds=frame.agent_clouds[:1] + source.agent_clouds[1:],
            agent_dims=frame.agent_dims[:1] + source.agent_dims[1:],
        ))
    return out
