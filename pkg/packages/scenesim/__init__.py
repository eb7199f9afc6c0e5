"""
Deterministic synthetic multi-agent LiDAR world.
"""

from .perturb import apply_latency, perturb_poses
from .scene import (
    Frame,
    SensorFrame,
    fuse_to_ego,
    generate_scene,
    ground_truth_index,
    sensor_views,
)
from .storage import load_scene, save_scene, serialize_frame

__all__ = [
    'Frame',
    'SensorFrame',
    'apply_latency',
    'fuse_to_ego',
    'generate_scene',
    'ground_truth_index',
    'load_scene',
    'perturb_poses',
    'save_scene',
    'sensor_views',
    'serialize_frame',
]
