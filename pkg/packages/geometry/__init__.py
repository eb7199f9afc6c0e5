"""
Oriented-box geometry: value types, frame transforms, rotated BEV IoU and NMS.
"""

from .boxes import (
    Box3D,
    PointCloud,
    PoseSE3,
    Proposal,
    ProposalSet,
    View,
    normalize_yaw,
)
from .iou import iou_matrix, rotated_iou_bev
from .nms import nms, nms_indices
from .transforms import (
    PointQuery,
    points_in_box,
    relative_pose,
    to_box_frame,
    transform_box,
    transform_points,
)

__all__ = [
    'Box3D',
    'PointCloud',
    'PointQuery',
    'PoseSE3',
    'Proposal',
    'ProposalSet',
    'View',
    'iou_matrix',
    'nms',
    'nms_indices',
    'normalize_yaw',
    'points_in_box',
    'relative_pose',
    'rotated_iou_bev',
    'to_box_frame',
    'transform_box',
    'transform_points',
]
