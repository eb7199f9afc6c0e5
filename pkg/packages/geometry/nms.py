from typing import List, Sequence

import numpy as np

from packages.errors import InvalidInputError
from packages.geometry.boxes import Box3D, ProposalSet
from packages.geometry.iou import rotated_iou_bev
from packages.observability.metrics import get_metrics


def confidence_order(confidences: Sequence[float]) -> np.ndarray:
    """Indices by descending confidence; equal confidences keep insertion order."""
    conf = np.asarray(confidences, dtype=float)
    return np.argsort(-conf, kind="stable")


def nms_indices(boxes: Sequence[Box3D], confidences: Sequence[float], eta: float) -> List[int]:
    """Greedy rotated-IoU suppression; returns survivor indices by descending confidence."""
    if not 0.0 < eta < 1.0:
        raise InvalidInputError(f"NMS threshold must lie in (0, 1), got {eta}")
    order = confidence_order(confidences)
    if order.size == 0:
        return []
    xy = np.array([[b.cx, b.cy, b.bev_radius] for b in boxes])
    keep: List[int] = []
    suppressed = np.zeros(len(boxes), dtype=bool)
    for rank, idx in enumerate(order):
        if suppressed[idx]:
            continue
        keep.append(int(idx))
        rest = order[rank + 1:]
        rest = rest[~suppressed[rest]]
        if rest.size == 0:
            continue
        reach = xy[idx, 2] + xy[rest, 2]
        near = rest[np.hypot(xy[rest, 0] - xy[idx, 0], xy[rest, 1] - xy[idx, 1]) < reach]
        for other in near:
            if rotated_iou_bev(boxes[idx], boxes[other]) >= eta:
                suppressed[other] = True
    return keep


def nms(proposals: ProposalSet, eta: float) -> ProposalSet:
    """Non-maximum suppression of a proposal set; output sorted by confidence descending."""
    items = proposals.items
    keep = nms_indices([p.box for p in items], [p.confidence for p in items], eta)
    get_metrics().record_nms(len(items), len(keep))
    return proposals.with_items(items[i] for i in keep)
