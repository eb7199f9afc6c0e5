"""
Geometric consensus between the ego and the multi-view proposals.

Multi-view proposals that no ego proposal overlaps, and that are backed by at
least rho ego points, are added to the ego proposals before NMS. They are
objects the ego sensor saw only partially (occluded or distant) that the
cooperative view recovered.
"""
import numpy as np

from packages.errors import InvalidInputError
from packages.geometry.boxes import PointCloud, ProposalSet, View
from packages.geometry.iou import iou_matrix
from packages.geometry.nms import nms
from packages.geometry.transforms import points_in_box
from packages.observability import get_metrics


def unmatched_valid_set(ego: ProposalSet, multi: ProposalSet, ego_cloud: PointCloud,
                        eta_ccl: float = 0.3, rho: int = 5) -> ProposalSet:
    if not 0.0 < eta_ccl < 1.0:
        raise InvalidInputError(f"eta_ccl must lie in (0, 1), got {eta_ccl}")
    if rho < 0:
        raise InvalidInputError(f"rho must be >= 0, got {rho}")
    if len(multi) == 0:
        return ProposalSet(multi.frame_id, View.MULTI, ())

    if len(ego):
        best = iou_matrix(multi.boxes, ego.boxes).max(axis=1)
    else:
        best = np.zeros(len(multi))
    kept = [
        p for p, overlap in zip(multi, best)
        if overlap < eta_ccl and points_in_box(ego_cloud, p.box).count >= rho
    ]
    return ProposalSet(multi.frame_id, View.MULTI, tuple(kept))


def consensus_labels(ego: ProposalSet, unmatched: ProposalSet, eta_ccl: float = 0.3) -> ProposalSet:
    """NMS over the ego proposals joined with the unmatched valid set"""
    union = ProposalSet(ego.frame_id, View.EGO, ego.items + unmatched.items)
    out = nms(union, eta_ccl)
    get_metrics().record_stage_counts("ccl", View.EGO.value, len(ego), len(out))
    return out
