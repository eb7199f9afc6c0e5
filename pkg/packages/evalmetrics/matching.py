"""
Greedy one-to-one assignment of predictions to ground-truth boxes.
"""
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from packages.errors import InvalidInputError
from packages.geometry.boxes import Box3D, Proposal, ProposalSet
from packages.geometry.iou import iou_matrix
from packages.geometry.nms import confidence_order

Predictions = Union[ProposalSet, Sequence[Proposal]]


@dataclass(frozen=True)
class MatchResult:
    """TP flags per prediction (input order) and matched flags per ground-truth box"""
    confidences: np.ndarray
    tp: np.ndarray
    gt_matched: np.ndarray
    iou_threshold: float

    @property
    def tp_count(self) -> int:
        return int(np.sum(self.tp))

    @property
    def fp_count(self) -> int:
        return int(self.tp.size - np.sum(self.tp))

    @property
    def num_gt(self) -> int:
        return int(self.gt_matched.size)


def _items(preds: Predictions) -> Sequence[Proposal]:
    return preds.items if isinstance(preds, ProposalSet) else list(preds)


def match(preds: Predictions, gts: Iterable[Box3D], iou_thr: float) -> MatchResult:
    """
    Predictions in descending confidence each claim the highest-IoU unmatched
    ground truth with IoU >= iou_thr; otherwise they are false positives.
    """
    if not 0.0 < iou_thr < 1.0:
        raise InvalidInputError(f"IoU threshold must lie in (0, 1), got {iou_thr}")
    items = _items(preds)
    gts = list(gts)
    conf = np.array([p.confidence for p in items], dtype=float)
    tp = np.zeros(len(items), dtype=bool)
    matched = np.zeros(len(gts), dtype=bool)
    if items and gts:
        ious = iou_matrix([p.box for p in items], gts)
        for idx in confidence_order(conf):
            row = np.where(matched, -1.0, ious[idx])
            best = int(np.argmax(row))
            if row[best] >= iou_thr:
                tp[idx] = True
                matched[best] = True
    return MatchResult(conf, tp, matched, float(iou_thr))
