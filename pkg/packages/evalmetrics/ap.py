"""
Precision, recall and average precision.

Results from several frames are pooled into one ranked list before the
precision/recall curve is integrated, the usual dataset-level protocol.

Conventions: precision of an empty prediction set is 1, recall against an
empty ground truth is 1, and AP with no ground truth is 0.
"""
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from packages.errors import InvalidInputError
from packages.geometry.boxes import Box3D, ProposalSet
from packages.geometry.nms import confidence_order
from packages.evalmetrics.matching import MatchResult, Predictions, _items, match

AP_METHODS = ("all_point", "11_point", "40_point")

Band = Tuple[float, float]


@dataclass(frozen=True)
class Tally:
    """Pooled ranked TP flags and ground-truth count"""
    confidences: np.ndarray
    tp: np.ndarray
    num_gt: int

    @classmethod
    def from_match(cls, result: MatchResult) -> "Tally":
        return cls(result.confidences, result.tp, result.num_gt)

    @classmethod
    def pool(cls, tallies: Iterable["Tally"]) -> "Tally":
        tallies = list(tallies)
        if not tallies:
            return cls(np.zeros(0), np.zeros(0, dtype=bool), 0)
        return cls(
            np.concatenate([t.confidences for t in tallies]),
            np.concatenate([t.tp for t in tallies]).astype(bool),
            sum(t.num_gt for t in tallies),
        )

    @property
    def precision(self) -> float:
        return float(np.mean(self.tp)) if self.tp.size else 1.0

    @property
    def recall(self) -> float:
        return float(np.sum(self.tp) / self.num_gt) if self.num_gt else 1.0

    def curve(self) -> Tuple[np.ndarray, np.ndarray]:
        """Recall and precision after each prediction in descending confidence"""
        order = confidence_order(self.confidences)
        hits = self.tp[order].astype(float)
        cum_tp = np.cumsum(hits)
        ranks = np.arange(1, hits.size + 1)
        return cum_tp / max(self.num_gt, 1), cum_tp / ranks

    def average_precision(self, method: str = "all_point") -> float:
        if method not in AP_METHODS:
            raise InvalidInputError(f"unknown AP method {method!r}; expected one of {AP_METHODS}")
        if self.num_gt == 0 or self.tp.size == 0:
            return 0.0
        recall, precision = self.curve()
        if method == "all_point":
            return _all_point(recall, precision)
        if method == "11_point":
            return _sampled(recall, precision, np.linspace(0.0, 1.0, 11))
        return _sampled(recall, precision, np.linspace(1.0 / 40, 1.0, 40))


def _all_point(recall: np.ndarray, precision: np.ndarray) -> float:
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    # precision envelope
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _sampled(recall: np.ndarray, precision: np.ndarray, points: np.ndarray) -> float:
    total = 0.0
    for r in points:
        above = precision[recall >= r]
        total += float(above.max()) if above.size else 0.0
    return total / len(points)


def precision_recall(preds: Predictions, gts: Sequence[Box3D], iou_thr: float) -> Tuple[float, float]:
    tally = Tally.from_match(match(preds, gts, iou_thr))
    return tally.precision, tally.recall


def average_precision(preds: Predictions, gts: Sequence[Box3D], iou_thr: float,
                      method: str = "all_point") -> float:
    return Tally.from_match(match(preds, gts, iou_thr)).average_precision(method)


def band_label(band: Band) -> str:
    return f"{band[0]:g}-{band[1]:g}m"


def _within(preds: Predictions, gts: Sequence[Box3D], lo: float, hi: float):
    items = [p for p in _items(preds) if lo <= p.box.bev_range < hi]
    boxes = [b for b in gts if lo <= b.bev_range < hi]
    return items, boxes


def frame_tally(preds: Predictions, gts: Sequence[Box3D], iou_thr: float,
                band: Optional[Band] = None) -> Tally:
    """Match one frame, optionally restricted to a range band of box centers"""
    lo, hi = band if band is not None else (-np.inf, np.inf)
    items, boxes = _within(preds, gts, lo, hi)
    return Tally.from_match(match(items, boxes, iou_thr))


def range_banded_ap(preds: Predictions, gts: Sequence[Box3D], iou_thr: float,
                    bands: Sequence[Band], method: str = "all_point") -> Dict[str, float]:
    return {
        band_label(band): frame_tally(preds, gts, iou_thr, band).average_precision(method)
        for band in bands
    }


def pooled_tally(predictions: Mapping[int, ProposalSet], ground_truth: Mapping[int, Sequence[Box3D]],
                 iou_thr: float, band: Optional[Band] = None) -> Tally:
    """Tallies of every ground-truth frame pooled; a missing prediction set counts as empty"""
    parts: List[Tally] = []
    for fid in sorted(ground_truth):
        preds = predictions.get(fid)
        parts.append(frame_tally(preds.items if preds is not None else (), ground_truth[fid], iou_thr, band))
    return Tally.pool(parts)
