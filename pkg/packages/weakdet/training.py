"""
Fitting the weak detectors against pseudo labels.

Training loss of one detector:

    mu1 * mean focal(sigmoid(z_i), y_i)  +  mu2 * mean smooth_l1(r_ik)

over all cached candidates i (labels y_i from IoU matching against the pseudo
boxes) and over the (l, w, h, z) residuals r_ik of the matched candidates.
For the ego detector z_i also carries the auxiliary cross-view input
(aux_weight * a_i), where a_i is the mu3-scaled masked BEV discrepancy inside
the candidate footprint.

Optimization is full-batch gradient descent with step halving: a step that
would raise the loss is halved until it does not, so the recorded per-epoch
loss never increases.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from packages.config.settings import DetectorSettings, LossWeights
from packages.errors import InsufficientSupervisionError, InvalidInputError, TrainingDivergedError
from packages.geometry.boxes import Box3D, PointCloud, ProposalSet
from packages.geometry.iou import iou_matrix
from packages.observability import get_logger, get_metrics
from packages.ppf.features import FEATURE_DIM
from packages.weakdet.detector import (
    BOX_OFFSET_DIMS,
    Candidates,
    DetectorModel,
    candidate_boxes,
    extract_candidates,
)
from packages.weakdet.losses import focal_loss, focal_loss_grad_logit, sigmoid, smooth_l1, smooth_l1_grad

MAX_HALVINGS = 30
MIN_FEATURE_STD = 1e-6

_N_OFF = len(BOX_OFFSET_DIMS)
# parameter vector layout: scorer weights, bias, aux weight, box scales, box biases
_W = slice(0, FEATURE_DIM)
_B = FEATURE_DIM
_AUX = FEATURE_DIM + 1
_SCALE = slice(FEATURE_DIM + 2, FEATURE_DIM + 2 + _N_OFF)
_BIAS = slice(FEATURE_DIM + 2 + _N_OFF, FEATURE_DIM + 2 + 2 * _N_OFF)
PARAM_DIM = FEATURE_DIM + 2 + 2 * _N_OFF

PseudoLabels = Union[Mapping[int, ProposalSet], Iterable[Union[ProposalSet, Tuple[int, ProposalSet]]]]


@dataclass
class TrainingBatch:
    """Fixed labels and regression targets for one fit call"""
    features: np.ndarray
    labels: np.ndarray
    aux: np.ndarray
    reg_inputs: np.ndarray
    reg_targets: np.ndarray

    @property
    def positives(self) -> int:
        return int(np.sum(self.labels == 1))

    @property
    def negatives(self) -> int:
        return int(np.sum(self.labels == 0))

    @property
    def matched_pairs(self) -> int:
        return int(self.reg_inputs.shape[0])


@dataclass
class FitTrace:
    detector: str
    losses: List[float] = field(default_factory=list)
    steps: List[float] = field(default_factory=list)
    positives: int = 0
    negatives: int = 0
    matched_pairs: int = 0
    skipped_regression: bool = False

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def pack_params(model: DetectorModel) -> np.ndarray:
    theta = np.zeros(PARAM_DIM)
    theta[_W] = model.scorer_weights
    theta[_B] = model.scorer_bias
    theta[_AUX] = model.aux_weight
    theta[_SCALE] = model.box_scale
    theta[_BIAS] = model.box_bias
    return theta


def unpack_params(model: DetectorModel, theta: np.ndarray) -> DetectorModel:
    out = model.copy()
    out.scorer_weights = theta[_W].copy()
    out.scorer_bias = float(theta[_B])
    out.aux_weight = float(theta[_AUX])
    out.box_scale = theta[_SCALE].copy()
    out.box_bias = theta[_BIAS].copy()
    return out


def detector_loss_and_grad(theta: np.ndarray, batch: TrainingBatch, model: DetectorModel,
                           weights: LossWeights, regress: bool = True) -> Tuple[float, np.ndarray]:
    """Training loss and its gradient with respect to the packed parameter vector"""
    grad = np.zeros(PARAM_DIM)
    loss = 0.0

    n = batch.labels.shape[0]
    if n:
        x = model.standardize(batch.features)
        z = x @ theta[_W] + theta[_B] + theta[_AUX] * batch.aux
        p = sigmoid(z)
        loss += weights.mu1 * float(np.mean(focal_loss(p, batch.labels, weights.focal_alpha, weights.focal_gamma)))
        g = weights.mu1 * np.asarray(
            focal_loss_grad_logit(z, batch.labels, weights.focal_alpha, weights.focal_gamma)
        ) / n
        grad[_W] = x.T @ g
        grad[_B] = float(np.sum(g))
        grad[_AUX] = float(np.sum(g * batch.aux))

    m = batch.reg_inputs.shape[0]
    if regress and m:
        pred = batch.reg_inputs * theta[_SCALE] + theta[_BIAS]
        residual = pred - batch.reg_targets
        loss += weights.mu2 * float(np.mean(smooth_l1(residual, weights.smooth_l1_beta)))
        d = weights.mu2 * np.asarray(smooth_l1_grad(residual, weights.smooth_l1_beta)) / residual.size
        grad[_SCALE] = np.sum(d * batch.reg_inputs, axis=0)
        grad[_BIAS] = np.sum(d, axis=0)

    return loss, grad


def _iter_pseudo(pseudo: PseudoLabels) -> Dict[int, ProposalSet]:
    if isinstance(pseudo, Mapping):
        return dict(pseudo)
    out: Dict[int, ProposalSet] = {}
    for item in pseudo:
        if isinstance(item, ProposalSet):
            out[item.frame_id] = item
        else:
            frame_id, proposals = item
            out[int(frame_id)] = proposals
    return out


def build_batch(model: DetectorModel, candidates: Mapping[int, Candidates],
                targets: Mapping[int, Sequence[Box3D]], match_iou: float,
                aux: Optional[Mapping[int, np.ndarray]] = None,
                frame_ids: Optional[Sequence[int]] = None) -> TrainingBatch:
    """
    Label every candidate of the listed frames against the target boxes.

    A candidate whose corrected box reaches `match_iou` with some target is a
    positive and regresses towards its best-overlapping target.
    """
    feats, labels, auxs, reg_in, reg_out = [], [], [], [], []
    for fid in (frame_ids if frame_ids is not None else sorted(targets)):
        cands = candidates.get(fid)
        if cands is None or len(cands) == 0:
            continue
        boxes = candidate_boxes(model, cands)
        tgt = list(targets.get(fid, ()))
        y = np.zeros(len(cands))
        if tgt:
            ious = iou_matrix(boxes, tgt)
            best = np.argmax(ious, axis=1)
            best_iou = ious[np.arange(len(cands)), best]
            matched = best_iou >= match_iou
            y[matched] = 1.0
            for i in np.flatnonzero(matched):
                t = tgt[best[i]]
                reg_in.append(cands.raw_dims[i])
                reg_out.append((t.l, t.w, t.h, t.cz))
        feats.append(cands.features)
        labels.append(y)
        a = aux.get(fid) if aux is not None else None
        auxs.append(np.zeros(len(cands)) if a is None else np.asarray(a, dtype=float))

    return TrainingBatch(
        features=np.vstack(feats) if feats else np.zeros((0, FEATURE_DIM)),
        labels=np.concatenate(labels) if labels else np.zeros(0),
        aux=np.concatenate(auxs) if auxs else np.zeros(0),
        reg_inputs=np.array(reg_in, dtype=float).reshape(-1, _N_OFF),
        reg_targets=np.array(reg_out, dtype=float).reshape(-1, _N_OFF),
    )


def descend(model: DetectorModel, batch: TrainingBatch, weights: LossWeights, epochs: int,
            learning_rate: float, steps_per_epoch: int, name: str) -> Tuple[DetectorModel, FitTrace]:
    """Full-batch gradient descent with step halving; returns the fitted copy and its loss trace."""
    logger = get_logger()
    regress = batch.matched_pairs > 0
    trace = FitTrace(detector=name, positives=batch.positives, negatives=batch.negatives,
                     matched_pairs=batch.matched_pairs, skipped_regression=not regress)
    if not regress:
        logger.log_warning("fit_no_matches", detector=name, candidates=int(batch.labels.shape[0]))

    theta = pack_params(model)
    loss, grad = detector_loss_and_grad(theta, batch, model, weights, regress)
    if not math.isfinite(loss):
        raise TrainingDivergedError("non-finite initial detector loss",
                                    {"detector": name, "epoch": 0, "loss": loss})
    for epoch in range(1, epochs + 1):
        step = learning_rate
        for _ in range(steps_per_epoch):
            accepted = False
            trial_step = step
            for _ in range(MAX_HALVINGS):
                trial = theta - trial_step * grad
                trial_loss, trial_grad = detector_loss_and_grad(trial, batch, model, weights, regress)
                if not math.isfinite(trial_loss):
                    raise TrainingDivergedError("non-finite detector loss",
                                                {"detector": name, "epoch": epoch, "loss": trial_loss,
                                                 "step": trial_step})
                if trial_loss <= loss:
                    theta, loss, grad = trial, trial_loss, trial_grad
                    accepted = True
                    break
                trial_step *= 0.5
            if not accepted:
                break
            step = trial_step
        trace.losses.append(loss)
        trace.steps.append(step)
        logger.log_fit_epoch(name, epoch, loss, step)

    fitted = unpack_params(model, theta)
    get_metrics().record_fit(name, epochs, trace.final_loss, int(not regress))
    return fitted, trace


def fit_detector_traced(model: DetectorModel, pseudo: PseudoLabels,
                        clouds: Optional[Mapping[int, PointCloud]] = None,
                        weights: LossWeights = LossWeights(), epochs: int = 10,
                        settings: DetectorSettings = DetectorSettings(),
                        candidates: Optional[Mapping[int, Candidates]] = None,
                        aux: Optional[Mapping[int, np.ndarray]] = None) -> Tuple[DetectorModel, FitTrace]:
    """
    Refit scorer and box correction against pseudo labels for `epochs` epochs.

    Candidates are re-extracted from `clouds` unless cached `candidates` are
    given. Labels are assigned once, with the model as passed in.
    """
    if epochs < 1:
        raise InvalidInputError(f"epochs must be >= 1, got {epochs}")
    targets = {fid: s.boxes for fid, s in _iter_pseudo(pseudo).items()}
    if candidates is None:
        if clouds is None:
            raise InvalidInputError("fit_detector needs clouds or cached candidates")
        candidates = {fid: extract_candidates(model, clouds[fid], fid) for fid in targets if fid in clouds}
    batch = build_batch(model, candidates, targets, settings.match_iou, aux=aux)
    return descend(model, batch, weights, epochs, settings.learning_rate, settings.steps_per_epoch, model.name)


def fit_detector(model: DetectorModel, pseudo: PseudoLabels,
                 clouds: Optional[Mapping[int, PointCloud]] = None,
                 weights: LossWeights = LossWeights(), epochs: int = 10,
                 settings: DetectorSettings = DetectorSettings(),
                 candidates: Optional[Mapping[int, Candidates]] = None,
                 aux: Optional[Mapping[int, np.ndarray]] = None) -> DetectorModel:
    fitted, _ = fit_detector_traced(model, pseudo, clouds, weights, epochs, settings, candidates, aux)
    return fitted


def feature_statistics(candidates: Iterable[Candidates]) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and std of candidate features, std floored away from zero"""
    stacks = [c.features for c in candidates if len(c)]
    if not stacks:
        return np.zeros(FEATURE_DIM), np.ones(FEATURE_DIM)
    feats = np.vstack(stacks)
    std = feats.std(axis=0)
    std = np.where(std < MIN_FEATURE_STD, 1.0, std)
    return feats.mean(axis=0), std


def outside_prior_envelope(raw_dims: np.ndarray, priors: Sequence[Box3D], tolerance: float) -> np.ndarray:
    """True for candidates whose raw (l, w) leaves the prior footprint range widened by `tolerance`"""
    raw_dims = np.asarray(raw_dims, dtype=float).reshape(-1, _N_OFF)
    dims = np.array([(b.l, b.w) for b in priors], dtype=float).reshape(-1, 2)
    if dims.size == 0:
        return np.zeros(len(raw_dims), dtype=bool)
    lo = dims.min(axis=0) * (1.0 - tolerance)
    hi = dims.max(axis=0) * (1.0 + tolerance)
    footprint = raw_dims[:, :2]
    return np.any((footprint < lo) | (footprint > hi), axis=1)


def initialize_detector(model: DetectorModel, candidates: Mapping[int, Candidates],
                        priors: Mapping[int, Sequence[Box3D]],
                        weights: LossWeights = LossWeights(),
                        settings: DetectorSettings = DetectorSettings(),
                        seed: int = 0) -> Tuple[DetectorModel, FitTrace]:
    """
    Pretrain a detector from positional priors.

    Candidates overlapping a communicated agent's self box are positives; a
    seeded random sample of the remaining candidates (negative_ratio per
    positive) are negatives. Unmatched clusters inside the prior size
    envelope stay out of the negative pool; the whole unmatched pool is used
    only when no cluster falls outside the envelope. Box corrections regress towards
    the prior boxes.
    """
    model = model.copy()
    frame_ids = sorted(candidates)
    model.feature_mean, model.feature_std = feature_statistics(candidates[f] for f in frame_ids)
    full = build_batch(model, candidates, priors, settings.match_iou, frame_ids=frame_ids)

    pos = np.flatnonzero(full.labels == 1)
    unmatched = np.flatnonzero(full.labels == 0)
    if pos.size == 0 or unmatched.size == 0:
        raise InsufficientSupervisionError(
            f"cannot initialize {model.name} from positional priors",
            negatives=int(unmatched.size), positives=int(pos.size),
        )
    raw = np.vstack([candidates[f].raw_dims for f in frame_ids if len(candidates[f])])
    prior_boxes = [b for f in frame_ids for b in priors.get(f, ())]
    off_envelope = outside_prior_envelope(raw, prior_boxes, settings.prior_shape_tolerance)
    neg_pool = unmatched[off_envelope[unmatched]]
    if neg_pool.size == 0:
        neg_pool = unmatched
    rng = np.random.default_rng([seed, 3_000_017])
    n_neg = min(neg_pool.size, max(1, int(round(settings.negative_ratio * pos.size))))
    neg = np.sort(rng.choice(neg_pool, size=n_neg, replace=False))
    keep = np.concatenate([pos, neg])
    batch = TrainingBatch(
        features=full.features[keep],
        labels=full.labels[keep],
        aux=np.zeros(keep.size),
        reg_inputs=full.reg_inputs,
        reg_targets=full.reg_targets,
    )
    get_logger().log_structured("INFO", "detector_initialized_from_priors",
                                detector=model.name,
                                positives=int(pos.size),
                                negatives=int(n_neg),
                                negative_pool=int(neg_pool.size),
                                unmatched=int(unmatched.size))
    return descend(model, batch, weights, settings.init_epochs, settings.learning_rate,
                   settings.steps_per_epoch, model.name)
