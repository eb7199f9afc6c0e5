"""
Proposal purifying filter.

A logistic instance classifier is trained from the confidence extremes of the
multi-view detector: proposals at or below c_low are negatives, those at or
above c_high are positives, and the ambiguous middle band is discarded. At
inference every proposal's crop is scored and only those with q >= 0.5 are
kept.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Tuple, Union

import numpy as np
from scipy.special import expit

from packages.errors import ArtifactIOError, InsufficientSupervisionError, InvalidInputError, TrainingDivergedError
from packages.geometry.boxes import PointCloud, Proposal, ProposalSet
from packages.observability import get_logger, get_metrics
from packages.ppf.features import FEATURE_DIM, crop, feature_matrix, instance_features
from packages.util.textio import format_floats, read_named_vectors, write_named_vectors
from packages.weakdet.losses import binary_cross_entropy

MAX_HALVINGS = 30
MIN_FEATURE_STD = 1e-6
HEADER = "# ums ppf checkpoint"

Sample = Tuple[Proposal, PointCloud]


@dataclass(frozen=True)
class SelfSupSets:
    negatives: Tuple[Sample, ...] = ()
    positives: Tuple[Sample, ...] = ()

    @property
    def sizes(self) -> Tuple[int, int]:
        return len(self.negatives), len(self.positives)

    def merge(self, other: "SelfSupSets") -> "SelfSupSets":
        return SelfSupSets(self.negatives + other.negatives, self.positives + other.positives)

    @classmethod
    def combine(cls, parts: Iterable["SelfSupSets"]) -> "SelfSupSets":
        out = cls()
        for part in parts:
            out = out.merge(part)
        return out

    def training_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        """Feature matrix and 0/1 labels, negatives first"""
        samples = self.negatives + self.positives
        if not samples:
            return np.zeros((0, FEATURE_DIM)), np.zeros(0)
        x = np.vstack([instance_features(c.points, p.box).as_vector() for p, c in samples])
        y = np.concatenate([np.zeros(len(self.negatives)), np.ones(len(self.positives))])
        return x, y


def select_training_sets(proposals: ProposalSet, cloud: PointCloud, c_low: float = 0.1,
                         c_high: float = 0.7, strict: bool = True) -> SelfSupSets:
    """
    Split a proposal set by confidence into self-supervision sets.

    With strict=False empty sets are returned as-is, so per-frame selections
    can be pooled before the emptiness check.
    """
    if not 0.0 <= c_low < c_high <= 1.0:
        raise InvalidInputError(f"need 0 <= c_low < c_high <= 1, got c_low={c_low}, c_high={c_high}")
    neg: List[Sample] = []
    pos: List[Sample] = []
    for p in proposals:
        if p.confidence <= c_low:
            neg.append((p, crop(cloud, p.box)))
        elif p.confidence >= c_high:
            pos.append((p, crop(cloud, p.box)))
    sets = SelfSupSets(tuple(neg), tuple(pos))
    if strict:
        require_supervision(sets)
    return sets


def require_supervision(sets: SelfSupSets) -> None:
    n_neg, n_pos = sets.sizes
    if n_neg == 0 or n_pos == 0:
        raise InsufficientSupervisionError("proposal purifying filter needs both confidence extremes",
                                           negatives=n_neg, positives=n_pos)


@dataclass
class PpfClassifier:
    weights: np.ndarray = field(default_factory=lambda: np.zeros(FEATURE_DIM))
    bias: float = 0.0
    feature_mean: np.ndarray = field(default_factory=lambda: np.zeros(FEATURE_DIM))
    feature_std: np.ndarray = field(default_factory=lambda: np.ones(FEATURE_DIM))
    trained: bool = False
    keep_threshold: float = 0.5

    def __post_init__(self):
        for name in ("weights", "feature_mean", "feature_std"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            if arr.shape != (FEATURE_DIM,) or not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} must hold {FEATURE_DIM} finite values")
            setattr(self, name, arr)
        if np.any(self.feature_std <= 0):
            raise InvalidInputError("feature_std entries must be positive")
        self.bias = float(self.bias)

    def score(self, features: np.ndarray) -> np.ndarray:
        x = (np.asarray(features, dtype=float).reshape(-1, FEATURE_DIM) - self.feature_mean) / self.feature_std
        return expit(x @ self.weights + self.bias)


def ppf_loss_and_grad(params: np.ndarray, x: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean BCE of a logistic model over standardized features; params = (weights, bias)"""
    z = x @ params[:-1] + params[-1]
    p = expit(z)
    loss = float(np.mean(binary_cross_entropy(p, y)))
    g = (p - y) / y.shape[0]
    return loss, np.append(x.T @ g, np.sum(g))


def train_ppf(sets: SelfSupSets, epochs: int = 200, step: float = 1.0,
              keep_threshold: float = 0.5) -> PpfClassifier:
    """Gradient descent with step halving on the BCE of the pooled self-supervision sets."""
    require_supervision(sets)
    if epochs < 1:
        raise InvalidInputError(f"epochs must be >= 1, got {epochs}")
    logger = get_logger()
    raw, y = sets.training_arrays()
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    std = np.where(std < MIN_FEATURE_STD, 1.0, std)
    x = (raw - mean) / std

    params = np.zeros(FEATURE_DIM + 1)
    loss, grad = ppf_loss_and_grad(params, x, y)
    for epoch in range(1, epochs + 1):
        trial_step = step
        for _ in range(MAX_HALVINGS):
            trial = params - trial_step * grad
            trial_loss, trial_grad = ppf_loss_and_grad(trial, x, y)
            if not math.isfinite(trial_loss):
                raise TrainingDivergedError("non-finite ppf loss",
                                            {"epoch": epoch, "loss": trial_loss, "step": trial_step})
            if trial_loss <= loss:
                params, loss, grad = trial, trial_loss, trial_grad
                break
            trial_step *= 0.5
        logger.log_fit_epoch("ppf", epoch, loss, trial_step)

    clf = PpfClassifier(params[:-1], params[-1], mean, std, True, keep_threshold)
    accuracy = float(np.mean((clf.score(raw) >= keep_threshold) == (y == 1)))
    n_neg, n_pos = sets.sizes
    logger.log_structured("INFO", "ppf_trained", negatives=n_neg, positives=n_pos,
                          final_loss=loss, train_accuracy=accuracy)
    get_metrics().record_fit("ppf", epochs, loss, 0)
    return clf


def ppf_scores(clf: PpfClassifier, proposals: ProposalSet, cloud: PointCloud) -> np.ndarray:
    return clf.score(feature_matrix(cloud, proposals.boxes)) if len(proposals) else np.zeros(0)


def ppf_filter(clf: PpfClassifier, proposals: ProposalSet, cloud: PointCloud) -> ProposalSet:
    """Keep the proposals whose crop scores at least the keep threshold; order is preserved."""
    if not clf.trained:
        raise InvalidInputError("ppf_filter needs a trained classifier")
    q = ppf_scores(clf, proposals, cloud)
    kept = [p for p, s in zip(proposals, q) if s >= clf.keep_threshold]
    get_metrics().record_stage_counts("ppf", proposals.view.value, len(proposals), len(kept))
    return proposals.with_items(kept)


def save_classifier(clf: PpfClassifier, path: Union[str, Path]) -> Path:
    entries = {
        "weights": format_floats(clf.weights),
        "bias": format_floats([clf.bias]),
        "feature_mean": format_floats(clf.feature_mean),
        "feature_std": format_floats(clf.feature_std),
        "keep_threshold": format_floats([clf.keep_threshold]),
        "trained": [str(int(clf.trained))],
    }
    return write_named_vectors(path, HEADER, entries)


def load_classifier(path: Union[str, Path]) -> PpfClassifier:
    entries = read_named_vectors(path, HEADER)
    try:
        return PpfClassifier(
            weights=[float(v) for v in entries["weights"]],
            bias=float(entries["bias"][0]),
            feature_mean=[float(v) for v in entries["feature_mean"]],
            feature_std=[float(v) for v in entries["feature_std"]],
            trained=bool(int(entries["trained"][0])),
            keep_threshold=float(entries["keep_threshold"][0]),
        )
    except (KeyError, IndexError, ValueError) as e:
        raise ArtifactIOError(path, f"incomplete ppf checkpoint: {e}") from e
