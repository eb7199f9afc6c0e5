"""
Proposal purifying filter: box-local instance features and a self-supervised classifier.
"""

from .classifier import (
    PpfClassifier,
    SelfSupSets,
    load_classifier,
    ppf_filter,
    ppf_loss_and_grad,
    ppf_scores,
    save_classifier,
    select_training_sets,
    train_ppf,
)
from .features import FEATURE_DIM, FEATURE_NAMES, InstanceFeatures, crop, extract_features, instance_features

__all__ = [
    'FEATURE_DIM',
    'FEATURE_NAMES',
    'InstanceFeatures',
    'PpfClassifier',
    'SelfSupSets',
    'crop',
    'extract_features',
    'instance_features',
    'load_classifier',
    'ppf_filter',
    'ppf_loss_and_grad',
    'ppf_scores',
    'save_classifier',
    'select_training_sets',
    'train_ppf',
]
