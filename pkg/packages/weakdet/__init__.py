"""
Weak detectors: clustering proposer, logistic scorer and box correction.
"""

from .checkpoint import load_detector, save_detector
from .detector import (
    Candidates,
    DetectorModel,
    candidate_boxes,
    extract_candidates,
    proposals_from_candidates,
    propose,
)
from .losses import focal_loss, smooth_l1
from .training import FitTrace, fit_detector, fit_detector_traced, initialize_detector

__all__ = [
    'Candidates',
    'DetectorModel',
    'FitTrace',
    'candidate_boxes',
    'extract_candidates',
    'fit_detector',
    'fit_detector_traced',
    'focal_loss',
    'initialize_detector',
    'load_detector',
    'proposals_from_candidates',
    'propose',
    'save_detector',
    'smooth_l1',
]
