"""
Detection losses: focal loss for classification, smooth L1 for box regression.

All functions accept scalars or numpy arrays and evaluate elementwise.
Gradients are taken with respect to the pre-sigmoid logit (focal) or the
residual (smooth L1).
"""
import numpy as np
from scipy.special import expit

from packages.errors import InvalidInputError

PROB_EPS = 1e-7


def sigmoid(z):
    return expit(z)


def focal_loss(p, y, alpha: float = 0.25, gamma: float = 2.0):
    """
    y=1: -alpha * (1-p)^gamma * log(p)
    y=0: -(1-alpha) * p^gamma * log(1-p)
    with p clamped to [1e-7, 1-1e-7].
    """
    p = np.clip(np.asarray(p, dtype=float), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=float)
    pos = -alpha * (1.0 - p) ** gamma * np.log(p)
    neg = -(1.0 - alpha) * p ** gamma * np.log1p(-p)
    out = y * pos + (1.0 - y) * neg
    return float(out) if out.ndim == 0 else out


def focal_loss_grad_logit(z, y, alpha: float = 0.25, gamma: float = 2.0):
    """d focal_loss(sigmoid(z), y) / dz"""
    p = np.clip(expit(np.asarray(z, dtype=float)), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=float)
    pos = alpha * (1.0 - p) ** gamma * (gamma * p * np.log(p) - (1.0 - p))
    neg = (1.0 - alpha) * p ** gamma * (p - gamma * (1.0 - p) * np.log1p(-p))
    out = y * pos + (1.0 - y) * neg
    return float(out) if out.ndim == 0 else out


def binary_cross_entropy(p, y):
    p = np.clip(np.asarray(p, dtype=float), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=float)
    out = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def smooth_l1(residual, beta: float = 1.0):
    """0.5 r^2 / beta for |r| < beta, |r| - 0.5 beta otherwise"""
    if beta <= 0:
        raise InvalidInputError(f"smooth_l1 beta must be positive, got {beta}")
    r = np.abs(np.asarray(residual, dtype=float))
    out = np.where(r < beta, 0.5 * r * r / beta, r - 0.5 * beta)
    return float(out) if out.ndim == 0 else out


def smooth_l1_grad(residual, beta: float = 1.0):
    r = np.asarray(residual, dtype=float)
    out = np.where(np.abs(r) < beta, r / beta, np.sign(r))
    return float(out) if out.ndim == 0 else out
