"""
Curriculum schedules for progressive proposal stabilizing.

    tau_t    = tau_min + (tau_max - tau_min) * sigmoid(k_tau * (t - beta_tau))
    lambda_t = sigmoid(k_lambda * (t - beta_lambda))

tau_t starts near tau_min so that early iterations keep most proposals and
tightens towards tau_max; lambda_t shifts weight from the current proposals
to the memory bank as training progresses.
"""
from typing import Optional

import numpy as np
from scipy.special import expit

from packages.config.settings import ScheduleParams
from packages.errors import InvalidInputError


def _center(value: Optional[float], name: str) -> float:
    if value is None:
        raise InvalidInputError(f"{name} is unset; resolve it with PipelineConfig.schedule_params")
    return float(value)


def _open_interval(value: float, lo: float, hi: float) -> float:
    """Clamp a saturated sigmoid back inside (lo, hi)"""
    return float(np.clip(value, np.nextafter(lo, hi), np.nextafter(hi, lo)))


def dynamic_tau(t: float, params: ScheduleParams) -> float:
    beta = _center(params.beta_tau, "beta_tau")
    value = params.tau_min + (params.tau_max - params.tau_min) * expit(params.k_tau * (t - beta))
    return _open_interval(value, params.tau_min, params.tau_max)


def dynamic_lambda(t: float, params: ScheduleParams) -> float:
    beta = _center(params.beta_lambda, "beta_lambda")
    return _open_interval(expit(params.k_lambda * (t - beta)), 0.0, 1.0)


def confidence_threshold(t: float, params: ScheduleParams, fixed_tau: Optional[float] = None) -> float:
    """Pruning threshold at iteration t; a fixed tau replaces the schedule"""
    return float(fixed_tau) if fixed_tau is not None else dynamic_tau(t, params)
