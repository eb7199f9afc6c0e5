"""
History-weighted fusion of the filtered multi-view proposals with the memory bank.
"""
from typing import Optional, Tuple

from packages.config.settings import ScheduleParams
from packages.errors import InvalidInputError
from packages.geometry.boxes import ProposalSet
from packages.geometry.nms import nms_indices
from packages.observability import get_metrics
from packages.pps.memory_bank import MemoryBank
from packages.pps.schedule import confidence_threshold, dynamic_lambda


def stabilize_set(filtered: ProposalSet, bank: MemoryBank, t: float, params: ScheduleParams,
                  eta: float, fixed_tau: Optional[float] = None) -> Tuple[ProposalSet, ProposalSet]:
    """
    Prune, reweight and suppress one frame.

    Returns the stabilized set (reweighted confidences) and the same boxes with
    their un-reweighted confidences, which is what the bank keeps.
    """
    if not 0.0 < eta < 1.0:
        raise InvalidInputError(f"eta must lie in (0, 1), got {eta}")
    tau = confidence_threshold(t, params, fixed_tau)
    lam = dynamic_lambda(t, params)

    current = [p for p in filtered if p.confidence >= tau]
    history = list(bank.get(filtered.frame_id))
    raw = current + history
    weighted = ([p.with_confidence((1.0 - lam) * p.confidence) for p in current]
                + [p.with_confidence(lam * p.confidence) for p in history])

    keep = nms_indices([p.box for p in weighted], [p.confidence for p in weighted], eta)
    get_metrics().record_nms(len(weighted), len(keep))
    get_metrics().record_stage_counts("pps", filtered.view.value, len(filtered), len(keep))
    return (filtered.with_items(weighted[i] for i in keep),
            filtered.with_items(raw[i] for i in keep))


def stabilize(filtered: ProposalSet, bank: MemoryBank, t: float, params: ScheduleParams,
              eta: float = 0.3, fixed_tau: Optional[float] = None) -> Tuple[ProposalSet, MemoryBank]:
    stabilized, stored = stabilize_set(filtered, bank, t, params, eta, fixed_tau)
    return stabilized, bank.store(stored)
