"""
Progressive proposal stabilizing: curriculum pruning and memory-bank fusion.
"""

from .memory_bank import MemoryBank, load_bank, save_bank
from .schedule import confidence_threshold, dynamic_lambda, dynamic_tau
from .stabilize import stabilize, stabilize_set

__all__ = [
    'MemoryBank',
    'confidence_threshold',
    'dynamic_lambda',
    'dynamic_tau',
    'load_bank',
    'save_bank',
    'stabilize',
    'stabilize_set',
]
