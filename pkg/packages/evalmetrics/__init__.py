"""
Ground-truth evaluation: greedy matching, precision/recall, AP and range bands.
"""

from .ap import (
    AP_METHODS,
    Tally,
    average_precision,
    frame_tally,
    pooled_tally,
    precision_recall,
    range_banded_ap,
)
from .matching import MatchResult, match
from .report import EvalReport, csv_columns, evaluate_frames, render_csv, report_row, write_csv

__all__ = [
    'AP_METHODS',
    'EvalReport',
    'MatchResult',
    'Tally',
    'average_precision',
    'csv_columns',
    'evaluate_frames',
    'frame_tally',
    'match',
    'pooled_tally',
    'precision_recall',
    'range_banded_ap',
    'render_csv',
    'report_row',
    'write_csv',
]
