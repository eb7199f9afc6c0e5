"""
Observability package for the UMS training pipeline

This package provides:
- Structured JSON logging with run tracing
- Per-stage wall-clock timers
- In-process counters for proposal flow through the refinement stages
"""

from .logger import (
    StructuredLogger,
    get_logger,
    log_stage_timing,
    run_context
)

from .metrics import (
    PipelineMetrics,
    get_metrics
)

__all__ = [
    'StructuredLogger',
    'PipelineMetrics',
    'get_logger',
    'get_metrics',
    'log_stage_timing',
    'run_context'
]
