import os
import time
import uuid
from datetime import datetime, timezone
from typing import Dict, Any, Optional, List
from contextlib import contextmanager
from functools import wraps
import logging

import ujson as json

# Setup structured logging
logging.basicConfig(
    level=os.getenv("UMS_LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s [%(levelname)s] %(name)s: %(message)s',
    datefmt='%Y-%m-%d %H:%M:%S'
)


class StructuredLogger:
    """Structured logger for the UMS training pipeline with run tracing"""

    def __init__(self, name: str = "ums"):
        self.logger = logging.getLogger(name)
        self.run_id = None
        self.stage_timings: Dict[str, float] = {}
        self._reported_deviations = set()

    def set_run_id(self, run_id: Optional[str] = None) -> str:
        """Set run ID for tracing"""
        if run_id is None:
            run_id = str(uuid.uuid4())
        self.run_id = run_id
        self.stage_timings = {}
        return run_id

    def log_structured(self, level: str, event: str, **kwargs):
        """Log structured data with run context"""
        log_data = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "event": event,
            "run_id": self.run_id,
            **kwargs
        }
        log_message = json.dumps(log_data, ensure_ascii=False, default=str)

        level = level.upper()
        if level == "ERROR":
            self.logger.error(log_message)
        elif level == "WARNING":
            self.logger.warning(log_message)
        elif level == "DEBUG":
            self.logger.debug(log_message)
        else:
            self.logger.info(log_message)

    @contextmanager
    def stage_timer(self, stage_name: str):
        """Context manager to time a pipeline stage; durations accumulate per stage"""
        start_time = time.perf_counter()
        try:
            yield
        finally:
            duration_ms = (time.perf_counter() - start_time) * 1000
            self.stage_timings[stage_name] = round(
                self.stage_timings.get(stage_name, 0.0) + duration_ms, 2
            )

    def pop_stage_timings(self) -> Dict[str, float]:
        """Return and reset the accumulated stage timings"""
        timings, self.stage_timings = self.stage_timings, {}
        return timings

    def log_run_start(self, **kwargs):
        self.log_structured("INFO", "run_start", **kwargs)

    def log_run_end(self, success: bool, **kwargs):
        self.log_structured("INFO", "run_end", success=success, **kwargs)

    def log_stage_result(self, stage: str, input_count: int, output_count: int, **kwargs):
        """Log stage completion with proposal counts"""
        self.log_structured("INFO", f"stage_{stage}_complete",
                            stage=stage,
                            input_count=input_count,
                            output_count=output_count,
                            removed=input_count - output_count,
                            duration_ms=self.stage_timings.get(stage, 0.0),
                            **kwargs)

    def log_iteration(self, iteration: int, metrics: Dict[str, Any], **kwargs):
        """Log the end of one refinement iteration"""
        self.log_structured("INFO", "iteration_complete",
                            iteration=iteration,
                            metrics=metrics,
                            stage_timings=dict(self.stage_timings),
                            **kwargs)

    def log_fit_epoch(self, detector: str, epoch: int, loss: float, step: float, **kwargs):
        self.log_structured("DEBUG", "fit_epoch",
                            detector=detector,
                            epoch=epoch,
                            loss=loss,
                            step=step,
                            **kwargs)

    def log_deviation(self, key: str, description: str):
        """Record a documented deviation from the reference method, once per process"""
        if key in self._reported_deviations:
            return
        self._reported_deviations.add(key)
        self.log_structured("INFO", "method_deviation", key=key, description=description)

    def log_warning(self, event: str, **kwargs):
        self.log_structured("WARNING", event, **kwargs)

    def log_error(self, error: Exception, stage: str, **kwargs):
        """Log error with context"""
        self.log_structured("ERROR", "error_occurred",
                            error_type=type(error).__name__,
                            error_message=str(error),
                            error_stage=stage,
                            **kwargs)

    def get_stage_summary(self) -> Dict[str, Any]:
        """Get summary of the stage timings accumulated so far"""
        timings = self.stage_timings
        if not timings:
            return {}
        return {
            "run_id": self.run_id,
            "total_duration_ms": round(sum(timings.values()), 2),
            "stage_count": len(timings),
            "stages": dict(timings),
            "slowest_stage": max(timings.items(), key=lambda x: x[1])[0],
        }


# Global logger instance
_global_logger = None


def get_logger(name: str = "ums") -> StructuredLogger:
    """Get global structured logger instance"""
    global _global_logger
    if _global_logger is None:
        _global_logger = StructuredLogger(name)
    return _global_logger


def log_stage_timing(stage_name: str):
    """Decorator to time a function as a named stage"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            with get_logger().stage_timer(stage_name):
                return func(*args, **kwargs)
        return wrapper
    return decorator


@contextmanager
def run_context(run_id: Optional[str] = None, command: str = "", tags: Optional[List[str]] = None):
    """Context manager to handle a full pipeline run lifecycle"""
    logger = get_logger()
    actual_run_id = logger.set_run_id(run_id)
    logger.log_run_start(command=command, tags=tags or [])
    try:
        yield actual_run_id
        logger.log_run_end(success=True)
    except Exception as e:
        logger.log_run_end(success=False, error=str(e))
        logger.log_error(e, getattr(e, "stage", "run_context"))
        raise
