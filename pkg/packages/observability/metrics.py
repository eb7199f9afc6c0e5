import time
import threading
from collections import defaultdict
from typing import Dict, Any, List


class PipelineMetrics:
    """In-process counters and value histograms for the training pipeline"""

    def __init__(self):
        self.start_time = time.time()
        self._lock = threading.Lock()
        self.counters = defaultdict(int)
        self.histograms = defaultdict(list)
        self.gauges = defaultdict(float)

    def increment(self, key: str, amount: int = 1):
        with self._lock:
            self.counters[key] += amount

    def observe(self, key: str, value: float):
        with self._lock:
            self.histograms[key].append(float(value))

    def set_gauge(self, key: str, value: float):
        with self._lock:
            self.gauges[key] = float(value)

    def record_stage_counts(self, stage: str, view: str, input_count: int, output_count: int):
        """Record proposals entering and leaving a refinement stage"""
        with self._lock:
            self.counters[f"{stage}.{view}.in"] += input_count
            self.counters[f"{stage}.{view}.out"] += output_count

    def record_nms(self, input_count: int, output_count: int):
        with self._lock:
            self.counters["nms.calls"] += 1
            self.counters["nms.suppressed"] += input_count - output_count

    def record_fit(self, detector: str, epochs: int, final_loss: float, skipped_regression: int):
        with self._lock:
            self.counters[f"fit.{detector}.calls"] += 1
            self.counters[f"fit.{detector}.skipped_regression"] += skipped_regression
            self.histograms[f"fit.{detector}.final_loss"].append(float(final_loss))
            self.gauges[f"fit.{detector}.epochs"] = float(epochs)

    def reset(self):
        with self._lock:
            self.counters.clear()
            self.histograms.clear()
            self.gauges.clear()
            self.start_time = time.time()

    def snapshot(self) -> Dict[str, Any]:
        """Get internal metrics summary"""
        with self._lock:
            return {
                "uptime_seconds": time.time() - self.start_time,
                "counters": dict(sorted(self.counters.items())),
                "gauges": dict(sorted(self.gauges.items())),
                "histogram_summary": {
                    key: _summarize(values)
                    for key, values in sorted(self.histograms.items())
                },
            }


def _summarize(values: List[float]) -> Dict[str, float]:
    return {
        "count": len(values),
        "avg": sum(values) / max(len(values), 1),
        "min": min(values) if values else 0.0,
        "max": max(values) if values else 0.0,
    }


# Global metrics instance
_global_metrics = None


def get_metrics() -> PipelineMetrics:
    """Get global metrics instance"""
    global _global_metrics
    if _global_metrics is None:
        _global_metrics = PipelineMetrics()
    return _global_metrics
