#!/usr/bin/env python3
"""
Unit tests for structured pipeline logging and in-process metrics
"""

import sys
import threading
import unittest
from pathlib import Path

import ujson as json

# Add packages to path
sys.path.append(str(Path(__file__).parent.parent))
from packages.errors import PipelineStageError
from packages.observability import PipelineMetrics, StructuredLogger, get_logger, log_stage_timing, run_context


def events(captured):
    return [json.loads(record.getMessage()) for record in captured.records]


class TestStructuredLogger(unittest.TestCase):
    """JSON log lines and stage timers"""

    def setUp(self):
        self.logger = StructuredLogger("ums.test")
        self.run_id = self.logger.set_run_id("run-1")

    def test_log_lines_carry_run_id(self):
        with self.assertLogs("ums.test", level="DEBUG") as captured:
            self.logger.log_stage_result("ppf", 10, 7, view="multi")
            self.logger.log_fit_epoch("ego", 3, 0.25, 0.5)
        stage, fit = events(captured)
        self.assertEqual(stage["event"], "stage_ppf_complete")
        self.assertEqual((stage["run_id"], stage["removed"], stage["view"]), ("run-1", 3, "multi"))
        self.assertEqual((fit["detector"], fit["epoch"]), ("ego", 3))
        self.assertEqual(captured.records[1].levelname, "DEBUG")

    def test_stage_timer_accumulates(self):
        for _ in range(2):
            with self.logger.stage_timer("pps"):
                pass
        with self.assertRaises(RuntimeError):
            with self.logger.stage_timer("ccl"):
                raise RuntimeError("boom")
        self.assertEqual(sorted(self.logger.stage_timings), ["ccl", "pps"])
        summary = self.logger.get_stage_summary()
        self.assertEqual((summary["run_id"], summary["stage_count"]), ("run-1", 2))
        timings = self.logger.pop_stage_timings()
        self.assertTrue(all(v >= 0.0 for v in timings.values()))
        self.assertEqual(self.logger.stage_timings, {})
        self.assertEqual(self.logger.get_stage_summary(), {})

    def test_deviation_reported_once(self):
        with self.assertLogs("ums.test", level="INFO") as captured:
            self.logger.log_deviation("grid", "first")
            self.logger.log_deviation("grid", "second")
            self.logger.log_warning("only_once")
        self.assertEqual([e["event"] for e in events(captured)], ["method_deviation", "only_once"])

    def test_new_run_resets_timings(self):
        with self.logger.stage_timer("weakdet"):
            pass
        new_id = self.logger.set_run_id()
        self.assertNotEqual(new_id, "run-1")
        self.assertEqual(self.logger.stage_timings, {})

    def test_decorated_function_is_timed(self):
        @log_stage_timing("decorated")
        def work(x):
            return x * 2

        get_logger().pop_stage_timings()
        self.assertEqual(work(4), 8)
        self.assertIn("decorated", get_logger().stage_timings)


class TestRunContext(unittest.TestCase):
    """Run lifecycle logging"""

    def test_successful_run(self):
        with self.assertLogs("ums", level="INFO") as captured:
            with run_context("abc", command="run", tags=["PPF+PPS+CCL"]) as run_id:
                self.assertEqual(run_id, "abc")
        start, end = events(captured)
        self.assertEqual((start["event"], start["command"], start["tags"]), ("run_start", "run", ["PPF+PPS+CCL"]))
        self.assertTrue(end["success"])

    def test_failed_run_logs_stage(self):
        with self.assertLogs("ums", level="INFO") as captured:
            with self.assertRaises(PipelineStageError):
                with run_context("def", command="run"):
                    raise PipelineStageError("ppf", "no confident proposals")
        logged = events(captured)
        self.assertFalse(logged[1]["success"])
        self.assertEqual(logged[2]["event"], "error_occurred")
        self.assertEqual((logged[2]["error_stage"], logged[2]["error_type"]), ("ppf", "PipelineStageError"))


class TestPipelineMetrics(unittest.TestCase):
    """Counters, gauges and histograms"""

    def setUp(self):
        self.metrics = PipelineMetrics()

    def test_stage_and_nms_counters(self):
        self.metrics.record_stage_counts("ppf", "multi", 10, 6)
        self.metrics.record_stage_counts("ppf", "multi", 4, 4)
        self.metrics.record_nms(12, 5)
        counters = self.metrics.snapshot()["counters"]
        self.assertEqual((counters["ppf.multi.in"], counters["ppf.multi.out"]), (14, 10))
        self.assertEqual((counters["nms.calls"], counters["nms.suppressed"]), (1, 7))

    def test_fit_records(self):
        self.metrics.record_fit("ego", 10, 0.5, 2)
        self.metrics.record_fit("ego", 10, 0.3, 0)
        snap = self.metrics.snapshot()
        self.assertEqual(snap["counters"]["fit.ego.calls"], 2)
        self.assertEqual(snap["gauges"]["fit.ego.epochs"], 10.0)
        summary = snap["histogram_summary"]["fit.ego.final_loss"]
        self.assertEqual((summary["count"], summary["min"], summary["max"]), (2, 0.3, 0.5))
        self.assertAlmostEqual(summary["avg"], 0.4)

    def test_reset(self):
        self.metrics.increment("x", 3)
        self.metrics.observe("y", 1.0)
        self.metrics.reset()
        snap = self.metrics.snapshot()
        self.assertEqual((snap["counters"], snap["histogram_summary"]), ({}, {}))

    def test_thread_safe_increments(self):
        def bump():
            for _ in range(1000):
                self.metrics.increment("hits")

        threads = [threading.Thread(target=bump) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        self.assertEqual(self.metrics.snapshot()["counters"]["hits"], 4000)


if __name__ == "__main__":
    unittest.main()
