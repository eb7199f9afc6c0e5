#!/usr/bin/env python3
"""
Unit tests for pipeline configuration loading and overrides
"""

import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from pydantic import ValidationError

# Add packages to path
sys.path.append(str(Path(__file__).parent.parent))
from packages.config import (
    EvalSettings,
    PipelineConfig,
    SceneConfig,
    StageToggles,
    checkpoint_iterations,
    dump_config,
    load_config,
)
from packages.errors import ArtifactIOError, InvalidInputError


def clean_env():
    env = dict(os.environ)
    env.pop("UMS_OUTPUT_DIR", None)
    env.pop("UMS_WORKERS", None)
    return patch.dict(os.environ, env, clear=True)


class TestDefaults(unittest.TestCase):
    """Built-in defaults and the shipped YAML"""

    def test_shipped_file_matches_builtin_defaults(self):
        with clean_env():
            self.assertEqual(load_config(), PipelineConfig())

    def test_default_values(self):
        cfg = PipelineConfig()
        self.assertEqual((cfg.iterations, cfg.epochs, cfg.min_confidence), (20, 10, 0.01))
        self.assertEqual((cfg.loss.mu1, cfg.loss.mu2, cfg.loss.mu3), (1.0, 1.0, 1.5))
        self.assertEqual((cfg.ppf.c_low, cfg.ppf.c_high), (0.1, 0.7))
        self.assertEqual((cfg.ccl.eta_ccl, cfg.ccl.rho, cfg.ccl.gamma), (0.3, 5, 1e-3))
        self.assertEqual(cfg.eval.iou_thresholds, (0.3, 0.5))
        self.assertEqual(cfg.toggles.label(), "PPF+PPS+CCL")

    def test_schedule_centers(self):
        self.assertEqual(PipelineConfig(iterations=8).schedule_params.beta_tau, 4.0)
        cfg = PipelineConfig(iterations=8).with_updates(**{"schedule.beta_lambda": 2.0})
        self.assertEqual((cfg.schedule_params.beta_tau, cfg.schedule_params.beta_lambda), (4.0, 2.0))

    def test_checkpoint_iterations(self):
        self.assertEqual(checkpoint_iterations(PipelineConfig(iterations=8)), [1, 5, 8])
        self.assertEqual(checkpoint_iterations(PipelineConfig()), [1, 5, 10, 20])
        self.assertEqual(checkpoint_iterations(PipelineConfig(iterations=1)), [1])

    def test_toggle_labels(self):
        self.assertEqual(StageToggles(ppf=False, pps=False, ccl=False).label(), "none")
        self.assertEqual(StageToggles(pps=False).label(), "PPF+CCL")


class TestOverrides(unittest.TestCase):
    """Dotted-key overrides and validation"""

    def test_with_updates_returns_new_config(self):
        base = PipelineConfig()
        cfg = base.with_updates(**{"pps.eta": 0.4, "ccl.grid.cell_size": 1.0, "iterations": 5})
        self.assertEqual((cfg.pps.eta, cfg.ccl.grid.cell_size, cfg.iterations), (0.4, 1.0, 5))
        self.assertEqual(base.pps.eta, 0.3)

    def test_none_overrides_are_ignored(self):
        self.assertEqual(PipelineConfig().with_updates(seed=None), PipelineConfig())

    def test_invalid_values_raise(self):
        cfg = PipelineConfig()
        for overrides in ({"pps.eta": 1.5}, {"pps.bogus": 1}, {"ppf.c_low": 0.9},
                          {"schedule.tau_min": 0.5}, {"iterations": 0}):
            with self.assertRaises(InvalidInputError):
                cfg.with_updates(**overrides)

    def test_override_into_scalar_raises(self):
        with self.assertRaises(InvalidInputError):
            PipelineConfig().with_updates(**{"iterations.value": 3})

    def test_load_requires_scene_dir(self):
        with self.assertRaises(InvalidInputError):
            PipelineConfig().with_updates(scene_source="load")
        cfg = PipelineConfig().with_updates(scene_source="load", scene_dir="scenes/a")
        self.assertEqual(cfg.scene_dir, "scenes/a")

    def test_nested_validators(self):
        with self.assertRaises(ValidationError):
            SceneConfig(vehicles_per_frame=(9, 3))
        with self.assertRaises(ValidationError):
            EvalSettings(bands=((0.0, 40.0), (30.0, 50.0)))
        with self.assertRaises(ValidationError):
            PipelineConfig(unknown_key=1)

    def test_frozen(self):
        with self.assertRaises(ValidationError):
            PipelineConfig().iterations = 3


class TestFilesAndEnvironment(unittest.TestCase):
    """YAML files and environment precedence"""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_dump_and_load(self):
        cfg = PipelineConfig().with_updates(**{"iterations": 7, "pps.fixed_tau": 0.2, "toggles.ccl": False})
        with clean_env():
            loaded = load_config(dump_config(cfg, self.tmp / "nested" / "config.yaml"))
        self.assertEqual(loaded, cfg)

    def test_file_then_overrides(self):
        path = self.tmp / "c.yaml"
        path.write_text("iterations: 4\npps:\n  eta: 0.5\n", encoding="utf-8")
        with clean_env():
            cfg = load_config(path, {"pps.eta": 0.6})
        self.assertEqual((cfg.iterations, cfg.pps.eta, cfg.epochs), (4, 0.6, 10))

    def test_environment_wins(self):
        path = self.tmp / "c.yaml"
        path.write_text("output_dir: from_file\nworkers: 2\n", encoding="utf-8")
        with clean_env(), patch.dict(os.environ, {"UMS_OUTPUT_DIR": "from_env", "UMS_WORKERS": "3"}):
            cfg = load_config(path, {"output_dir": "from_override"})
        self.assertEqual((cfg.output_dir, cfg.workers), ("from_env", 3))

    def test_bad_environment_value(self):
        with clean_env(), patch.dict(os.environ, {"UMS_WORKERS": "many"}):
            with self.assertRaises(InvalidInputError):
                load_config()

    def test_missing_and_malformed_files(self):
        with clean_env():
            with self.assertRaises(ArtifactIOError):
                load_config(self.tmp / "missing.yaml")
            bad = self.tmp / "bad.yaml"
            bad.write_text("iterations: [1, 2\n", encoding="utf-8")
            with self.assertRaises(ArtifactIOError):
                load_config(bad)
            listing = self.tmp / "list.yaml"
            listing.write_text("- 1\n- 2\n", encoding="utf-8")
            with self.assertRaises(InvalidInputError):
                load_config(listing)


if __name__ == "__main__":
    unittest.main()
