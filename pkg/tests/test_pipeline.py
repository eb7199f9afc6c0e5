#!/usr/bin/env python3
"""
End-to-end tests for the refinement loop, run artifacts, studies and the CLI
"""

import contextlib
import csv
import io
import sys
import tempfile
import unittest
from pathlib import Path
from unittest import mock

# Add packages to path
sys.path.append(str(Path(__file__).parent.parent))
from packages.config.settings import PipelineConfig
from packages.geometry.boxes import View
from packages.geometry.records import read_proposal_sets
from packages.scenesim.scene import generate_scene, ground_truth_index
from packages.scenesim.storage import load_scene
from services.training.artifacts import RunArtifacts
from services.training import pipeline
from services.training.pipeline import UmsTrainer, heldout_scene_config, load_test_scene, run_training
from services.training.studies import ABLATION_SETS, run_ablation

REPO = Path(__file__).parent.parent

SMALL = {
    "iterations": 2,
    "epochs": 2,
    "scene.num_frames": 6,
    "scene.frames_per_segment": 3,
    "scene.ground_points_per_agent": 200,
    "eval.test_num_frames": 3,
    "detector.init_epochs": 8,
    "ppf.epochs": 30,
    "ppf.c_high": 0.5,
    "ccl.grid.cell_size": 1.0,
    "ccl.grid.half_extent": 40.0,
}

SMALL_FLAGS = ["--frames", "4", "--iterations", "1", "--epochs", "1",
               "--set", "scene.frames_per_segment=2", "--set", "scene.ground_points_per_agent=100",
               "--set", "eval.test_num_frames=2", "--set", "detector.init_epochs=3"]


def small_config(**overrides) -> PipelineConfig:
    return PipelineConfig().with_updates(**{**SMALL, **overrides})


def read_rows(path: Path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def run_cli(argv):
    from scripts.ums import main

    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


class PipelineCase(unittest.TestCase):
    """Shared small scene"""

    @classmethod
    def setUpClass(cls):
        cls.cfg = small_config()
        cls.frames = generate_scene(cls.cfg.scene)
        cls.test_frames = generate_scene(heldout_scene_config(cls.cfg))

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()


class TestRefinementLoop(PipelineCase):
    """One trainer, stage by stage"""

    def test_disabled_stages_pass_through(self):
        cfg = self.cfg.with_updates(**ABLATION_SETS["none"], iterations=1)
        trainer = UmsTrainer(cfg, self.frames, ground_truth_index(self.frames))
        trainer.initialize()
        report = trainer.run_iteration(1)
        self.assertEqual(report.counts["filtered_multi"], report.counts["raw_multi"])
        self.assertEqual(report.counts["filtered_ego"], report.counts["raw_ego"])
        self.assertLessEqual(report.counts["pseudo_multi"], report.counts["filtered_multi"])
        self.assertLessEqual(report.counts["pseudo_ego"], report.counts["filtered_ego"])
        self.assertEqual(len(trainer.bank), 0)
        self.assertEqual(report.bev_loss, 0.0)
        self.assertIsNotNone(report.multi)

    def test_full_stages(self):
        result = run_training(self.cfg, self.frames, self.test_frames, self.tmp / "run")
        self.assertEqual([r.iteration for r in result.reports], [1, 2])
        first = result.reports[0]
        self.assertLessEqual(first.counts["filtered_multi"], first.counts["raw_multi"])
        self.assertLessEqual(first.counts["pseudo_multi"], first.counts["filtered_multi"])
        self.assertIsNotNone(result.classifier)
        self.assertEqual(len(result.bank), len(self.frames))
        self.assertEqual(sorted(result.final_detector_reports), ["multi_agent", "single_agent"])
        for report in result.final_detector_reports.values():
            self.assertTrue(0.0 <= report.ap_05 <= report.ap_03 <= 1.0)

    def test_no_ground_truth_skips_scoring(self):
        cfg = self.cfg.with_updates(**ABLATION_SETS["none"], iterations=1)
        trainer = UmsTrainer(cfg, [f.sensor_view() for f in self.frames])
        trainer.initialize()
        report = trainer.run_iteration(1)
        self.assertIsNone(report.multi)
        self.assertIsNone(report.ego)
        self.assertEqual(report.detectors, {})


class TestRunArtifacts(PipelineCase):
    """Determinism, resume and files on disk"""

    def setUp(self):
        super().setUp()
        self.cfg_nopf = self.cfg.with_updates(**{"toggles.ppf": False})

    def test_artifacts_written(self):
        run_dir = self.tmp / "run"
        run_training(self.cfg_nopf, self.frames, self.test_frames, run_dir)
        art = RunArtifacts(run_dir)
        for path in (art.config_path, art.manifest_path, art.progress_path, art.metrics_csv, art.detector_csv,
                     art.report_path(1), art.report_path(2), art.checkpoint_path("detector_multi"),
                     art.checkpoint_path("detector_ego_init"), art.checkpoint_path("bank")):
            self.assertTrue(path.exists(), path)
        self.assertEqual(art.completed_iteration(), 2)
        self.assertFalse(art.checkpoint_path("ppf").exists())
        pseudo = read_proposal_sets(art.pseudo_path(2, "multi"))
        self.assertTrue(set(pseudo) <= {f.frame_id for f in self.frames})
        self.assertTrue(all(s.view == View.MULTI for s in pseudo.values()))
        manifest = art.read_json(art.manifest_path)
        self.assertEqual((manifest["toggles"], manifest["iterations"]), ("PPS+CCL", 2))
        self.assertIn("init_negatives", manifest["deviations"])
        rows = read_rows(art.metrics_csv)
        self.assertEqual([(r["iteration"], r["view"]) for r in rows],
                         [("1", "multi"), ("1", "ego"), ("2", "multi"), ("2", "ego")])
        detector_rows = read_rows(art.detector_csv)
        self.assertEqual({r["view"] for r in detector_rows}, {"multi_agent", "single_agent"})

    def test_deterministic(self):
        for name in ("a", "b"):
            run_training(self.cfg_nopf, self.frames, self.test_frames, self.tmp / name)
        for csv_name in ("metrics.csv", "detector_metrics.csv"):
            first = (self.tmp / "a" / csv_name).read_text(encoding="utf-8")
            self.assertEqual(first, (self.tmp / "b" / csv_name).read_text(encoding="utf-8"))

    def test_resume_matches_straight_run(self):
        cfg3 = self.cfg_nopf.with_updates(iterations=3)
        run_training(cfg3, self.frames, self.test_frames, self.tmp / "straight")
        run_training(self.cfg_nopf, self.frames, self.test_frames, self.tmp / "resumed")
        result = run_training(cfg3, self.frames, self.test_frames, self.tmp / "resumed", resume=True)
        self.assertEqual([r.iteration for r in result.reports], [1, 2, 3])
        straight = read_rows(self.tmp / "straight" / "metrics.csv")
        resumed = read_rows(self.tmp / "resumed" / "metrics.csv")
        self.assertEqual(len(straight), len(resumed))
        for a, b in zip(straight, resumed):
            self.assertEqual((a["iteration"], a["view"]), (b["iteration"], b["view"]))
            for key in ("ap_03", "ap_05", "precision_05", "recall_05"):
                self.assertAlmostEqual(float(a[key]), float(b[key]), places=6)

    def test_resume_of_finished_run_is_noop(self):
        run_dir = self.tmp / "run"
        run_training(self.cfg_nopf, self.frames, self.test_frames, run_dir)
        before = (run_dir / "metrics.csv").read_text(encoding="utf-8")
        result = run_training(self.cfg_nopf, self.frames, self.test_frames, run_dir, resume=True)
        self.assertEqual(len(result.reports), 2)
        self.assertEqual((run_dir / "metrics.csv").read_text(encoding="utf-8"), before)


class TestStudies(PipelineCase):
    """Comparative runs"""

    def test_ablation_rows(self):
        cfg = self.cfg.with_updates(iterations=1)
        report = run_ablation(cfg, frames=self.frames, test_frames=self.test_frames, run_dir=self.tmp)
        self.assertEqual(len(report.rows), 2 * len(ABLATION_SETS))
        self.assertEqual([r["setting"] for r in report.rows[::2]], list(ABLATION_SETS))
        self.assertEqual({r["view"] for r in report.rows}, {"multi_agent", "single_agent"})
        self.assertEqual(len(report.column("ap_05", view="single_agent")), len(ABLATION_SETS))
        self.assertTrue((self.tmp / "ablation.csv").exists())
        self.assertTrue((self.tmp / "PPF+PPS" / "metrics.csv").exists())


class TestCommandLine(unittest.TestCase):
    """Exit codes and scene files"""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_bad_override(self):
        code, _, err = run_cli(["run", "--set", "pps.eta=2.0"])
        self.assertEqual(code, 1)
        self.assertIn("error:", err)
        self.assertEqual(run_cli(["run", "--set", "novalue"])[0], 1)

    def test_eval_needs_run_dir(self):
        self.assertEqual(run_cli(["eval"] + SMALL_FLAGS)[0], 1)

    def test_resume_needs_run_dir(self):
        self.assertEqual(run_cli(["run", "--resume", "--output-dir", str(self.tmp)] + SMALL_FLAGS)[0], 1)

    def test_stage_failure_exit_code(self):
        argv = ["run", "--run-dir", str(self.tmp / "run"), "--set", "scene.num_agents=1"] + SMALL_FLAGS
        code, _, err = run_cli(argv)
        self.assertEqual(code, 2)
        self.assertIn("[initialize]", err)

    def test_gen_scenes(self):
        out = self.tmp / "scenes"
        code, stdout, _ = run_cli(["gen-scenes", "--out", str(out)] + SMALL_FLAGS)
        self.assertEqual(code, 0)
        self.assertIn("Saved 4 training frames", stdout)
        self.assertEqual(len(load_scene(out)), 4)
        self.assertEqual(len(load_scene(out / "test")), 2)


class TestHeldOutScene(PipelineCase):
    """Evaluation frames without the training scene"""

    def test_generates_only_held_out_frames(self):
        with mock.patch.object(pipeline, "generate_scene", wraps=generate_scene) as gen:
            frames = load_test_scene(self.cfg)
        gen.assert_called_once()
        self.assertEqual(gen.call_args.args[0], heldout_scene_config(self.cfg))
        self.assertEqual([f.frame_id for f in frames], [f.frame_id for f in self.test_frames])
        self.assertEqual(frames[0].gt_boxes, self.test_frames[0].gt_boxes)

    def test_loads_saved_held_out_frames(self):
        code, _, _ = run_cli(["gen-scenes", "--out", str(self.tmp / "scenes")] + SMALL_FLAGS)
        self.assertEqual(code, 0)
        cfg = self.cfg.with_updates(scene_source="load", scene_dir=str(self.tmp / "scenes"))
        with mock.patch.object(pipeline, "load_scene", wraps=load_scene) as load, \
                mock.patch.object(pipeline, "generate_scene") as gen:
            frames = load_test_scene(cfg)
        load.assert_called_once_with(self.tmp / "scenes" / "test")
        gen.assert_not_called()
        self.assertEqual(len(frames), 2)


class TestTrainingIsolation(unittest.TestCase):
    """Training packages never read ground truth"""

    def test_no_ground_truth_references(self):
        offenders = []
        for package in ("weakdet", "ppf", "pps", "ccl"):
            for path in (REPO / "packages" / package).glob("*.py"):
                text = path.read_text(encoding="utf-8")
                if "gt_boxes" in text or "ground_truth" in text or "evalmetrics" in text:
                    offenders.append(path.name)
        self.assertEqual(offenders, [])


if __name__ == "__main__":
    unittest.main()
