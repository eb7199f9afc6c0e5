"""
Comparative experiments over run_training.

Every variant of a study trains on the same scene and is scored on the same
held-out frames, so rows differ only by the setting under study.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from packages.config.settings import PipelineConfig, checkpoint_iterations
from packages.evalmetrics.report import metric_columns, metric_fields, render_csv, write_csv
from packages.observability import get_logger
from packages.scenesim.perturb import apply_latency, perturb_poses
from packages.scenesim.scene import Frame, generate_scene, ground_truth_index
from services.training.pipeline import (
    DETECTOR_VIEWS,
    TrainingResult,
    evaluate_detectors,
    heldout_scene_config,
    load_scenes,
    prepare_scene_data,
    run_training,
)

Overrides = Dict[str, object]

ABLATION_SETS: Dict[str, Overrides] = {
    "none": {"toggles.ppf": False, "toggles.pps": False, "toggles.ccl": False},
    "PPF": {"toggles.ppf": True, "toggles.pps": False, "toggles.ccl": False},
    "PPF+PPS": {"toggles.ppf": True, "toggles.pps": True, "toggles.ccl": False},
    "PPF+PPS+CCL": {"toggles.ppf": True, "toggles.pps": True, "toggles.ccl": True},
}

MU3_VALUES = (0.5, 1.0, 1.5, 2.0)


@dataclass
class StudyReport:
    name: str
    columns: List[str]
    rows: List[Dict[str, str]] = field(default_factory=list)
    results: Dict[str, TrainingResult] = field(default_factory=dict)

    def to_csv(self) -> str:
        return render_csv(self.rows, self.columns)

    def write(self, path) -> Path:
        return write_csv(path, self.rows, self.columns)

    def column(self, name: str, **match: str) -> List[float]:
        """Values of one column over the rows whose key columns equal `match`"""
        return [float(r[name]) for r in self.rows if all(r.get(k) == v for k, v in match.items())]


def _scenes(cfg: PipelineConfig, frames: Optional[Sequence[Frame]],
            test_frames: Optional[Sequence[Frame]]) -> Tuple[Sequence[Frame], Sequence[Frame]]:
    if frames is None:
        return load_scenes(cfg)
    if test_frames is None:
        test_frames = generate_scene(heldout_scene_config(cfg), cfg.workers)
    return frames, test_frames


def _subdir(run_dir: Optional[Path], name: str) -> Optional[Path]:
    return Path(run_dir) / name if run_dir is not None else None


def run_variants(name: str, key: str, cfg: PipelineConfig, variants: Mapping[str, Overrides],
                 frames: Optional[Sequence[Frame]] = None, test_frames: Optional[Sequence[Frame]] = None,
                 run_dir: Optional[Path] = None) -> StudyReport:
    """Train once per variant and tabulate the final detector evaluation per view."""
    frames, test_frames = _scenes(cfg, frames, test_frames)
    bands = cfg.eval.bands
    report = StudyReport(name, [key, "view"] + metric_columns(bands))
    for label, overrides in variants.items():
        variant = cfg.with_updates(**overrides)
        get_logger().log_structured("INFO", "study_variant_start", study=name, variant=label)
        result = run_training(variant, frames, test_frames, _subdir(run_dir, label))
        report.results[label] = result
        final = result.final_detector_reports
        for view in DETECTOR_VIEWS:
            if view in final:
                report.rows.append({key: label, "view": view, **metric_fields(final[view], bands)})
    if run_dir is not None:
        report.write(Path(run_dir) / f"{name}.csv")
    return report


def run_ablation(cfg: PipelineConfig, toggle_sets: Mapping[str, Overrides] = ABLATION_SETS,
                 frames=None, test_frames=None, run_dir: Optional[Path] = None) -> StudyReport:
    return run_variants("ablation", "setting", cfg, toggle_sets, frames, test_frames, run_dir)


def run_tau_study(cfg: PipelineConfig, frames=None, test_frames=None,
                  run_dir: Optional[Path] = None) -> StudyReport:
    """Fixed low tau, fixed high tau and the dynamic schedule"""
    variants = {
        "low_tau": {"pps.fixed_tau": cfg.schedule.tau_min},
        "high_tau": {"pps.fixed_tau": cfg.schedule.tau_max},
        "dynamic": {},
    }
    # overrides ignore None, so fixed_tau is cleared on the base config
    if cfg.pps.fixed_tau is not None:
        cfg = cfg.model_copy(update={"pps": cfg.pps.model_copy(update={"fixed_tau": None})})
    return run_variants("tau", "setting", cfg, variants, frames, test_frames, run_dir)


def run_mu3_study(cfg: PipelineConfig, values: Sequence[float] = MU3_VALUES, frames=None,
                  test_frames=None, run_dir: Optional[Path] = None) -> StudyReport:
    variants = {f"mu3={v:g}": {"loss.mu3": float(v)} for v in values}
    return run_variants("mu3", "setting", cfg, variants, frames, test_frames, run_dir)


def run_iteration_study(cfg: PipelineConfig, frames=None, test_frames=None,
                        run_dir: Optional[Path] = None) -> StudyReport:
    """One run; detectors and pseudo labels tabulated at every checkpoint iteration"""
    frames, test_frames = _scenes(cfg, frames, test_frames)
    bands = cfg.eval.bands
    result = run_training(cfg, frames, test_frames, _subdir(run_dir, "run"))
    report = StudyReport("iterations", ["iteration", "source", "view"] + metric_columns(bands),
                         results={"run": result})
    checkpoints = set(checkpoint_iterations(cfg))
    for r in result.reports:
        if r.iteration not in checkpoints:
            continue
        for view in DETECTOR_VIEWS:
            if view in r.detectors:
                report.rows.append({"iteration": str(r.iteration), "source": "detector", "view": view,
                                    **metric_fields(r.detectors[view], bands)})
        for view, pseudo in (("multi", r.multi), ("ego", r.ego)):
            if pseudo is not None:
                report.rows.append({"iteration": str(r.iteration), "source": "pseudo", "view": view,
                                    **metric_fields(pseudo, bands)})
    if run_dir is not None:
        report.write(Path(run_dir) / "iterations.csv")
    return report


def run_robustness(cfg: PipelineConfig, sigma_m: Optional[float] = None, delay_frames: Optional[int] = None,
                   frames=None, test_frames=None, run_dir: Optional[Path] = None,
                   result: Optional[TrainingResult] = None) -> StudyReport:
    """
    Score refined and unrefined detectors on clean, pose-noise and latency
    variants of the held-out frames. AP deltas are relative to clean.
    """
    rob = cfg.robustness
    sigma_m = rob.sigma_m if sigma_m is None else sigma_m
    delay_frames = rob.delay_frames if delay_frames is None else delay_frames
    frames, test_frames = _scenes(cfg, frames, test_frames)
    if result is None:
        result = run_training(cfg, frames, test_frames, _subdir(run_dir, "train"))

    truth = ground_truth_index(test_frames)
    scenarios = {
        "clean": list(test_frames),
        "pose_noise": perturb_poses(test_frames, sigma_m, rob.noise_seed, rob.yaw_noise_deg,
                                    rob.yaw_noise_enabled and sigma_m > 0),
        "latency": apply_latency(test_frames, delay_frames),
    }
    models = {
        "refined": (result.detector_m, result.detector_e),
        "baseline": (result.initial_m, result.initial_e),
    }
    bands = cfg.eval.bands
    report = StudyReport("robustness",
                         ["model", "scenario", "view"] + metric_columns(bands) + ["delta_ap_05"],
                         results={"train": result})
    data = {name: prepare_scene_data(fs, result.detector_m, result.detector_e, cfg.workers)
            for name, fs in scenarios.items()}
    for model_name, (model_m, model_e) in models.items():
        clean = None
        for scenario in scenarios:
            reports = evaluate_detectors(model_m, model_e, data[scenario], truth, cfg)
            clean = clean or reports
            for view in DETECTOR_VIEWS:
                report.rows.append({
                    "model": model_name, "scenario": scenario, "view": view,
                    **metric_fields(reports[view], bands),
                    "delta_ap_05": repr(reports[view].ap_05 - clean[view].ap_05),
                })
    get_logger().log_structured("INFO", "robustness_evaluated", sigma_m=sigma_m, delay_frames=delay_frames,
                                rows=len(report.rows))
    if run_dir is not None:
        report.write(Path(run_dir) / "robustness.csv")
    return report
