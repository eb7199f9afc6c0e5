"""
Unsupervised refinement of the multi-agent and single-agent detectors.

One iteration:

    propose      P_m = D_m(fused clouds), P_e = D_e(ego clouds)
    ppf          train the purifying classifier (first iteration), filter both views
    pps          prune by tau_t, fuse with the memory bank, NMS   -> pseudo labels of D_m
    ccl          unmatched-set consensus + NMS, BEV guidance      -> pseudo labels of D_e
    persist      pseudo labels written before any fit reads them
    fit_m, fit_e E epochs each

A disabled stage passes its input through (PPS and CCL still apply their
NMS). Ground truth is only read to score pseudo labels and detectors.
"""
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from packages.ccl.bev import GridSpec, bev_rasterize, build_guidance, save_grid
from packages.ccl.consensus import consensus_labels, unmatched_valid_set
from packages.config.settings import PipelineConfig, SceneConfig, checkpoint_iterations, dump_config
from packages.errors import InsufficientSupervisionError, PipelineStageError, UmsError
from packages.evalmetrics.report import EvalReport, csv_columns, evaluate_frames, report_row, write_csv
from packages.geometry.boxes import Box3D, PointCloud, ProposalSet, View
from packages.geometry.nms import nms
from packages.geometry.records import write_proposal_sets
from packages.observability import get_logger, get_metrics
from packages.ppf.classifier import (
    PpfClassifier,
    SelfSupSets,
    load_classifier,
    ppf_filter,
    save_classifier,
    select_training_sets,
    train_ppf,
)
from packages.pps.memory_bank import MemoryBank, load_bank, save_bank
from packages.pps.schedule import confidence_threshold, dynamic_lambda
from packages.pps.stabilize import stabilize_set
from packages.scenesim.scene import Frame, SensorFrame, fuse_to_ego, generate_scene, ground_truth_index, sensor_views
from packages.scenesim.storage import load_scene, load_scene_config
from packages.util.parallel import ordered_map
from packages.weakdet.checkpoint import load_detector, save_detector
from packages.weakdet.detector import Candidates, DetectorModel, extract_candidates, proposals_from_candidates
from packages.weakdet.training import fit_detector_traced, initialize_detector
from services.training.artifacts import RunArtifacts

GroundTruth = Mapping[int, Sequence[Box3D]]

DETECTOR_VIEWS = ("multi_agent", "single_agent")

DEVIATIONS = {
    "ppf_features": "purifying classifier scores hand-crafted box-local features instead of a learned point encoder",
    "bank_replacement": "the memory bank keeps one generation per frame; storing a frame replaces its entry",
    "init_negatives": "detector initialization draws negatives from clusters outside the communicated-agent size "
                      "envelope, falling back to every unmatched cluster when none is outside it",
    "ccl_surrogate": "BEV alignment reaches the ego detector as an auxiliary scorer input "
                     "(mu3-scaled masked footprint discrepancy), zero at inference",
}


@dataclass(frozen=True)
class SceneData:
    """Per-frame clouds and cached detector candidates; no ground truth"""
    frames: Tuple[SensorFrame, ...]
    fused: Dict[int, PointCloud]
    ego: Dict[int, PointCloud]
    cands_m: Dict[int, Candidates]
    cands_e: Dict[int, Candidates]

    @property
    def frame_ids(self) -> List[int]:
        return [f.frame_id for f in self.frames]


def prepare_scene_data(frames: Sequence[SensorFrame], model_m: DetectorModel, model_e: DetectorModel,
                       workers: int = 1) -> SceneData:
    views = tuple(sensor_views(frames))
    ids = [f.frame_id for f in views]
    fused = dict(zip(ids, ordered_map(fuse_to_ego, views, workers)))
    ego = {f.frame_id: f.ego_cloud for f in views}
    cands_m = dict(zip(ids, ordered_map(lambda f: extract_candidates(model_m, fused[f], f), ids, workers)))
    cands_e = dict(zip(ids, ordered_map(lambda f: extract_candidates(model_e, ego[f], f), ids, workers)))
    return SceneData(views, fused, ego, cands_m, cands_e)


@dataclass
class IterationReport:
    iteration: int
    tau: float
    lam: float
    multi: Optional[EvalReport]
    ego: Optional[EvalReport]
    losses: Dict[str, List[float]]
    timings_ms: Dict[str, float]
    counts: Dict[str, int]
    bev_loss: float = 0.0
    detectors: Dict[str, EvalReport] = field(default_factory=dict)

    def as_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "IterationReport":
        values = dict(data)
        for key in ("multi", "ego"):
            values[key] = EvalReport.from_dict(values[key]) if values.get(key) else None
        values["detectors"] = {k: EvalReport.from_dict(v) for k, v in values.get("detectors", {}).items()}
        return cls(**values)


@dataclass
class TrainingResult:
    detector_m: DetectorModel
    detector_e: DetectorModel
    initial_m: DetectorModel
    initial_e: DetectorModel
    classifier: Optional[PpfClassifier]
    bank: MemoryBank
    reports: List[IterationReport]
    run_dir: Optional[Path] = None

    @property
    def final_detector_reports(self) -> Dict[str, EvalReport]:
        for report in reversed(self.reports):
            if report.detectors:
                return report.detectors
        return {}


def build_detectors(cfg: PipelineConfig) -> Tuple[DetectorModel, DetectorModel]:
    settings = cfg.detector
    common = dict(
        min_cluster_points=settings.min_cluster_points,
        cluster_cell_size=settings.cluster_cell_size,
        ground_z=settings.ground_z,
        self_filter=(settings.self_filter_length, settings.self_filter_width),
        min_confidence=cfg.min_confidence,
    )
    return DetectorModel(name="multi", **common), DetectorModel(name="ego", **common)


def heldout_scene_config(cfg: PipelineConfig, scene: Optional[SceneConfig] = None) -> SceneConfig:
    base = scene or cfg.scene
    return base.model_copy(update={
        "rng_seed": base.rng_seed + cfg.eval.test_seed_offset,
        "num_frames": cfg.eval.test_num_frames,
    })


def load_test_scene(cfg: PipelineConfig) -> List[Frame]:
    """Held-out test frames, without touching the training scene"""
    if cfg.scene_source == "load":
        test_dir = Path(cfg.scene_dir) / "test"
        if test_dir.exists():
            return load_scene(test_dir)
        scene = load_scene_config(cfg.scene_dir) or cfg.scene
        return generate_scene(heldout_scene_config(cfg, scene), cfg.workers)
    return generate_scene(heldout_scene_config(cfg), cfg.workers)


def load_scenes(cfg: PipelineConfig) -> Tuple[List[Frame], List[Frame]]:
    """Training frames (generated or loaded) and held-out test frames"""
    logger = get_logger()
    if cfg.scene_source == "load":
        train = load_scene(cfg.scene_dir)
    else:
        train = generate_scene(cfg.scene, cfg.workers)
    test = load_test_scene(cfg)
    logger.log_structured("INFO", "scenes_ready", source=cfg.scene_source,
                          train_frames=len(train), test_frames=len(test))
    return train, test


def detector_predictions(model: DetectorModel, cands: Mapping[int, Candidates], view: View,
                         eta: float, workers: int = 1) -> Dict[int, ProposalSet]:
    ids = sorted(cands)
    sets = ordered_map(lambda f: nms(proposals_from_candidates(model, cands[f], view), eta), ids, workers)
    return dict(zip(ids, sets))


def evaluate_detectors(model_m: DetectorModel, model_e: DetectorModel, data: SceneData,
                       ground_truth: GroundTruth, cfg: PipelineConfig) -> Dict[str, EvalReport]:
    """Multi-agent (fused input to D_m) and single-agent (ego input to D_e) detection quality"""
    eta = cfg.eval.detector_nms_eta
    preds_m = detector_predictions(model_m, data.cands_m, View.MULTI, eta, cfg.workers)
    preds_e = detector_predictions(model_e, data.cands_e, View.EGO, eta, cfg.workers)
    return {
        "multi_agent": evaluate_frames(preds_m, ground_truth, cfg.eval),
        "single_agent": evaluate_frames(preds_e, ground_truth, cfg.eval),
    }


def _count(sets: Mapping[int, ProposalSet]) -> int:
    return sum(len(s) for s in sets.values())


class UmsTrainer:
    """State of one training run: detectors, classifier, memory bank and run artifacts."""

    def __init__(self, cfg: PipelineConfig, frames: Sequence[SensorFrame],
                 ground_truth: Optional[GroundTruth] = None,
                 test_frames: Optional[Sequence[Frame]] = None,
                 run_dir: Optional[Path] = None):
        self.cfg = cfg
        self.logger = get_logger()
        self.model_m, self.model_e = build_detectors(cfg)
        self.initial_m, self.initial_e = self.model_m, self.model_e
        self.classifier: Optional[PpfClassifier] = None
        self.bank = MemoryBank()
        self.reports: List[IterationReport] = []
        self.ground_truth = dict(ground_truth) if ground_truth is not None else None
        self.artifacts = RunArtifacts(run_dir) if run_dir is not None else None
        self.grid = GridSpec.from_settings(cfg.ccl.grid)

        self.data = prepare_scene_data(frames, self.model_m, self.model_e, cfg.workers)
        self.test_data: Optional[SceneData] = None
        self.test_truth: Optional[Dict[int, Tuple[Box3D, ...]]] = None
        if test_frames:
            self.test_truth = ground_truth_index(test_frames)
            self.test_data = prepare_scene_data(test_frames, self.model_m, self.model_e, cfg.workers)

    def _map(self, fn: Callable[[int], object], ids: Sequence[int]) -> List:
        return ordered_map(fn, ids, self.cfg.workers)

    # initialization and resume

    def initialize(self):
        """Pretrain both detectors from the communicated agents' self boxes."""
        cfg = self.cfg
        priors = {f.frame_id: f.prior_boxes() for f in self.data.frames}
        with self.logger.stage_timer("initialize"):
            try:
                self.model_m, _ = initialize_detector(self.model_m, self.data.cands_m, priors,
                                                      cfg.loss, cfg.detector, cfg.seed)
                self.model_e, _ = initialize_detector(self.model_e, self.data.cands_e, priors,
                                                      cfg.loss, cfg.detector, cfg.seed)
            except InsufficientSupervisionError as e:
                raise PipelineStageError(
                    "initialize",
                    f"{e}; the scene needs communicated agents (scene.num_agents >= 2) "
                    f"that the detectors' clustering can pick up",
                ) from e
        self.initial_m, self.initial_e = self.model_m, self.model_e
        if self.artifacts is not None:
            save_detector(self.initial_m, self.artifacts.checkpoint_path("detector_multi_init"))
            save_detector(self.initial_e, self.artifacts.checkpoint_path("detector_ego_init"))

    def resume(self) -> int:
        """Restore state after the last completed iteration; returns that iteration (0 if none)."""
        if self.artifacts is None:
            return 0
        done = min(self.artifacts.completed_iteration(), self.cfg.iterations)
        if done == 0:
            return 0
        art = self.artifacts
        self.initial_m = load_detector(art.checkpoint_path("detector_multi_init"))
        self.initial_e = load_detector(art.checkpoint_path("detector_ego_init"))
        self.model_m = load_detector(art.checkpoint_path("detector_multi"))
        self.model_e = load_detector(art.checkpoint_path("detector_ego"))
        if art.checkpoint_path("ppf").exists():
            self.classifier = load_classifier(art.checkpoint_path("ppf"))
        if art.checkpoint_path("bank").exists():
            self.bank = load_bank(art.checkpoint_path("bank"))
        self.reports = [IterationReport.from_dict(art.read_json(art.report_path(t))) for t in range(1, done + 1)]
        self.logger.log_structured("INFO", "run_resumed", completed_iteration=done, run_dir=str(art.root))
        return done

    # stages

    def _ppf_due(self, t: int) -> bool:
        every = self.cfg.ppf.retrain_every
        return self.classifier is None or (every > 0 and t > 1 and (t - 1) % every == 0)

    def _train_ppf(self, t: int, raw_m: Mapping[int, ProposalSet]):
        ppf = self.cfg.ppf
        ids = self.data.frame_ids
        parts = self._map(
            lambda f: select_training_sets(raw_m[f], self.data.fused[f], ppf.c_low, ppf.c_high, strict=False), ids)
        sets = SelfSupSets.combine(parts)
        try:
            self.classifier = train_ppf(sets, ppf.epochs, ppf.learning_rate, ppf.keep_threshold)
        except InsufficientSupervisionError as e:
            if self.classifier is not None:
                self.logger.log_warning("ppf_retrain_skipped", iteration=t, reason=str(e))
                return
            raise PipelineStageError(
                "ppf",
                f"{e}; widen the self-supervision cutoffs (ppf.c_low / ppf.c_high) "
                f"or pretrain longer (detector.init_epochs)",
            ) from e

    def _purify(self, t: int, raw_m, raw_e):
        if not self.cfg.toggles.ppf:
            return raw_m, raw_e
        if self._ppf_due(t):
            self._train_ppf(t, raw_m)
        ids = self.data.frame_ids
        clf = self.classifier
        filt_m = dict(zip(ids, self._map(lambda f: ppf_filter(clf, raw_m[f], self.data.fused[f]), ids)))
        filt_e = dict(zip(ids, self._map(lambda f: ppf_filter(clf, raw_e[f], self.data.ego[f]), ids)))
        return filt_m, filt_e

    def _stabilize(self, t: int, filt_m) -> Dict[int, ProposalSet]:
        cfg = self.cfg
        ids = self.data.frame_ids
        if not cfg.toggles.pps:
            return dict(zip(ids, self._map(lambda f: nms(filt_m[f], cfg.pps.eta), ids)))
        params = cfg.schedule_params
        bank = self.bank
        results = self._map(lambda f: stabilize_set(filt_m[f], bank, t, params, cfg.pps.eta, cfg.pps.fixed_tau), ids)
        self.bank = bank.store_all(stored for _, stored in results)
        return {f: stabilized for f, (stabilized, _) in zip(ids, results)}

    def _consensus(self, t: int, filt_m, filt_e) -> Tuple[Dict[int, ProposalSet], Optional[Dict[int, np.ndarray]], float]:
        cfg = self.cfg
        ccl = cfg.ccl
        ids = self.data.frame_ids
        if not cfg.toggles.ccl:
            return dict(zip(ids, self._map(lambda f: nms(filt_e[f], ccl.eta_ccl), ids))), None, 0.0

        def per_frame(f: int):
            ego_cloud = self.data.ego[f]
            unmatched = unmatched_valid_set(filt_e[f], filt_m[f], ego_cloud, ccl.eta_ccl, ccl.rho)
            labels = consensus_labels(filt_e[f], unmatched, ccl.eta_ccl)
            guidance = build_guidance(ego_cloud, self.data.fused[f], self.grid, ccl.gamma, cfg.loss.mu3)
            aux = guidance.footprint_discrepancies(self.data.cands_e[f].crop_boxes)
            return labels, aux, guidance.loss

        results = self._map(per_frame, ids)
        if ccl.export_grids and self.artifacts is not None:
            for f in ids:
                save_grid(bev_rasterize(self.data.ego[f], self.grid), self.artifacts.grid_path(t, f, "ego"))
                save_grid(bev_rasterize(self.data.fused[f], self.grid), self.artifacts.grid_path(t, f, "multi"))
        hat_e = {f: r[0] for f, r in zip(ids, results)}
        aux = {f: r[1] for f, r in zip(ids, results)}
        bev_loss = float(np.mean([r[2] for r in results])) if results else 0.0
        return hat_e, aux, bev_loss

    # iteration

    def run_iteration(self, t: int) -> IterationReport:
        cfg = self.cfg
        log = self.logger
        ids = self.data.frame_ids

        with log.stage_timer("propose"):
            raw_m = dict(zip(ids, self._map(
                lambda f: proposals_from_candidates(self.model_m, self.data.cands_m[f], View.MULTI), ids)))
            raw_e = dict(zip(ids, self._map(
                lambda f: proposals_from_candidates(self.model_e, self.data.cands_e[f], View.EGO), ids)))
        n_cands = sum(len(c) for c in self.data.cands_m.values()) + sum(len(c) for c in self.data.cands_e.values())
        log.log_stage_result("propose", n_cands, _count(raw_m) + _count(raw_e), iteration=t)

        with log.stage_timer("ppf"):
            filt_m, filt_e = self._purify(t, raw_m, raw_e)
        log.log_stage_result("ppf", _count(raw_m) + _count(raw_e), _count(filt_m) + _count(filt_e),
                             iteration=t, enabled=cfg.toggles.ppf)

        tau = confidence_threshold(t, cfg.schedule_params, cfg.pps.fixed_tau)
        lam = dynamic_lambda(t, cfg.schedule_params)
        with log.stage_timer("pps"):
            hat_m = self._stabilize(t, filt_m)
        log.log_stage_result("pps", _count(filt_m), _count(hat_m), iteration=t,
                             enabled=cfg.toggles.pps, tau=tau, lam=lam, bank_frames=len(self.bank))

        with log.stage_timer("ccl"):
            hat_e, aux, bev_loss = self._consensus(t, filt_m, filt_e)
        log.log_stage_result("ccl", _count(filt_e), _count(hat_e), iteration=t,
                             enabled=cfg.toggles.ccl, bev_loss=bev_loss)

        if self.artifacts is not None:
            with log.stage_timer("persist"):
                write_proposal_sets(self.artifacts.pseudo_path(t, "multi"), (hat_m[f] for f in ids))
                write_proposal_sets(self.artifacts.pseudo_path(t, "ego"), (hat_e[f] for f in ids))

        multi_report = ego_report = None
        if self.ground_truth is not None:
            with log.stage_timer("evaluate"):
                multi_report = evaluate_frames(hat_m, self.ground_truth, cfg.eval)
                ego_report = evaluate_frames(hat_e, self.ground_truth, cfg.eval)

        with log.stage_timer("fit_m"):
            self.model_m, trace_m = fit_detector_traced(self.model_m, hat_m, weights=cfg.loss, epochs=cfg.epochs,
                                                        settings=cfg.detector, candidates=self.data.cands_m)
        with log.stage_timer("fit_e"):
            self.model_e, trace_e = fit_detector_traced(self.model_e, hat_e, weights=cfg.loss, epochs=cfg.epochs,
                                                        settings=cfg.detector, candidates=self.data.cands_e,
                                                        aux=aux)

        detectors: Dict[str, EvalReport] = {}
        if self.test_data is not None and t in checkpoint_iterations(cfg):
            with log.stage_timer("evaluate_detectors"):
                detectors = evaluate_detectors(self.model_m, self.model_e, self.test_data, self.test_truth, cfg)

        report = IterationReport(
            iteration=t,
            tau=tau,
            lam=lam,
            multi=multi_report,
            ego=ego_report,
            losses={"multi": list(trace_m.losses), "ego": list(trace_e.losses)},
            timings_ms=log.pop_stage_timings(),
            counts={
                "raw_multi": _count(raw_m), "raw_ego": _count(raw_e),
                "filtered_multi": _count(filt_m), "filtered_ego": _count(filt_e),
                "pseudo_multi": _count(hat_m), "pseudo_ego": _count(hat_e),
            },
            bev_loss=bev_loss,
            detectors=detectors,
        )
        log.log_iteration(t, {
            "pseudo_multi_ap_05": multi_report.ap_05 if multi_report else None,
            "pseudo_ego_ap_05": ego_report.ap_05 if ego_report else None,
            "loss_multi": trace_m.final_loss,
            "loss_ego": trace_e.final_loss,
        })
        return report

    # persistence

    def metric_rows(self) -> List[Dict[str, str]]:
        bands = self.cfg.eval.bands
        rows = []
        for r in self.reports:
            if r.multi is not None:
                rows.append(report_row(r.iteration, "multi", r.multi, bands))
            if r.ego is not None:
                rows.append(report_row(r.iteration, "ego", r.ego, bands))
        return rows

    def detector_rows(self) -> List[Dict[str, str]]:
        bands = self.cfg.eval.bands
        return [
            report_row(r.iteration, view, r.detectors[view], bands)
            for r in self.reports for view in DETECTOR_VIEWS if view in r.detectors
        ]

    def persist_iteration(self, report: IterationReport):
        art = self.artifacts
        if art is None:
            return
        art.write_json(art.report_path(report.iteration), report.as_dict())
        columns = csv_columns(self.cfg.eval.bands)
        write_csv(art.metrics_csv, self.metric_rows(), columns)
        write_csv(art.detector_csv, self.detector_rows(), columns)
        save_detector(self.model_m, art.checkpoint_path("detector_multi"))
        save_detector(self.model_e, art.checkpoint_path("detector_ego"))
        if self.classifier is not None:
            save_classifier(self.classifier, art.checkpoint_path("ppf"))
        save_bank(self.bank, art.checkpoint_path("bank"))
        art.save_progress(report.iteration, self.logger.run_id)

    def write_manifest(self):
        if self.artifacts is None:
            return
        final = self.reports[-1] if self.reports else None
        self.artifacts.write_json(self.artifacts.manifest_path, {
            "run_id": self.logger.run_id,
            "toggles": self.cfg.toggles.label(),
            "iterations": len(self.reports),
            "frames": len(self.data.frames),
            "final_pseudo_labels": {
                "multi": final.multi.as_dict() if final and final.multi else None,
                "ego": final.ego.as_dict() if final and final.ego else None,
            },
            "final_detectors": {k: v.as_dict() for k, v in self.result().final_detector_reports.items()},
            "deviations": DEVIATIONS,
            "metrics": get_metrics().snapshot(),
        })

    def result(self) -> TrainingResult:
        return TrainingResult(
            detector_m=self.model_m,
            detector_e=self.model_e,
            initial_m=self.initial_m,
            initial_e=self.initial_e,
            classifier=self.classifier,
            bank=self.bank,
            reports=list(self.reports),
            run_dir=self.artifacts.root if self.artifacts is not None else None,
        )

    def run(self, resume: bool = False) -> TrainingResult:
        for key, description in DEVIATIONS.items():
            self.logger.log_deviation(key, description)
        if self.artifacts is not None:
            dump_config(self.cfg, self.artifacts.config_path)
        start = self.resume() if resume else 0
        if start == 0:
            self.initialize()
        for t in range(start + 1, self.cfg.iterations + 1):
            try:
                report = self.run_iteration(t)
            except PipelineStageError:
                raise
            except UmsError as e:
                raise PipelineStageError(f"iteration {t}", str(e)) from e
            self.reports.append(report)
            self.persist_iteration(report)
        self.write_manifest()
        return self.result()


def run_training(cfg: PipelineConfig, frames: Optional[Sequence[Frame]] = None,
                 test_frames: Optional[Sequence[Frame]] = None,
                 run_dir: Optional[Path] = None, resume: bool = False) -> TrainingResult:
    """
    Train both detectors on the configured scene.

    Frames are generated (or loaded) from the configuration unless given.
    Ground truth is split off the frames here and only used for evaluation.
    """
    if frames is None:
        frames, generated_test = load_scenes(cfg)
        test_frames = generated_test if test_frames is None else test_frames
    ground_truth = ground_truth_index(frames) if frames and isinstance(frames[0], Frame) else None
    trainer = UmsTrainer(cfg, frames, ground_truth, test_frames, run_dir)
    return trainer.run(resume=resume)
