"""
Pipeline Configuration Module

Single source of truth for every tunable of the UMS pipeline. Values come from
a nested YAML file (data/default_config.yaml by default), then dotted-key
overrides from the command line, then the environment.
"""
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from packages.errors import ArtifactIOError, InvalidInputError

DEFAULT_CONFIG_PATH = Path(__file__).parent.parent.parent / "data" / "default_config.yaml"

# Environment variables that override file values
ENV_OUTPUT_DIR = "UMS_OUTPUT_DIR"
ENV_WORKERS = "UMS_WORKERS"


class _Settings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _ordered_range(value: Tuple[float, float], name: str) -> Tuple[float, float]:
    lo, hi = value
    if lo > hi:
        raise ValueError(f"{name} range is inverted: {value}")
    return value


class SceneConfig(_Settings):
    num_frames: int = Field(200, ge=1)
    num_agents: int = Field(2, ge=1)
    vehicles_per_frame: Tuple[int, int] = (6, 12)
    map_extent: float = Field(70.0, gt=0)
    points_per_m2_at_10m: float = Field(40.0, gt=0)
    density_falloff_exponent: float = Field(2.0, ge=0)
    occlusion_enabled: bool = True
    clutter_clusters_per_frame: Tuple[int, int] = (2, 5)
    clutter_cluster_size: Tuple[int, int] = (30, 150)
    rng_seed: int = Field(0, ge=0)

    # layout and sensor model
    frames_per_segment: int = Field(10, ge=1)
    frame_rate_hz: float = Field(10.0, gt=0)
    agent_speed_mps: float = Field(8.0, ge=0)
    agent_spacing: Tuple[float, float] = (12.0, 35.0)
    road_half_width: float = Field(4.5, gt=0)
    ground_points_per_agent: int = Field(1500, ge=0)
    ground_range: float = Field(60.0, gt=0)
    ground_jitter: float = Field(0.02, ge=0)
    sensor_height: float = Field(2.0, gt=0)
    max_range: float = Field(100.0, gt=0)
    placement_attempts: int = Field(200, ge=1)

    @field_validator("vehicles_per_frame", "clutter_clusters_per_frame", "clutter_cluster_size")
    @classmethod
    def _count_range(cls, v, info):
        if v[0] < 0:
            raise ValueError(f"{info.field_name} must be non-negative: {v}")
        return _ordered_range(v, info.field_name)

    @field_validator("agent_spacing")
    @classmethod
    def _spacing_range(cls, v, info):
        if v[0] <= 0:
            raise ValueError(f"agent_spacing must be positive: {v}")
        return _ordered_range(v, info.field_name)

    @property
    def frame_interval_s(self) -> float:
        return 1.0 / self.frame_rate_hz


class ScheduleParams(_Settings):
    tau_min: float = Field(0.01, ge=0, le=1)
    tau_max: float = Field(0.20, ge=0, le=1)
    k_tau: float = Field(0.5, gt=0)
    k_lambda: float = Field(0.5, gt=0)
    # transition centers; None resolves to T/2 inside PipelineConfig
    beta_tau: Optional[float] = None
    beta_lambda: Optional[float] = None

    @model_validator(mode="after")
    def _ordered_bounds(self):
        if not self.tau_min < self.tau_max:
            raise ValueError(f"tau_min ({self.tau_min}) must be below tau_max ({self.tau_max})")
        return self


class LossWeights(_Settings):
    mu1: float = Field(1.0, ge=0)
    mu2: float = Field(1.0, ge=0)
    mu3: float = Field(1.5, ge=0)
    focal_alpha: float = Field(0.25, gt=0, lt=1)
    focal_gamma: float = Field(2.0, ge=0)
    smooth_l1_beta: float = Field(1.0, gt=0)


class DetectorSettings(_Settings):
    min_cluster_points: int = Field(8, ge=1)
    cluster_cell_size: float = Field(0.5, gt=0)
    ground_z: float = 0.3
    # own-vehicle returns around the sensor origin are discarded before clustering
    self_filter_length: float = Field(6.0, ge=0)
    self_filter_width: float = Field(2.6, ge=0)
    match_iou: float = Field(0.3, gt=0, lt=1)
    learning_rate: float = Field(0.5, gt=0)
    steps_per_epoch: int = Field(5, ge=1)
    init_epochs: int = Field(30, ge=1)
    negative_ratio: float = Field(3.0, gt=0)
    # initialization negatives are clusters whose raw footprint leaves the prior size envelope by this factor
    prior_shape_tolerance: float = Field(0.35, gt=0, lt=1)


class PpfSettings(_Settings):
    c_low: float = Field(0.1, ge=0, le=1)
    c_high: float = Field(0.7, ge=0, le=1)
    keep_threshold: float = Field(0.5, gt=0, lt=1)
    epochs: int = Field(200, ge=1)
    learning_rate: float = Field(1.0, gt=0)
    retrain_every: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _ordered_cutoffs(self):
        if not self.c_low < self.c_high:
            raise ValueError(f"c_low ({self.c_low}) must be below c_high ({self.c_high})")
        return self


class PpsSettings(_Settings):
    eta: float = Field(0.3, gt=0, lt=1)
    fixed_tau: Optional[float] = Field(None, ge=0, le=1)


class GridSettings(_Settings):
    cell_size: float = Field(0.5, gt=0)
    half_extent: float = Field(70.0, gt=0)


class CclSettings(_Settings):
    eta_ccl: float = Field(0.3, gt=0, lt=1)
    rho: int = Field(5, ge=0)
    gamma: float = Field(1e-3, ge=0)
    grid: GridSettings = GridSettings()
    export_grids: bool = False


class StageToggles(_Settings):
    ppf: bool = True
    pps: bool = True
    ccl: bool = True

    def label(self) -> str:
        enabled = [name.upper() for name in ("ppf", "pps", "ccl") if getattr(self, name)]
        return "+".join(enabled) if enabled else "none"


class EvalSettings(_Settings):
    iou_thresholds: Tuple[float, float] = (0.3, 0.5)
    bands: Tuple[Tuple[float, float], ...] = ((0.0, 30.0), (30.0, 50.0), (50.0, 100.0))
    ap_method: Literal["all_point", "11_point", "40_point"] = "all_point"
    max_range: float = Field(100.0, gt=0)
    detector_nms_eta: float = Field(0.3, gt=0, lt=1)
    checkpoints: Tuple[int, ...] = (1, 5, 10, 20)
    test_num_frames: int = Field(60, ge=1)
    test_seed_offset: int = 1000

    @field_validator("bands")
    @classmethod
    def _disjoint_bands(cls, v):
        previous_hi = None
        for lo, hi in v:
            if lo >= hi:
                raise ValueError(f"empty range band [{lo}, {hi})")
            if previous_hi is not None and lo < previous_hi:
                raise ValueError(f"range bands overlap at {lo}")
            previous_hi = hi
        return v


class RobustnessSettings(_Settings):
    sigma_m: float = Field(0.2, ge=0)
    delay_frames: int = Field(1, ge=0)
    yaw_noise_deg: float = Field(0.2, ge=0)
    yaw_noise_enabled: bool = True
    noise_seed: int = 7


class PipelineConfig(_Settings):
    iterations: int = Field(20, ge=1)
    epochs: int = Field(10, ge=1)
    min_confidence: float = Field(0.01, ge=0, lt=1)
    seed: int = 0
    workers: int = Field(1, ge=1)
    output_dir: str = "runs"
    scene_source: Literal["generate", "load"] = "generate"
    scene_dir: Optional[str] = None

    scene: SceneConfig = SceneConfig()
    schedule: ScheduleParams = ScheduleParams()
    loss: LossWeights = LossWeights()
    detector: DetectorSettings = DetectorSettings()
    ppf: PpfSettings = PpfSettings()
    pps: PpsSettings = PpsSettings()
    ccl: CclSettings = CclSettings()
    toggles: StageToggles = StageToggles()
    eval: EvalSettings = EvalSettings()
    robustness: RobustnessSettings = RobustnessSettings()

    @model_validator(mode="after")
    def _scene_source_complete(self):
        if self.scene_source == "load" and not self.scene_dir:
            raise ValueError("scene_source 'load' requires scene_dir")
        return self

    @property
    def schedule_params(self) -> ScheduleParams:
        """Schedule with unset transition centers resolved to T/2"""
        center = self.iterations / 2.0
        updates = {}
        if self.schedule.beta_tau is None:
            updates["beta_tau"] = center
        if self.schedule.beta_lambda is None:
            updates["beta_lambda"] = center
        return self.schedule.model_copy(update=updates) if updates else self.schedule

    def with_updates(self, **overrides: Any) -> "PipelineConfig":
        """Validated copy with dotted-key overrides, e.g. with_updates(**{"pps.eta": 0.4})"""
        data = self.model_dump(mode="json")
        apply_overrides(data, overrides)
        return build_config(data)


def apply_overrides(data: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Set dotted keys ("ccl.grid.cell_size") inside a nested dict in place."""
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            elif not isinstance(child, dict):
                raise InvalidInputError(f"override {dotted!r}: {part!r} is not a section")
            node = child
        node[parts[-1]] = value
    return data


def build_config(data: Mapping[str, Any]) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(dict(data))
    except ValidationError as e:
        raise InvalidInputError(f"invalid pipeline configuration: {e}") from e


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> PipelineConfig:
    """
    Load the pipeline configuration.

    Precedence (lowest to highest): built-in defaults, YAML file, dotted-key
    overrides, environment (UMS_OUTPUT_DIR, UMS_WORKERS; .env is honored).
    """
    load_dotenv()
    config_path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    data: Dict[str, Any] = {}
    if path is not None or config_path.exists():
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
        except FileNotFoundError as e:
            raise ArtifactIOError(config_path, "config file not found") from e
        except (yaml.YAMLError, OSError) as e:
            raise ArtifactIOError(config_path, f"cannot parse config: {e}") from e
        if not isinstance(data, dict):
            raise InvalidInputError(f"{config_path}: top level must be a mapping")

    apply_overrides(data, overrides or {})

    env_output = os.getenv(ENV_OUTPUT_DIR)
    if env_output:
        data["output_dir"] = env_output
    env_workers = os.getenv(ENV_WORKERS)
    if env_workers:
        try:
            data["workers"] = int(env_workers)
        except ValueError as e:
            raise InvalidInputError(f"{ENV_WORKERS} must be an integer, got {env_workers!r}") from e

    return build_config(data)


def dump_config(cfg: PipelineConfig, path: Union[str, Path]) -> Path:
    """Write the configuration as YAML; floats keep full precision."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(cfg.model_dump(mode="json"), f, sort_keys=False)
    except OSError as e:
        raise ArtifactIOError(path, f"cannot write config: {e}") from e
    return path


def checkpoint_iterations(cfg: PipelineConfig) -> List[int]:
    """Iterations at which detectors are evaluated; the final iteration is always included."""
    points = sorted({t for t in cfg.eval.checkpoints if 1 <= t <= cfg.iterations} | {cfg.iterations})
    return points
