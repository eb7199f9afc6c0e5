# Config package
from .settings import (
    CclSettings,
    DetectorSettings,
    EvalSettings,
    GridSettings,
    LossWeights,
    PipelineConfig,
    PpfSettings,
    PpsSettings,
    RobustnessSettings,
    SceneConfig,
    ScheduleParams,
    StageToggles,
    checkpoint_iterations,
    dump_config,
    load_config,
)

__all__ = [
    'CclSettings',
    'DetectorSettings',
    'EvalSettings',
    'GridSettings',
    'LossWeights',
    'PipelineConfig',
    'PpfSettings',
    'PpsSettings',
    'RobustnessSettings',
    'SceneConfig',
    'ScheduleParams',
    'StageToggles',
    'checkpoint_iterations',
    'dump_config',
    'load_config',
]
