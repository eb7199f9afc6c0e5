"""
Training service: the refinement loop, comparative studies and run artifacts.
"""

from .artifacts import RunArtifacts
from .pipeline import (
    IterationReport,
    TrainingResult,
    UmsTrainer,
    evaluate_detectors,
    load_scenes,
    load_test_scene,
    run_training,
)
from .studies import (
    StudyReport,
    run_ablation,
    run_iteration_study,
    run_mu3_study,
    run_robustness,
    run_tau_study,
)

__all__ = [
    'IterationReport',
    'RunArtifacts',
    'StudyReport',
    'TrainingResult',
    'UmsTrainer',
    'evaluate_detectors',
    'load_scenes',
    'load_test_scene',
    'run_ablation',
    'run_iteration_study',
    'run_mu3_study',
    'run_robustness',
    'run_tau_study',
    'run_training',
]
