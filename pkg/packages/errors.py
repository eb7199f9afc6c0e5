"""
Exception hierarchy shared by every UMS package.

Each error subclasses the builtin that callers would naturally catch
(ValueError for bad arguments, RuntimeError for failed computations).
"""
from typing import Any, Dict, Optional


class UmsError(Exception):
    """Base class for all pipeline errors"""


class InvalidInputError(UmsError, ValueError):
    """Raised for non-finite values, shape mismatches and out-of-range arguments"""


class SceneGenerationError(UmsError, RuntimeError):
    """Raised when a scene layout cannot be satisfied"""

    def __init__(self, message: str, frame_index: int):
        super().__init__(f"frame {frame_index}: {message}")
        self.frame_index = frame_index


class InsufficientSupervisionError(UmsError, RuntimeError):
    """Raised when a self-supervised training set is empty"""

    def __init__(self, message: str, negatives: int = 0, positives: int = 0):
        super().__init__(f"{message} (negatives={negatives}, positives={positives})")
        self.negatives = negatives
        self.positives = positives


class TrainingDivergedError(UmsError, RuntimeError):
    """Raised when a loss becomes non-finite during gradient descent"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        detail = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        super().__init__(f"{message} [{detail}]" if detail else message)


class PipelineStageError(UmsError, RuntimeError):
    """Raised by the training pipeline with the failing stage attached"""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message


class ArtifactIOError(UmsError, OSError):
    """Raised when a run artifact, checkpoint or scene file cannot be read or written"""

    def __init__(self, path: Any, message: str):
        super().__init__(f"{path}: {message}")
        self.path = str(path)
