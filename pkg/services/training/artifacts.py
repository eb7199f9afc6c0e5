"""
On-disk layout of a training run.

    <run>/config.yaml              effective configuration
    <run>/manifest.json            run summary and metrics snapshot
    <run>/progress.json            last completed iteration
    <run>/metrics.csv              pseudo-label quality per iteration
    <run>/detector_metrics.csv     detector evaluation at checkpoint iterations
    <run>/reports/iteration_NN.json
    <run>/iterations/NN/pseudo_multi.txt, pseudo_ego.txt
    <run>/checkpoints/detector_multi.txt, detector_ego.txt, ppf.txt, bank.txt
    <run>/grids/NN/<frame>_{ego,multi}.txt   (optional BEV exports)
"""
from pathlib import Path
from typing import Any, Dict, Optional, Union

import ujson as json

from packages.errors import ArtifactIOError
from packages.util.textio import read_text, write_text


class RunArtifacts:
    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    @property
    def config_path(self) -> Path:
        return self.root / "config.yaml"

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    @property
    def progress_path(self) -> Path:
        return self.root / "progress.json"

    @property
    def metrics_csv(self) -> Path:
        return self.root / "metrics.csv"

    @property
    def detector_csv(self) -> Path:
        return self.root / "detector_metrics.csv"

    def report_path(self, iteration: int) -> Path:
        return self.root / "reports" / f"iteration_{iteration:02d}.json"

    def pseudo_path(self, iteration: int, view: str) -> Path:
        return self.root / "iterations" / f"{iteration:02d}" / f"pseudo_{view}.txt"

    def checkpoint_path(self, name: str) -> Path:
        return self.root / "checkpoints" / f"{name}.txt"

    def grid_path(self, iteration: int, frame_id: int, view: str) -> Path:
        return self.root / "grids" / f"{iteration:02d}" / f"{frame_id:05d}_{view}.txt"

    def write_json(self, path: Path, data: Dict[str, Any]) -> Path:
        return write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n", "json artifact")

    def read_json(self, path: Path) -> Dict[str, Any]:
        text = read_text(path, "json artifact")
        try:
            return json.loads(text)
        except ValueError as e:
            raise ArtifactIOError(path, f"malformed json: {e}") from e

    def save_progress(self, iteration: int, run_id: Optional[str] = None) -> Path:
        return self.write_json(self.progress_path, {"completed_iteration": iteration, "run_id": run_id})

    def completed_iteration(self) -> int:
        """Last iteration whose artifacts were fully written, 0 for a fresh run"""
        if not self.progress_path.exists():
            return 0
        return int(self.read_json(self.progress_path).get("completed_iteration", 0))
