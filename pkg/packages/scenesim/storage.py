"""
Scene directories on disk.

    <scene>/manifest.yaml      scene config, frame ids, field layout
    <scene>/frames/<id>.txt    sensor data of one frame
    <scene>/ground_truth.txt   evaluation-only boxes

Frame file layout (whitespace separated, floats written with repr):

    frame <frame_id> <segment_id> <num_agents>
    agent <index> <x> <y> <z> <yaw> <l> <w> <h> <num_points>
    <x> <y> <z>                       (num_points lines, agent frame)
    ... one agent block per agent, ego first

Ground-truth file layout, one box per line:

    <frame_id>,<cx>,<cy>,<cz>,<l>,<w>,<h>,<yaw>
"""
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from packages.config.settings import SceneConfig
from packages.errors import ArtifactIOError
from packages.geometry.boxes import Box3D, PointCloud, PoseSE3
from packages.observability import get_logger
from packages.scenesim.scene import Frame, SensorFrame

MANIFEST_NAME = "manifest.yaml"
GROUND_TRUTH_NAME = "ground_truth.txt"
FRAMES_DIR = "frames"
FORMAT_VERSION = 1


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def serialize_frame(frame: SensorFrame) -> str:
    """Text record of one frame's sensor data"""
    lines = [f"frame {frame.frame_id} {frame.segment_id} {frame.num_agents}"]
    for agent, (pose, cloud, dims) in enumerate(zip(frame.agent_poses, frame.agent_clouds, frame.agent_dims)):
        header = list(pose.translation) + [pose.yaw] + list(dims)
        lines.append(f"agent {agent} {_fmt(header)} {len(cloud)}")
        lines.extend(_fmt(p) for p in cloud.points.tolist())
    return "\n".join(lines) + "\n"


def parse_frame(text: str, source: Union[str, Path] = "<string>") -> SensorFrame:
    rows = text.splitlines()
    try:
        tag, frame_id, segment_id, num_agents = rows[0].split()
        if tag != "frame":
            raise ValueError(f"expected 'frame' header, got {tag!r}")
        cursor = 1
        poses, clouds, dims = [], [], []
        for expected_agent in range(int(num_agents)):
            parts = rows[cursor].split()
            if parts[0] != "agent" or int(parts[1]) != expected_agent:
                raise ValueError(f"line {cursor + 1}: expected agent {expected_agent} header")
            x, y, z, yaw, l, w, h = (float(v) for v in parts[2:9])
            count = int(parts[9])
            cursor += 1
            block = rows[cursor:cursor + count]
            if len(block) != count:
                raise ValueError(f"agent {expected_agent}: expected {count} points, found {len(block)}")
            points = np.array([[float(v) for v in row.split()] for row in block], dtype=float).reshape(-1, 3)
            cursor += count
            poses.append(PoseSE3((x, y, z), yaw))
            clouds.append(PointCloud(points, source_agent=f"agent{expected_agent}"))
            dims.append((l, w, h))
    except (IndexError, ValueError) as e:
        raise ArtifactIOError(source, f"malformed frame record: {e}") from e
    return SensorFrame(int(frame_id), int(segment_id), tuple(poses), tuple(clouds), tuple(dims))


def _format_gt(frame_id: int, box: Box3D) -> str:
    return ",".join([str(frame_id)] + [repr(float(v)) for v in box.as_tuple()])


def save_scene(frames: Sequence[Frame], directory: Union[str, Path],
               cfg: Optional[SceneConfig] = None) -> Path:
    """Write a scene directory; ground truth goes to its own file."""
    directory = Path(directory)
    frames_dir = directory / FRAMES_DIR
    try:
        frames_dir.mkdir(parents=True, exist_ok=True)
        for frame in frames:
            (frames_dir / f"{frame.frame_id}.txt").write_text(serialize_frame(frame), encoding="utf-8")
        gt_lines = [_format_gt(f.frame_id, b) for f in frames for b in getattr(f, "gt_boxes", ())]
        (directory / GROUND_TRUTH_NAME).write_text("".join(line + "\n" for line in gt_lines), encoding="utf-8")
        manifest = {
            "format_version": FORMAT_VERSION,
            "frame_ids": [f.frame_id for f in frames],
            "frame_fields": "frame <frame_id> <segment_id> <num_agents> / agent <index> <x> <y> <z> <yaw> "
                            "<l> <w> <h> <num_points> / <x> <y> <z>",
            "ground_truth_fields": "frame_id,cx,cy,cz,l,w,h,yaw",
            "scene": cfg.model_dump(mode="json") if cfg is not None else None,
        }
        with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as f:
            yaml.safe_dump(manifest, f, sort_keys=False)
    except OSError as e:
        raise ArtifactIOError(directory, f"cannot write scene: {e}") from e
    get_logger().log_structured("INFO", "scene_saved", directory=str(directory), frames=len(frames))
    return directory


def load_ground_truth(directory: Union[str, Path]) -> Dict[int, Tuple[Box3D, ...]]:
    path = Path(directory) / GROUND_TRUTH_NAME
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(path, f"cannot read ground truth: {e}") from e
    boxes: Dict[int, List[Box3D]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            parts = line.split(",")
            boxes.setdefault(int(parts[0]), []).append(Box3D(*(float(v) for v in parts[1:8])))
        except (IndexError, ValueError, TypeError) as e:
            raise ArtifactIOError(path, f"line {lineno}: {e}") from e
    return {fid: tuple(b) for fid, b in boxes.items()}


def load_scene(directory: Union[str, Path], with_ground_truth: bool = True) -> List[Frame]:
    """Read a scene directory written by save_scene, in manifest frame order."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ArtifactIOError(manifest_path, f"cannot read scene manifest: {e}") from e

    gt = load_ground_truth(directory) if with_ground_truth else {}
    frames: List[Frame] = []
    for frame_id in manifest.get("frame_ids", []):
        path = directory / FRAMES_DIR / f"{frame_id}.txt"
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ArtifactIOError(path, f"cannot read frame: {e}") from e
        sensor = parse_frame(text, path)
        frames.append(Frame(
            sensor.frame_id, sensor.segment_id, sensor.agent_poses, sensor.agent_clouds, sensor.agent_dims,
            gt_boxes=gt.get(sensor.frame_id, ()),
        ))
    return frames


def load_scene_config(directory: Union[str, Path]) -> Optional[SceneConfig]:
    manifest_path = Path(directory) / MANIFEST_NAME
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ArtifactIOError(manifest_path, f"cannot read scene manifest: {e}") from e
    scene = manifest.get("scene")
    return SceneConfig.model_validate(scene) if scene else None
