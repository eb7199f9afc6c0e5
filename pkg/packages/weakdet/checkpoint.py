"""
Flat text checkpoints: one named parameter vector per line.

    # ums detector checkpoint
    name multi
    scorer_weights 0.1 -0.3 ...
    scorer_bias -1.2
    ...
"""
from pathlib import Path
from typing import Union

import numpy as np

from packages.errors import ArtifactIOError
from packages.util.textio import format_floats, read_named_vectors, write_named_vectors
from packages.weakdet.detector import DetectorModel

HEADER = "# ums detector checkpoint"

_VECTORS = ("scorer_weights", "box_scale", "box_bias", "feature_mean", "feature_std", "self_filter")
_SCALARS = ("scorer_bias", "aux_weight", "cluster_cell_size", "ground_z", "min_confidence")


def save_detector(model: DetectorModel, path: Union[str, Path]) -> Path:
    entries = {"name": [model.name], "min_cluster_points": [str(model.min_cluster_points)]}
    for key in _VECTORS + _SCALARS:
        entries[key] = format_floats(np.atleast_1d(getattr(model, key)))
    return write_named_vectors(path, HEADER, entries)


def load_detector(path: Union[str, Path]) -> DetectorModel:
    entries = read_named_vectors(path, HEADER)
    try:
        kwargs = {
            "name": entries["name"][0],
            "min_cluster_points": int(entries["min_cluster_points"][0]),
        }
        for key in _VECTORS:
            kwargs[key] = np.array([float(v) for v in entries[key]])
        for key in _SCALARS:
            kwargs[key] = float(entries[key][0])
        kwargs["self_filter"] = tuple(kwargs["self_filter"])
        return DetectorModel(**kwargs)
    except (KeyError, IndexError, ValueError) as e:
        raise ArtifactIOError(path, f"incomplete detector checkpoint: {e}") from e
