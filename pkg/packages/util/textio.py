"""
Plain-text helpers shared by checkpoints and grid exports.

Floats are written with repr() so files round-trip exactly.
"""
from pathlib import Path
from typing import Dict, Iterable, List, Union

import numpy as np

from packages.errors import ArtifactIOError


def format_floats(values: Iterable[float]) -> List[str]:
    return [repr(float(v)) for v in np.asarray(list(values), dtype=float).reshape(-1)]


def write_text(path: Union[str, Path], text: str, what: str = "file") -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(path, f"cannot write {what}: {e}") from e
    return path


def read_text(path: Union[str, Path], what: str = "file") -> str:
    path = Path(path)
    try:
        return path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(path, f"cannot read {what}: {e}") from e


def write_named_vectors(path: Union[str, Path], header: str, entries: Dict[str, List[str]]) -> Path:
    """One `name v1 v2 ...` line per entry, after a comment header"""
    lines = [header] + [" ".join([key] + list(values)) for key, values in entries.items()]
    return write_text(path, "\n".join(lines) + "\n", "checkpoint")


def read_named_vectors(path: Union[str, Path], header: str) -> Dict[str, List[str]]:
    rows = read_text(path, "checkpoint").splitlines()
    if not rows or rows[0].strip() != header:
        raise ArtifactIOError(path, f"missing checkpoint header {header!r}")
    entries: Dict[str, List[str]] = {}
    for row in rows[1:]:
        parts = row.split()
        if parts:
            entries[parts[0]] = parts[1:]
    return entries
