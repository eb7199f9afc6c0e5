"""
Line-delimited proposal records.

One proposal per line, comma separated:

    frame_id,view,cx,cy,cz,l,w,h,yaw,confidence

Floats are written with repr() so a save/load cycle reproduces them bit for bit.
"""
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterable, List, Union

from packages.errors import ArtifactIOError, InvalidInputError
from packages.geometry.boxes import Box3D, Proposal, ProposalSet, View

RECORD_FIELDS = ("frame_id", "view", "cx", "cy", "cz", "l", "w", "h", "yaw", "confidence")


def format_record(frame_id: int, view: Union[View, str], proposal: Proposal) -> str:
    b = proposal.box
    values = (b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw, proposal.confidence)
    return ",".join([str(int(frame_id)), View(view).value] + [repr(float(v)) for v in values])


def parse_record(line: str):
    """Parse one record into (frame_id, view, proposal)."""
    parts = line.strip().split(",")
    if len(parts) != len(RECORD_FIELDS):
        raise InvalidInputError(f"expected {len(RECORD_FIELDS)} fields, got {len(parts)}: {line!r}")
    try:
        frame_id = int(parts[0])
        view = View(parts[1])
        nums = [float(p) for p in parts[2:]]
    except ValueError as e:
        raise InvalidInputError(f"malformed proposal record {line!r}: {e}") from e
    return frame_id, view, Proposal(Box3D(*nums[:7]), nums[7])


def format_proposal_set(proposals: ProposalSet) -> List[str]:
    return [format_record(proposals.frame_id, proposals.view, p) for p in proposals]


def write_proposal_sets(path: Union[str, Path], sets: Iterable[ProposalSet]) -> Path:
    """Write proposal sets to a record file, one line per proposal"""
    path = Path(path)
    lines: List[str] = []
    for s in sets:
        lines.extend(format_proposal_set(s))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(path, f"cannot write proposal records: {e}") from e
    return path


def read_proposal_sets(path: Union[str, Path]) -> Dict[int, ProposalSet]:
    """
    Read a record file back into proposal sets keyed by frame id.

    Record order within a frame is preserved. A file mixing views for the same
    frame is rejected.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(path, f"cannot read proposal records: {e}") from e

    grouped: "OrderedDict[int, List[Proposal]]" = OrderedDict()
    views: Dict[int, View] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            frame_id, view, proposal = parse_record(line)
        except InvalidInputError as e:
            raise ArtifactIOError(path, f"line {lineno}: {e}") from e
        if views.setdefault(frame_id, view) != view:
            raise ArtifactIOError(path, f"line {lineno}: frame {frame_id} mixes views")
        grouped.setdefault(frame_id, []).append(proposal)
    return {fid: ProposalSet(fid, views[fid], tuple(items)) for fid, items in grouped.items()}
