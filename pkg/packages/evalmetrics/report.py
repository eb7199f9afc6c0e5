"""
Evaluation reports and their CSV rendering.
"""
import csv
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

from packages.config.settings import EvalSettings
from packages.errors import ArtifactIOError
from packages.evalmetrics.ap import Band, band_label, pooled_tally
from packages.geometry.boxes import Box3D, ProposalSet


@dataclass(frozen=True)
class EvalReport:
    """
    Dataset-level metrics of one prediction source.

    ap_03 and ap_05 are computed at the loose and strict thresholds of
    EvalSettings.iou_thresholds; precision, recall and the range bands use the
    strict one. Bands without ground truth report 0 and are listed in
    empty_bands.
    """
    ap_03: float
    ap_05: float
    precision_05: float
    recall_05: float
    range_banded: Dict[str, float] = field(default_factory=dict)
    empty_bands: Tuple[str, ...] = ()
    frames: int = 0
    predictions: int = 0
    ground_truth: int = 0

    def as_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        values = dict(data)
        values["range_banded"] = dict(values.get("range_banded", {}))
        values["empty_bands"] = tuple(values.get("empty_bands", ()))
        return cls(**values)


def clip_to_range(predictions: Mapping[int, ProposalSet], ground_truth: Mapping[int, Sequence[Box3D]],
                  max_range: float):
    """Drop predictions and ground truth whose centers lie at or beyond max_range"""
    preds = {fid: s.with_items(p for p in s if p.box.bev_range < max_range) for fid, s in predictions.items()}
    gts = {fid: tuple(b for b in boxes if b.bev_range < max_range) for fid, boxes in ground_truth.items()}
    return preds, gts


def evaluate_frames(predictions: Mapping[int, ProposalSet], ground_truth: Mapping[int, Sequence[Box3D]],
                    settings: EvalSettings = EvalSettings()) -> EvalReport:
    preds, gts = clip_to_range(predictions, ground_truth, settings.max_range)
    loose, strict = settings.iou_thresholds
    method = settings.ap_method
    strict_tally = pooled_tally(preds, gts, strict)

    banded: Dict[str, float] = {}
    empty: List[str] = []
    for band in settings.bands:
        tally = pooled_tally(preds, gts, strict, band)
        label = band_label(band)
        banded[label] = tally.average_precision(method)
        if tally.num_gt == 0:
            empty.append(label)

    return EvalReport(
        ap_03=pooled_tally(preds, gts, loose).average_precision(method),
        ap_05=strict_tally.average_precision(method),
        precision_05=strict_tally.precision,
        recall_05=strict_tally.recall,
        range_banded=banded,
        empty_bands=tuple(empty),
        frames=len(gts),
        predictions=sum(len(preds[f]) for f in gts if f in preds),
        ground_truth=strict_tally.num_gt,
    )


def metric_columns(bands: Sequence[Band]) -> List[str]:
    return ["ap_03", "ap_05", "precision_05", "recall_05"] + [f"ap_05_{band_label(b)}" for b in bands]


def metric_fields(report: EvalReport, bands: Sequence[Band]) -> Dict[str, str]:
    fields = {
        "ap_03": repr(report.ap_03),
        "ap_05": repr(report.ap_05),
        "precision_05": repr(report.precision_05),
        "recall_05": repr(report.recall_05),
    }
    for band in bands:
        fields[f"ap_05_{band_label(band)}"] = repr(report.range_banded.get(band_label(band), 0.0))
    return fields


def csv_columns(bands: Sequence[Band]) -> List[str]:
    return ["iteration", "view"] + metric_columns(bands)


def report_row(iteration: Union[int, str], view: str, report: EvalReport,
               bands: Sequence[Band]) -> Dict[str, str]:
    return {"iteration": str(iteration), "view": view, **metric_fields(report, bands)}


def render_csv(rows: Iterable[Mapping[str, str]], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def write_csv(path: Union[str, Path], rows: Iterable[Mapping[str, str]], columns: Sequence[str]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(render_csv(rows, columns), encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(path, f"cannot write metrics CSV: {e}") from e
    return path
