"""Classification and detection metrics.

Classification: Top-k accuracy and macro precision/recall restricted to
classes with more than ``min_train`` training samples. Detection: average
precision at a fixed IoU threshold with greedy matching, and the false
detection rate (``1 - precision``) at the all-detections operating point.
"""

from __future__ import annotations

import json
from collections.abc import Hashable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from egotrack.geometry import BBox, iou

DETECTION_IOU = 0.25
MIN_TRAIN_SAMPLES = 100


def ranked_classes(scores: np.ndarray) -> np.ndarray:
    """Class indices by descending score; equal scores keep the lower id first."""
    return np.argsort(-np.asarray(scores), axis=-1, kind="stable")


def topk(scores, labels, k: int) -> float:
    """Percentage of rows whose label is among the ``k`` best-scored classes."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    labels = np.asarray(labels)
    if len(labels) == 0:
        return 0.0
    top = ranked_classes(scores)[:, :k]
    hits = (top == labels[:, None]).any(axis=1)
    return 100.0 * float(hits.mean())


@dataclass
class ClassificationReport:
    top1: float
    top5: float
    per_class: dict[int, tuple[float, float, int]] = field(default_factory=dict)
    mean_precision: float = 0.0
    mean_recall: float = 0.0

    @property
    def eligible(self) -> list[int]:
        return sorted(self.per_class)

    def to_json(self) -> dict:
        d = asdict(self)
        d["per_class"] = {
            str(c): {"precision": p, "recall": r, "train_count": n} for c, (p, r, n) in sorted(self.per_class.items())
        }
        return d


def per_class_pr(
    predictions: Sequence[int],
    labels: Sequence[int],
    train_counts: Mapping[int, int],
    min_train: int = MIN_TRAIN_SAMPLES,
) -> tuple[dict[int, tuple[float, float, int]], float, float]:
    """Precision/recall (percent) for every class with ``train_count > min_train``.

    A class never predicted has precision 0; an eligible class absent from
    the test labels has recall 0.

    Returns:
        ``(per_class, mean_precision, mean_recall)`` where ``per_class`` maps
        class -> ``(precision, recall, train_count)``.
    """
    pred = np.asarray(predictions)
    true = np.asarray(labels)
    per_class: dict[int, tuple[float, float, int]] = {}
    for c in sorted(train_counts):
        n_train = int(train_counts[c])
        if n_train <= min_train:
            continue
        tp = int(np.sum((pred == c) & (true == c)))
        n_pred = int(np.sum(pred == c))
        n_true = int(np.sum(true == c))
        precision = 100.0 * tp / n_pred if n_pred else 0.0
        recall = 100.0 * tp / n_true if n_true else 0.0
        per_class[c] = (precision, recall, n_train)
    if not per_class:
        return per_class, 0.0, 0.0
    mp = float(np.mean([v[0] for v in per_class.values()]))
    mr = float(np.mean([v[1] for v in per_class.values()]))
    return per_class, mp, mr


def classification_report(
    scores, labels, train_counts: Mapping[int, int], min_train: int = MIN_TRAIN_SAMPLES
) -> ClassificationReport:
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    preds = ranked_classes(scores)[:, 0] if len(scores) else np.array([], dtype=int)
    per_class, mp, mr = per_class_pr(preds, labels, train_counts, min_train)
    return ClassificationReport(
        top1=topk(scores, labels, 1),
        top5=topk(scores, labels, min(5, scores.shape[1])),
        per_class=per_class,
        mean_precision=mp,
        mean_recall=mr,
    )


# --- detection ------------------------------------------------------------


@dataclass(frozen=True)
class ScoredBox:
    image: Hashable
    confidence: float
    box: BBox


@dataclass
class DetectionReport:
    ap: float
    fdr: Optional[float]
    tp: int
    fp: int
    fn: int

    def to_json(self) -> dict:
        return asdict(self)


def match_detections(
    detections: Sequence[ScoredBox],
    ground_truth: Mapping[Hashable, Sequence[BBox]],
    iou_thresh: float = DETECTION_IOU,
) -> list[bool]:
    """Greedy matching in descending confidence (stable on ties).

    A detection is a true positive iff its best IoU over the still unmatched
    ground-truth boxes of its image reaches ``iou_thresh``; that box is then
    consumed. Returned flags follow the ranked order.
    """
    order = sorted(range(len(detections)), key=lambda i: -detections[i].confidence)
    taken: dict[Hashable, set[int]] = {}
    flags = []
    for i in order:
        det = detections[i]
        gts = ground_truth.get(det.image, ())
        used = taken.setdefault(det.image, set())
        best, best_j = -1.0, -1
        for j, gt in enumerate(gts):
            if j in used:
                continue
            o = iou(det.box, gt)
            if o > best:
                best, best_j = o, j
        if best_j >= 0 and best >= iou_thresh:
            used.add(best_j)
            flags.append(True)
        else:
            flags.append(False)
    return flags


def _ap_from_flags(flags: Sequence[bool], num_gt: int, eleven_point: bool = False) -> float:
    if num_gt == 0 or not flags:
        return 0.0
    tp = np.cumsum(flags, dtype=float)
    fp = np.cumsum(np.logical_not(flags), dtype=float)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    if eleven_point:
        ap = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            mask = recall >= t
            ap += (precision[mask].max() if mask.any() else 0.0) / 11.0
        return 100.0 * ap
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return 100.0 * float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def average_precision(
    detections: Sequence[ScoredBox],
    ground_truth: Mapping[Hashable, Sequence[BBox]],
    iou_thresh: float = DETECTION_IOU,
    eleven_point: bool = False,
) -> float:
    """Area under the interpolated precision-recall curve, in percent."""
    num_gt = sum(len(v) for v in ground_truth.values())
    flags = match_detections(detections, ground_truth, iou_thresh)
    return _ap_from_flags(flags, num_gt, eleven_point)


def fdr(
    detections: Sequence[ScoredBox],
    ground_truth: Mapping[Hashable, Sequence[BBox]],
    iou_thresh: float = DETECTION_IOU,
) -> Optional[float]:
    """False detection rate in percent; ``None`` when there are no detections."""
    if not detections:
        return None
    flags = match_detections(detections, ground_truth, iou_thresh)
    return 100.0 * (len(flags) - sum(flags)) / len(flags)


def detection_report(
    detections: Sequence[ScoredBox],
    ground_truth: Mapping[Hashable, Sequence[BBox]],
    iou_thresh: float = DETECTION_IOU,
    eleven_point: bool = False,
) -> DetectionReport:
    num_gt = sum(len(v) for v in ground_truth.values())
    flags = match_detections(detections, ground_truth, iou_thresh)
    tp = sum(flags)
    fp = len(flags) - tp
    return DetectionReport(
        ap=_ap_from_flags(flags, num_gt, eleven_point),
        fdr=100.0 * fp / len(flags) if flags else None,
        tp=tp,
        fp=fp,
        fn=num_gt - tp,
    )


# --- report rendering -----------------------------------------------------

TABLE_COLUMNS = [
    "#",
    "Model",
    "Feature",
    "Hidden",
    "Layers",
    "Seq. Length",
    "Target",
    "Top-1",
    "Top-5",
    "Cls Precision",
    "Cls Recall",
    "Epoch",
]


def results_row(
    index: int,
    feature: str,
    hidden: int,
    layers: int,
    seq_length: str,
    report: ClassificationReport,
    epoch: int,
    model: str = "LSTM",
    target: str = "Verbs",
) -> list[str]:
    return [
        str(index),
        model,
        feature,
        str(hidden),
        str(layers),
        seq_length,
        target,
        f"{report.top1:.3f}",
        f"{report.top5:.3f}",
        f"{report.mean_precision:.2f}",
        f"{report.mean_recall:.2f}",
        str(epoch),
    ]


def format_table(columns: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Left-aligned text table with ``|`` separators."""
    widths = [len(c) for c in columns]
    for row in rows:
        widths = [max(w, len(v)) for w, v in zip(widths, row)]

    def line(values):
        return " | ".join(v.ljust(w) for v, w in zip(values, widths)).rstrip()

    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(columns), sep, *(line(r) for r in rows)]) + "\n"


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
