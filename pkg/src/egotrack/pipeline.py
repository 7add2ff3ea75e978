"""End-to-end stages behind the command-line interface.

Output directory layout::

    out/tracks/<video>.jsonl        hand track points
    out/timelines/<video>.csv       dense left/right timeline
    out/track_summary.json
    out/features/<split>_<kind>.bin (+ .jsonl index)
    out/models/<kind>_<seq>_h<hidden>.ckpt (+ .history.csv)
    out/reports/<kind>_<seq>_h<hidden>.json (+ .txt)
"""

from __future__ import annotations

import logging
import os
from collections import Counter
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, TypeVar, Union

import numpy as np

from egotrack import evaluation
from egotrack.evaluation import ScoredBox
from egotrack.features import (
    FeatureKind,
    FeatureSequence,
    build_features,
    read_container,
    track_objects,
    write_container,
)
from egotrack.ingest import (
    DEFAULT_CONFIDENCE_THRESHOLD,
    DEFAULT_TEST_PARTICIPANTS,
    DEFAULT_TRAIN_PARTICIPANTS,
    HAND_CLASS,
    ActionSegment,
    DetectionMap,
    filter_map_by_confidence,
    load_annotations,
    load_detections,
    load_splits,
    select_class,
    split_by_participant,
)
from egotrack.seqmodel import (
    ClassifierConfig,
    CLRConfig,
    TrainConfig,
    load_checkpoint,
    predict_scores,
    save_checkpoint,
    train,
    write_history_csv,
)
from egotrack.tracker import TrackerConfig, run_tracker, track_records_json
from egotrack.trackpost import (
    HandSide,
    HandTimeline,
    process_hand_tracks,
    read_timeline_csv,
    write_timeline_csv,
)

log = logging.getLogger("egotrack")
PathLike = Union[str, Path]
T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    cap = os.environ.get("EGO_TRACK_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def parallel_map(fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    """Ordered map over a thread pool sized by ``EGO_TRACK_THREADS``."""
    workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --- track ----------------------------------------------------------------


@dataclass
class VideoTracks:
    video_id: str
    raw_tracks: int
    kept: int
    timeline: HandTimeline
    lines: list[str]


def _frames_per_video(detections: DetectionMap, segments: Iterable[ActionSegment]) -> dict[str, int]:
    frames: dict[str, int] = {}
    for vid, per_frame in detections.items():
        if per_frame:
            frames[vid] = max(per_frame) + 1
        else:
            frames[vid] = 0
    for seg in segments:
        frames[seg.video_id] = max(frames.get(seg.video_id, 0), seg.stop_frame)
    return frames


def _image_size(per_frame) -> tuple[int, int]:
    for recs in per_frame.values():
        for r in recs:
            return r.image_size
    return (1, 1)


def track_video(
    video_id: str,
    per_frame,
    num_frames: int,
    config: TrackerConfig = TrackerConfig(),
) -> VideoTracks:
    hands = select_class(per_frame, HAND_CLASS)
    raw = run_tracker({f: [r.box for r in recs] for f, recs in hands.items()}, config)
    image_size = _image_size(per_frame)
    kept, timeline = process_hand_tracks(video_id, raw, num_frames, image_size)
    lines = track_records_json(video_id, [t for t, _ in kept])
    return VideoTracks(video_id, len(raw), len(kept), timeline, lines)


def run_track(
    detections_path: PathLike,
    out_dir: PathLike,
    annotations_path: Optional[PathLike] = None,
    threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    config: TrackerConfig = TrackerConfig(),
    seed: int = 0,
) -> dict:
    """Track hands in every video and write track dumps and timelines."""
    out = Path(out_dir)
    (out / "tracks").mkdir(parents=True, exist_ok=True)
    (out / "timelines").mkdir(parents=True, exist_ok=True)
    detections = filter_map_by_confidence(load_detections(detections_path), threshold)
    segments = load_annotations(annotations_path) if annotations_path else []
    num_frames = _frames_per_video(detections, segments)
    videos = sorted(num_frames)

    def work(vid: str) -> VideoTracks:
        return track_video(vid, detections.get(vid, {}), num_frames[vid], config)

    results = parallel_map(work, videos)
    summary = {"seed": seed, "threshold": threshold, "tracker": _tracker_json(config), "videos": {}}
    for res in results:
        with open(out / "tracks" / f"{res.video_id}.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(line + "\n" for line in res.lines)
        write_timeline_csv(res.timeline, out / "timelines" / f"{res.video_id}.csv")
        summary["videos"][res.video_id] = {
            "frames": len(res.timeline),
            "raw_tracks": res.raw_tracks,
            "kept_tracks": res.kept,
            "sentinel_fraction": {
                side.value: res.timeline.provenance_fractions(side)["sentinel"] for side in HandSide
            },
        }
    summary["total_tracks"] = sum(v["kept_tracks"] for v in summary["videos"].values())
    (out / "track_summary.json").write_text(evaluation.dumps_json(summary), encoding="utf-8")
    return summary


def _tracker_json(config: TrackerConfig) -> dict:
    d = asdict(config)
    d["noise"] = {k: list(v) for k, v in d["noise"].items()}
    return d


# --- featurize ------------------------------------------------------------


@dataclass
class FeaturizeResult:
    counts: dict[str, int]
    skipped: int
    paths: dict[str, Path]


def run_featurize(
    out_dir: PathLike,
    annotations_path: PathLike,
    kind: FeatureKind,
    detections_path: Optional[PathLike] = None,
    splits_path: Optional[PathLike] = None,
    threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    config: TrackerConfig = TrackerConfig(),
    seed: int = 0,
) -> FeaturizeResult:
    """Build one feature container per split from timelines and detections."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    segments = load_annotations(annotations_path)
    if splits_path:
        train_ids, test_ids = load_splits(splits_path)
    else:
        train_ids, test_ids = DEFAULT_TRAIN_PARTICIPANTS, DEFAULT_TEST_PARTICIPANTS
    splits = dict(zip(("train", "test"), split_by_participant(segments, train_ids, test_ids)))
    detections: DetectionMap = {}
    if kind is not FeatureKind.LR:
        if detections_path is None:
            raise ValueError(f"--detections is required for kind {kind.value}")
        detections = filter_map_by_confidence(load_detections(detections_path), threshold)

    timelines: dict[str, Optional[HandTimeline]] = {}
    object_tracks = {}

    def timeline_for(vid: str) -> Optional[HandTimeline]:
        if vid not in timelines:
            path = out / "timelines" / f"{vid}.csv"
            timelines[vid] = read_timeline_csv(path, vid) if path.exists() else None
        return timelines[vid]

    if kind in (FeatureKind.LR_TRC_BPV, FeatureKind.LR_OBJ):
        vids = sorted({s.video_id for segs in splits.values() for s in segs} & set(detections))
        tracked = parallel_map(lambda v: track_objects(detections[v], config), vids)
        object_tracks = dict(zip(vids, tracked))

    skipped = 0
    counts, paths = {}, {}
    for split, segs in splits.items():
        seqs: list[FeatureSequence] = []
        for seg in segs:
            tl = timeline_for(seg.video_id)
            if tl is None or seg.stop_frame > len(tl):
                log.warning("skipping %s [%d, %d): outside tracked range", seg.video_id, seg.start_frame, seg.stop_frame)
                skipped += 1
                continue
            seqs.append(
                build_features(
                    kind,
                    tl,
                    seg,
                    detections.get(seg.video_id, {}),
                    config=config,
                    object_tracks=object_tracks.get(seg.video_id),
                )
            )
        path = write_container(out / "features" / f"{split}_{kind.value}.bin", seqs, kind, seed)
        counts[split] = len(seqs)
        paths[split] = path
    return FeaturizeResult(counts, skipped, paths)


# --- train / evaluate -----------------------------------------------------


def model_stem(kind: FeatureKind, seq_length: Optional[int], hidden: int) -> str:
    seq = "full" if seq_length is None else str(seq_length)
    return f"{kind.value}_{seq}_h{hidden}"


def _load_split(out: Path, split: str, kind: FeatureKind) -> list[FeatureSequence]:
    path = out / "features" / f"{split}_{kind.value}.bin"
    header, seqs = read_container(path)
    if header["kind"] != kind.value:
        raise ValueError(f"{path}: container holds {header['kind']}, expected {kind.value}")
    return seqs


def run_train(
    out_dir: PathLike,
    kind: FeatureKind,
    seq_length: Optional[int] = 32,
    hidden: int = 16,
    clr_config: CLRConfig = CLRConfig(),
    train_config: TrainConfig = TrainConfig(),
    num_classes: int = 125,
    log_fn=None,
):
    out = Path(out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    train_set = _load_split(out, "train", kind)
    test_set = _load_split(out, "test", kind)
    if not train_set:
        raise ValueError("training container is empty")
    config = ClassifierConfig(
        input_dim=kind.dim(), hidden_units=hidden, num_layers=2, num_classes=num_classes, seq_length=seq_length
    )
    result = train(train_set, config, clr_config, train_config, eval_set=test_set or None, log=log_fn)
    stem = model_stem(kind, seq_length, hidden)
    ckpt = out / "models" / f"{stem}.ckpt"
    save_checkpoint(
        result.model,
        ckpt,
        extra={
            "kind": kind.value,
            "best_epoch": result.best_epoch,
            "seed": train_config.seed,
            "clr": asdict(clr_config),
            "train": asdict(train_config),
            "train_counts": {str(k): v for k, v in sorted(Counter(s.label for s in train_set).items())},
        },
    )
    write_history_csv(result.history, out / "models" / f"{stem}.history.csv")
    return result, ckpt


def run_evaluate(
    out_dir: PathLike,
    kind: FeatureKind,
    seq_length: Optional[int] = 32,
    hidden: int = 16,
    checkpoint: Optional[PathLike] = None,
    min_train: int = evaluation.MIN_TRAIN_SAMPLES,
) -> tuple[evaluation.ClassificationReport, str]:
    out = Path(out_dir)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    stem = model_stem(kind, seq_length, hidden)
    ckpt = Path(checkpoint) if checkpoint else out / "models" / f"{stem}.ckpt"
    model, extra = load_checkpoint(ckpt)
    if model.config.input_dim != kind.dim():
        raise ValueError(f"checkpoint input_dim {model.config.input_dim} does not match kind {kind.value}")
    test_set = _load_split(out, "test", kind)
    train_counts = Counter(s.label for s in _load_split(out, "train", kind))
    counts = {c: train_counts.get(c, 0) for c in range(model.config.num_classes)}
    if test_set:
        scores = predict_scores(model, test_set)
    else:
        scores = np.zeros((0, model.config.num_classes))
    labels = [s.label for s in test_set]
    report = evaluation.classification_report(scores, labels, counts, min_train)
    row = evaluation.results_row(
        1,
        kind.value.upper().replace("-", "+", 1),
        model.config.hidden_units,
        model.config.num_layers,
        model.config.seq_label,
        report,
        int(extra.get("best_epoch", 0)),
    )
    table = evaluation.format_table(evaluation.TABLE_COLUMNS, [row])
    payload = {"seed": extra.get("seed"), "checkpoint": str(ckpt), "columns": evaluation.TABLE_COLUMNS, "row": row}
    payload["report"] = report.to_json()
    (out / "reports" / f"{stem}.json").write_text(evaluation.dumps_json(payload), encoding="utf-8")
    (out / "reports" / f"{stem}.txt").write_text(table, encoding="utf-8")
    return report, table


# --- detector evaluation --------------------------------------------------


def _boxes_from_file(path: PathLike, threshold: Optional[float]):
    dets = load_detections(path)
    if threshold is not None:
        dets = filter_map_by_confidence(dets, threshold)
    scored, truth = [], {}
    for vid, frames in dets.items():
        for frame, recs in frames.items():
            for r in recs:
                scored.append(ScoredBox((vid, frame), r.confidence, r.box))
                truth.setdefault((vid, frame), []).append(r.box)
    return scored, truth


def run_detector_eval(
    predictions: Sequence[tuple[str, str, PathLike]],
    ground_truth: Sequence[tuple[str, PathLike]],
    iou_thresh: float = evaluation.DETECTION_IOU,
    threshold: Optional[float] = None,
    eleven_point: bool = False,
) -> tuple[dict, str]:
    """AP / FDR matrix: one row per model, one column per test set.

    ``predictions`` holds ``(model, test_set, path)`` triples. Ground-truth
    files use the detection format with confidence ignored. For a test set
    with no ground-truth boxes the cell reports the false-positive count
    instead of AP.
    """
    gts = {name: _boxes_from_file(path, None)[1] for name, path in ground_truth}
    matrix: dict[str, dict[str, dict]] = {}
    for model_name, gt_name, path in predictions:
        if gt_name not in gts:
            raise ValueError(f"predictions for unknown test set {gt_name!r}")
        scored, _ = _boxes_from_file(path, threshold)
        truth = gts[gt_name]
        rep = evaluation.detection_report(scored, truth, iou_thresh, eleven_point)
        cell = rep.to_json()
        cell["gt_free"] = not truth
        matrix.setdefault(model_name, {})[gt_name] = cell

    rows = []
    for model_name, cells in matrix.items():
        row = [model_name]
        for gt_name in gts:
            cell = cells.get(gt_name)
            if cell is None:
                row.append("-")
            elif cell["gt_free"]:
                row.append(str(cell["fp"]))
            else:
                fdr_txt = "-" if cell["fdr"] is None else f"{cell['fdr']:.0f}"
                row.append(f"{cell['ap']:.2f} ({fdr_txt})")
        rows.append(row)
    table = evaluation.format_table(["train \\ test", *gts], rows)
    return {"iou_thresh": iou_thresh, "matrix": matrix}, table
