"""Loading of detection streams, action-segment annotations and participant splits.

Detections are stored one JSON object per line::

    {"video_id": "P01_01", "frame": 12, "class_id": 0, "confidence": 0.91,
     "x1": 410.0, "y1": 602.5, "x2": 588.0, "y2": 790.0, "width": 1920, "height": 1080}

Class 0 is the hand; classes 1..352 are noun classes (noun index + 1).
"""

from __future__ import annotations

import csv
import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from egotrack.geometry import BBox

PathLike = Union[str, Path]

HAND_CLASS = 0
DEFAULT_CONFIDENCE_THRESHOLD = 0.25

# participants 9, 11 and 18 belong to neither split
DEFAULT_TRAIN_PARTICIPANTS = frozenset([*range(1, 9), 10, *range(12, 18), *range(19, 25)])
DEFAULT_TEST_PARTICIPANTS = frozenset(range(25, 32))


class IngestError(ValueError):
    """Raised for malformed or out-of-schema input files."""


@dataclass(frozen=True)
class DatasetSchema:
    num_verb_classes: int = 125
    num_noun_classes: int = 352
    fps: int = 60

    def __post_init__(self):
        if min(self.num_verb_classes, self.num_noun_classes, self.fps) <= 0:
            raise ValueError("schema sizes must be positive")

    @property
    def max_class_id(self) -> int:
        return self.num_noun_classes


EPIC_SCHEMA = DatasetSchema()


@dataclass(frozen=True)
class DetectionRecord:
    video_id: str
    frame: int
    class_id: int
    confidence: float
    box: BBox
    image_size: tuple[int, int]

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError(f"negative frame index {self.frame}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.image_size[0] <= 0 or self.image_size[1] <= 0:
            raise ValueError(f"invalid image size {self.image_size}")


@dataclass(frozen=True)
class ActionSegment:
    video_id: str
    participant_id: int
    start_frame: int
    stop_frame: int
    verb_class: int
    noun_class: int

    @property
    def num_frames(self) -> int:
        return self.stop_frame - self.start_frame


# video_id -> frame -> records, both levels in ascending order
DetectionMap = dict[str, dict[int, list[DetectionRecord]]]


def _parse_detection(obj: dict, schema: DatasetSchema) -> DetectionRecord:
    class_id = obj["class_id"]
    if not isinstance(class_id, int) or isinstance(class_id, bool):
        raise ValueError(f"class_id must be an integer, got {class_id!r}")
    if not 0 <= class_id <= schema.max_class_id:
        raise ValueError(f"class_id {class_id} outside [0, {schema.max_class_id}]")
    frame = obj["frame"]
    if not isinstance(frame, int) or isinstance(frame, bool):
        raise ValueError(f"frame must be an integer, got {frame!r}")
    box = BBox(float(obj["x1"]), float(obj["y1"]), float(obj["x2"]), float(obj["y2"]))
    return DetectionRecord(
        video_id=str(obj["video_id"]),
        frame=frame,
        class_id=class_id,
        confidence=float(obj["confidence"]),
        box=box,
        image_size=(int(obj["width"]), int(obj["height"])),
    )


def group_detections(records: Iterable[DetectionRecord]) -> DetectionMap:
    grouped: dict[str, dict[int, list[DetectionRecord]]] = {}
    for rec in records:
        grouped.setdefault(rec.video_id, {}).setdefault(rec.frame, []).append(rec)
    return {
        vid: {f: frames[f] for f in sorted(frames)}
        for vid, frames in sorted(grouped.items())
    }


def load_detections(path: PathLike, schema: DatasetSchema = EPIC_SCHEMA) -> DetectionMap:
    """Read a detections JSONL file into a per-video, per-frame map.

    Blank lines are skipped. Any malformed line raises :class:`IngestError`
    naming the file and 1-based line number.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(_parse_detection(json.loads(line), schema))
            except (ValueError, KeyError, TypeError) as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from exc
    return group_detections(records)


def detection_to_json(rec: DetectionRecord) -> str:
    return json.dumps(
        {
            "video_id": rec.video_id,
            "frame": rec.frame,
            "class_id": rec.class_id,
            "confidence": rec.confidence,
            "x1": rec.box.x_min,
            "y1": rec.box.y_min,
            "x2": rec.box.x_max,
            "y2": rec.box.y_max,
            "width": rec.image_size[0],
            "height": rec.image_size[1],
        }
    )


def dump_detections(detections: DetectionMap, path: PathLike) -> None:
    """Write a detection map in canonical order (video, frame, input order)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for vid in sorted(detections):
            frames = detections[vid]
            for frame in sorted(frames):
                for rec in frames[frame]:
                    fh.write(detection_to_json(rec) + "\n")


def iter_records(detections: DetectionMap) -> Iterable[DetectionRecord]:
    for vid in detections:
        for frame in detections[vid]:
            yield from detections[vid][frame]


def filter_by_confidence(
    records: Iterable[DetectionRecord], threshold: float = DEFAULT_CONFIDENCE_THRESHOLD
) -> list[DetectionRecord]:
    """Keep records whose confidence strictly exceeds ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    return [r for r in records if r.confidence > threshold]


def filter_map_by_confidence(
    detections: DetectionMap, threshold: float = DEFAULT_CONFIDENCE_THRESHOLD
) -> DetectionMap:
    out: DetectionMap = {}
    for vid, frames in detections.items():
        kept = {}
        for frame, recs in frames.items():
            recs = filter_by_confidence(recs, threshold)
            if recs:
                kept[frame] = recs
        out[vid] = kept
    return out


def select_class(
    frames: Mapping[int, list[DetectionRecord]], class_id: int
) -> dict[int, list[DetectionRecord]]:
    out = {}
    for frame, recs in frames.items():
        recs = [r for r in recs if r.class_id == class_id]
        if recs:
            out[frame] = recs
    return out


_ANNOTATION_FIELDS = ["video_id", "participant_id", "start_frame", "stop_frame", "verb_class", "noun_class"]


def load_annotations(path: PathLike, schema: DatasetSchema = EPIC_SCHEMA) -> list[ActionSegment]:
    segments = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(_ANNOTATION_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise IngestError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                seg = ActionSegment(
                    video_id=row["video_id"],
                    participant_id=int(row["participant_id"]),
                    start_frame=int(row["start_frame"]),
                    stop_frame=int(row["stop_frame"]),
                    verb_class=int(row["verb_class"]),
                    noun_class=int(row["noun_class"]),
                )
            except (TypeError, ValueError) as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from exc
            if not 0 <= seg.start_frame < seg.stop_frame:
                raise IngestError(f"{path}:{lineno}: need 0 <= start_frame < stop_frame")
            if not 0 <= seg.verb_class < schema.num_verb_classes:
                raise IngestError(f"{path}:{lineno}: verb_class {seg.verb_class} out of range")
            if not 0 <= seg.noun_class < schema.num_noun_classes:
                raise IngestError(f"{path}:{lineno}: noun_class {seg.noun_class} out of range")
            segments.append(seg)
    return segments


def dump_annotations(segments: Iterable[ActionSegment], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_ANNOTATION_FIELDS)
        for s in segments:
            writer.writerow([s.video_id, s.participant_id, s.start_frame, s.stop_frame, s.verb_class, s.noun_class])


def parse_id_list(text: str) -> frozenset[int]:
    """Parse ``"1-8, 10, 12"`` into a set of integers."""
    ids: set[int] = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = (int(p) for p in part.split("-", 1))
            if lo > hi:
                raise ValueError(f"empty range {part!r}")
            ids.update(range(lo, hi + 1))
        else:
            ids.add(int(part))
    return frozenset(ids)


def load_splits(path: PathLike) -> tuple[frozenset[int], frozenset[int]]:
    """Read a two-line ``train: ...`` / ``test: ...`` split file."""
    found: dict[str, frozenset[int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            key, sep, rest = line.partition(":")
            key = key.strip().lower()
            if not sep or key not in ("train", "test"):
                raise IngestError(f"{path}:{lineno}: expected 'train: ...' or 'test: ...'")
            try:
                found[key] = parse_id_list(rest)
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from exc
    if set(found) != {"train", "test"}:
        raise IngestError(f"{path}: need both a train and a test line")
    return found["train"], found["test"]


def split_by_participant(
    segments: Iterable[ActionSegment],
    train_ids: Iterable[int] = DEFAULT_TRAIN_PARTICIPANTS,
    test_ids: Iterable[int] = DEFAULT_TEST_PARTICIPANTS,
) -> tuple[list[ActionSegment], list[ActionSegment]]:
    """Partition segments by participant id; unlisted participants are dropped."""
    segments = list(segments)
    train_ids, test_ids = frozenset(train_ids), frozenset(test_ids)
    overlap = train_ids & test_ids
    if overlap:
        raise ValueError(f"participants in both splits: {sorted(overlap)}")
    train = [s for s in segments if s.participant_id in train_ids]
    test = [s for s in segments if s.participant_id in test_ids]
    shared = {s.video_id for s in train} & {s.video_id for s in test}
    if shared:
        raise ValueError(f"videos shared between splits: {sorted(shared)}")
    return train, test
