"""Per-segment feature sequences: hand coordinates plus optional object cues.

Column layout is fixed: ``[Lx, Ly, Rx, Ry | per-class block]`` with class
blocks in ascending noun order. Noun ``n`` corresponds to detector class
``n + 1``.
"""

from __future__ import annotations

import enum
import json
import struct
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from egotrack.geometry import normalize
from egotrack.ingest import EPIC_SCHEMA, ActionSegment, DatasetSchema, DetectionRecord
from egotrack.tracker import Track, TrackerConfig, run_tracker
from egotrack.trackpost import HandTimeline, interpolate_track

PathLike = Union[str, Path]
DEFAULT_SAMPLE_LENGTH = 32


class FeatureKind(str, enum.Enum):
    LR = "lr"
    LR_BPV = "lr-bpv"
    LR_TRC_BPV = "lr-trc-bpv"
    LR_OBJ = "lr-obj"

    def dim(self, schema: DatasetSchema = EPIC_SCHEMA) -> int:
        n = schema.num_noun_classes
        return {"lr": 4, "lr-bpv": 4 + n, "lr-trc-bpv": 4 + n, "lr-obj": 4 + 2 * n}[self.value]

    @property
    def code(self) -> int:
        return list(FeatureKind).index(self)

    @classmethod
    def from_code(cls, code: int) -> "FeatureKind":
        return list(cls)[code]


@dataclass
class FeatureSequence:
    video_id: str
    start_frame: int
    stop_frame: int
    kind: FeatureKind
    steps: np.ndarray
    label: int
    noun: int = -1

    def __post_init__(self):
        if self.steps.ndim != 2 or self.steps.shape[0] < 1:
            raise ValueError(f"steps must be a non-empty T x D matrix, got {self.steps.shape}")

    @property
    def length(self) -> int:
        return self.steps.shape[0]


def _check_range(start: int, stop: int, available: Optional[int] = None) -> None:
    if not 0 <= start < stop:
        raise ValueError(f"invalid frame range [{start}, {stop})")
    if available is not None and stop > available:
        raise ValueError(f"segment [{start}, {stop}) exceeds timeline of {available} frames")


def build_lr(timeline: HandTimeline, segment: ActionSegment) -> np.ndarray:
    """``T x 4`` rows of ``(Lx, Ly, Rx, Ry)`` for ``segment``'s frames."""
    start, stop = segment.start_frame, segment.stop_frame
    _check_range(start, stop, len(timeline))
    out = np.empty((stop - start, 4))
    for row, f in enumerate(range(start, stop)):
        lp, rp = timeline.left[f].position, timeline.right[f].position
        out[row] = (lp.x, lp.y, rp.x, rp.y)
    return out


def _noun_column(class_id: int, schema: DatasetSchema) -> int:
    if not 1 <= class_id <= schema.num_noun_classes:
        raise ValueError(f"class_id {class_id} is not a noun class")
    return class_id - 1


def build_bpv(
    detections: Mapping[int, Sequence[DetectionRecord]],
    start: int,
    stop: int,
    schema: DatasetSchema = EPIC_SCHEMA,
) -> np.ndarray:
    """Binary presence of each noun class on frames ``[start, stop)``."""
    _check_range(start, stop)
    out = np.zeros((stop - start, schema.num_noun_classes))
    for f in range(start, stop):
        for rec in detections.get(f, ()):
            if rec.class_id == 0:
                continue
            out[f - start, _noun_column(rec.class_id, schema)] = 1.0
    return out


@dataclass
class ObjectTracks:
    """Interpolated object tracks of one video, keyed by detector class id."""

    by_class: dict[int, list[Track]]
    image_size: tuple[int, int]


def track_objects(
    detections: Mapping[int, Sequence[DetectionRecord]],
    config: TrackerConfig = TrackerConfig(),
) -> ObjectTracks:
    """Run the tracker separately for every noun class and interpolate."""
    streams: dict[int, dict[int, list]] = {}
    image_size = (1, 1)
    for f in sorted(detections):
        for rec in detections[f]:
            if rec.class_id == 0:
                continue
            image_size = rec.image_size
            streams.setdefault(rec.class_id, {}).setdefault(f, []).append(rec.box)
    by_class = {
        cid: [interpolate_track(t) for t in run_tracker(frames, config)]
        for cid, frames in sorted(streams.items())
    }
    return ObjectTracks(by_class, image_size)


def build_trc_bpv(
    detections: Mapping[int, Sequence[DetectionRecord]],
    start: int,
    stop: int,
    schema: DatasetSchema = EPIC_SCHEMA,
    config: TrackerConfig = TrackerConfig(),
    object_tracks: Optional[ObjectTracks] = None,
) -> np.ndarray:
    """Presence including frames bridged by object-track interpolation.

    ``object_tracks`` may be precomputed over a whole video; otherwise the
    given detections are tracked. The raw presence is always included, so
    the result dominates :func:`build_bpv` elementwise.
    """
    out = build_bpv(detections, start, stop, schema)
    if object_tracks is None:
        object_tracks = track_objects(detections, config)
    for cid, tracks in object_tracks.by_class.items():
        col = _noun_column(cid, schema)
        for track in tracks:
            for p in track.points:
                if start <= p.frame < stop:
                    out[p.frame - start, col] = 1.0
    return out


def build_obj_coords(
    detections: Mapping[int, Sequence[DetectionRecord]],
    start: int,
    stop: int,
    schema: DatasetSchema = EPIC_SCHEMA,
    config: TrackerConfig = TrackerConfig(),
    object_tracks: Optional[ObjectTracks] = None,
) -> np.ndarray:
    """Normalized ``(x, y)`` per noun class, ``(0, 0)`` where absent.

    When several tracks of a class cover a frame, the one with the most
    detections wins (ties: lower track id).
    """
    _check_range(start, stop)
    if object_tracks is None:
        object_tracks = track_objects(detections, config)
    width, height = object_tracks.image_size
    out = np.zeros((stop - start, 2 * schema.num_noun_classes))
    for cid, tracks in object_tracks.by_class.items():
        col = 2 * _noun_column(cid, schema)
        # lowest rank writes last so it wins
        for track in sorted(tracks, key=lambda t: (-t.detected_count, t.id), reverse=True):
            for p in track.points:
                if start <= p.frame < stop:
                    q = normalize(p.center, width, height)
                    out[p.frame - start, col : col + 2] = (q.x, q.y)
    return out


def build_features(
    kind: FeatureKind,
    timeline: HandTimeline,
    segment: ActionSegment,
    detections: Optional[Mapping[int, Sequence[DetectionRecord]]] = None,
    schema: DatasetSchema = EPIC_SCHEMA,
    config: TrackerConfig = TrackerConfig(),
    object_tracks: Optional[ObjectTracks] = None,
) -> FeatureSequence:
    detections = detections or {}
    lr = build_lr(timeline, segment)
    start, stop = segment.start_frame, segment.stop_frame
    if kind is FeatureKind.LR:
        steps = lr
    elif kind is FeatureKind.LR_BPV:
        steps = np.hstack([lr, build_bpv(detections, start, stop, schema)])
    elif kind is FeatureKind.LR_TRC_BPV:
        steps = np.hstack([lr, build_trc_bpv(detections, start, stop, schema, config, object_tracks)])
    else:
        steps = np.hstack([lr, build_obj_coords(detections, start, stop, schema, config, object_tracks)])
    return FeatureSequence(
        segment.video_id, start, stop, kind, steps, segment.verb_class, segment.noun_class
    )


def sample_indices(length: int, target: int = DEFAULT_SAMPLE_LENGTH) -> np.ndarray:
    if length < 1 or target < 1:
        raise ValueError("length and target must be positive")
    return (np.arange(target) * length) // target


def sample_sequence(seq: np.ndarray, target: int = DEFAULT_SAMPLE_LENGTH) -> np.ndarray:
    """Pick ``target`` rows at ``floor(i * T / target)``; short inputs repeat rows."""
    return seq[sample_indices(seq.shape[0], target)]


def sample_feature(fs: FeatureSequence, target: int = DEFAULT_SAMPLE_LENGTH) -> FeatureSequence:
    return FeatureSequence(
        fs.video_id, fs.start_frame, fs.stop_frame, fs.kind, sample_sequence(fs.steps, target), fs.label, fs.noun
    )


def pad_batch(seqs: Sequence[FeatureSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Zero-pad to the longest sequence; returns ``(N x T x D batch, lengths)``."""
    if not seqs:
        raise ValueError("cannot pad an empty batch")
    kinds = {s.kind for s in seqs}
    if len(kinds) > 1:
        raise ValueError(f"mixed feature kinds in batch: {sorted(k.value for k in kinds)}")
    dims = {s.steps.shape[1] for s in seqs}
    if len(dims) > 1:
        raise ValueError(f"mixed feature dimensions in batch: {sorted(dims)}")
    lengths = np.array([s.length for s in seqs])
    batch = np.zeros((len(seqs), int(lengths.max()), dims.pop()))
    for i, s in enumerate(seqs):
        batch[i, : s.length] = s.steps
    return batch, lengths


def unpad(batch: np.ndarray, lengths: Sequence[int]) -> list[np.ndarray]:
    return [batch[i, :n] for i, n in enumerate(lengths)]


# --- container ------------------------------------------------------------

CONTAINER_MAGIC = b"EGOFEAT1"
_RECORD_HEADER = struct.Struct("<BIIi")


def write_container(
    path: PathLike,
    seqs: Sequence[FeatureSequence],
    kind: FeatureKind,
    seed: int = 0,
) -> Path:
    """Write sequences to ``path`` plus a JSONL index next to it.

    Layout: magic, ``uint32`` length of a JSON file header, the header, then
    per record ``(kind code u8, D u32, T u32, label i32)`` followed by
    ``T * D`` little-endian float32 values in row-major order.
    """
    path = Path(path)
    index_path = path.with_suffix(".jsonl")
    header = json.dumps({"kind": kind.value, "dim": kind.dim(), "count": len(seqs), "seed": seed}).encode()
    with open(path, "wb") as fh, open(index_path, "w", encoding="utf-8", newline="\n") as idx:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for i, s in enumerate(seqs):
            if s.kind is not kind:
                raise ValueError(f"sequence {i} has kind {s.kind.value}, container is {kind.value}")
            offset = fh.tell()
            t, d = s.steps.shape
            fh.write(_RECORD_HEADER.pack(kind.code, d, t, s.label))
            fh.write(np.ascontiguousarray(s.steps, dtype="<f4").tobytes())
            idx.write(
                json.dumps(
                    {
                        "index": i,
                        "video_id": s.video_id,
                        "start_frame": s.start_frame,
                        "stop_frame": s.stop_frame,
                        "label": s.label,
                        "noun": s.noun,
                        "kind": kind.value,
                        "T": t,
                        "D": d,
                        "offset": offset,
                    }
                )
                + "\n"
            )
    return path


def read_container(path: PathLike) -> tuple[dict, list[FeatureSequence]]:
    """Load a container written by :func:`write_container`; returns (header, sequences)."""
    path = Path(path)
    data = path.read_bytes()
    if data[:8] != CONTAINER_MAGIC:
        raise ValueError(f"{path}: not a feature container")
    (hlen,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12 : 12 + hlen])
    index = []
    index_path = path.with_suffix(".jsonl")
    if index_path.exists():
        with open(index_path, encoding="utf-8") as fh:
            index = [json.loads(line) for line in fh if line.strip()]
    pos = 12 + hlen
    seqs = []
    for i in range(header["count"]):
        code, d, t, label = _RECORD_HEADER.unpack_from(data, pos)
        pos += _RECORD_HEADER.size
        steps = np.frombuffer(data, dtype="<f4", count=t * d, offset=pos).reshape(t, d).astype(np.float64)
        pos += 4 * t * d
        meta = index[i] if i < len(index) else {}
        seqs.append(
            FeatureSequence(
                meta.get("video_id", ""),
                meta.get("start_frame", 0),
                meta.get("stop_frame", t),
                FeatureKind.from_code(code),
                steps,
                label,
                meta.get("noun", -1),
            )
        )
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return header, seqs
