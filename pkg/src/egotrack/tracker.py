"""Tracking-by-detection of a single-class box stream (SORT-style).

Every frame: predict live tracks with the Kalman filter, associate
detections by minimum ``1 - IoU`` assignment, gate pairs under
``iou_min``, spawn tracks from leftovers and finalize tracks that went more
than ``t_lost`` frames without a detection.
"""

from __future__ import annotations

import enum
import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from egotrack import kalman
from egotrack.assignment import assign
from egotrack.geometry import BBox, Point, center, iou


@dataclass(frozen=True)
class TrackerConfig:
    iou_min: float = 0.10
    t_lost: int = 10
    t_min: int = 1
    noise: kalman.KalmanNoise = field(default_factory=kalman.KalmanNoise)

    def __post_init__(self):
        if not 0.0 < self.iou_min < 1.0:
            raise ValueError(f"iou_min must lie in (0, 1), got {self.iou_min}")
        if self.t_lost < 0:
            raise ValueError(f"t_lost must be >= 0, got {self.t_lost}")
        if self.t_min < 1:
            raise ValueError(f"t_min must be >= 1, got {self.t_min}")


class TrackStatus(str, enum.Enum):
    TENTATIVE = "tentative"
    ACTIVE = "active"
    FINALIZED = "finalized"


class Provenance(str, enum.Enum):
    DETECTED = "detected"
    INTERPOLATED = "interpolated"
    SENTINEL = "sentinel"


@dataclass(frozen=True)
class TrackPoint:
    frame: int
    center: Point
    provenance: Provenance = Provenance.DETECTED
    # interpolated points carry no box
    box: Optional[BBox] = None


@dataclass
class Track:
    id: int
    points: list[TrackPoint]
    state: Optional[kalman.KalmanState] = None
    frames_since_update: int = 0
    hit_streak: int = 0
    status: TrackStatus = TrackStatus.TENTATIVE

    @property
    def first_frame(self) -> int:
        return self.points[0].frame

    @property
    def last_frame(self) -> int:
        return self.points[-1].frame

    @property
    def frames(self) -> list[int]:
        return [p.frame for p in self.points]

    @property
    def detected_count(self) -> int:
        return sum(1 for p in self.points if p.provenance is Provenance.DETECTED)

    def detected_points(self) -> list[TrackPoint]:
        return [p for p in self.points if p.provenance is Provenance.DETECTED]


class Tracker:
    """Stateful tracker for one (video, class) stream.

    Frames must be stepped in strictly increasing order; skipped frames are
    coasted through and count toward ``t_lost``.
    """

    def __init__(self, config: TrackerConfig = TrackerConfig()):
        self.config = config
        self.live: list[Track] = []
        self.finished: list[Track] = []
        self.last_frame: Optional[int] = None
        self._next_id = 0

    def _spawn(self, frame: int, box: BBox) -> Track:
        track = Track(
            id=self._next_id,
            points=[TrackPoint(frame, center(box), Provenance.DETECTED, box)],
            state=kalman.initiate(box, self.config.noise),
            hit_streak=1,
        )
        self._next_id += 1
        if track.hit_streak >= self.config.t_min:
            track.status = TrackStatus.ACTIVE
        return track

    def step(self, frame: int, detections: Sequence[BBox]) -> list[Track]:
        """Advance to ``frame`` with its detections; returns the active live tracks."""
        if self.last_frame is not None and frame <= self.last_frame:
            raise ValueError(f"frame {frame} does not follow frame {self.last_frame}")
        gap = 1 if self.last_frame is None else frame - self.last_frame
        self.last_frame = frame
        cfg = self.config

        # tracks that would have been finalized on a skipped frame
        survivors = []
        for track in self.live:
            if track.frames_since_update + gap - 1 > cfg.t_lost:
                self._finalize(track)
            else:
                survivors.append(track)
        self.live = survivors

        predicted: list[Optional[BBox]] = []
        for track in self.live:
            for _ in range(gap):
                track.state, _ = kalman.predict(track.state, cfg.noise)
            track.frames_since_update += gap
            if track.frames_since_update > 1:
                track.hit_streak = 0
            try:
                predicted.append(kalman.measurement_to_box(track.state.mean))
            except ValueError:
                predicted.append(None)

        cost = np.ones((len(self.live), len(detections)))
        for i, pbox in enumerate(predicted):
            if pbox is None:
                continue
            for j, det in enumerate(detections):
                cost[i, j] = 1.0 - iou(pbox, det)

        matched_tracks: set[int] = set()
        matched_dets: set[int] = set()
        for i, j in assign(cost):
            if 1.0 - cost[i, j] < cfg.iou_min:
                continue
            track = self.live[i]
            det = detections[j]
            track.state = kalman.update(track.state, det, cfg.noise)
            track.points.append(TrackPoint(frame, center(det), Provenance.DETECTED, det))
            track.frames_since_update = 0
            track.hit_streak += 1
            if track.status is TrackStatus.TENTATIVE and track.hit_streak >= cfg.t_min:
                track.status = TrackStatus.ACTIVE
            matched_tracks.add(i)
            matched_dets.add(j)

        for j, det in enumerate(detections):
            if j not in matched_dets:
                self.live.append(self._spawn(frame, det))

        still_live = []
        for track in self.live:
            if track.frames_since_update > cfg.t_lost:
                self._finalize(track)
            else:
                still_live.append(track)
        self.live = still_live
        return [t for t in self.live if t.status is TrackStatus.ACTIVE]

    def _finalize(self, track: Track) -> None:
        was_active = track.status is TrackStatus.ACTIVE
        track.status = TrackStatus.FINALIZED
        # tracks that never reached t_min detections are dropped
        if was_active:
            self.finished.append(track)

    def close(self) -> list[Track]:
        """Finalize every live track and return all tracks in id order."""
        for track in self.live:
            self._finalize(track)
        self.live = []
        return sorted(self.finished, key=lambda t: t.id)


def run_tracker(
    frames: Mapping[int, Iterable[BBox]], config: TrackerConfig = TrackerConfig()
) -> list[Track]:
    """Track a whole stream given as ``frame -> boxes``; frames may be sparse."""
    tracker = Tracker(config)
    for frame in sorted(frames):
        tracker.step(frame, list(frames[frame]))
    return tracker.close()


def track_records_json(video_id: str, tracks: Iterable[Track]) -> list[str]:
    """Render tracks as JSONL lines, one per point, ordered by track then frame."""
    lines = []
    for track in sorted(tracks, key=lambda t: t.id):
        for p in track.points:
            box = p.box.as_tuple() if p.box is not None else (None, None, None, None)
            lines.append(
                json.dumps(
                    {
                        "video_id": video_id,
                        "track_id": track.id,
                        "frame": p.frame,
                        "x1": box[0],
                        "y1": box[1],
                        "x2": box[2],
                        "y2": box[3],
                        "provenance": p.provenance.value,
                    }
                )
            )
    return lines
