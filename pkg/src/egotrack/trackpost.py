"""Turn raw hand tracks into a dense per-frame left/right timeline."""

from __future__ import annotations

import csv
import enum
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Union

from egotrack.geometry import Point, normalize
from egotrack.tracker import Provenance, Track, TrackPoint

SENTINEL_LEFT = Point(0.25, 1.5)
SENTINEL_RIGHT = Point(0.75, 1.5)


class HandSide(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class TimelinePoint:
    frame: int
    position: Point
    provenance: Provenance


@dataclass
class HandTimeline:
    video_id: str
    left: list[TimelinePoint]
    right: list[TimelinePoint]
    sentinel_left: Point = SENTINEL_LEFT
    sentinel_right: Point = SENTINEL_RIGHT

    def __len__(self) -> int:
        return len(self.left)

    def side(self, side: HandSide) -> list[TimelinePoint]:
        return self.left if side is HandSide.LEFT else self.right

    def provenance_fractions(self, side: HandSide) -> dict[str, float]:
        points = self.side(side)
        if not points:
            return {p.value: 0.0 for p in Provenance}
        counts = {p.value: 0 for p in Provenance}
        for pt in points:
            counts[pt.provenance.value] += 1
        return {k: v / len(points) for k, v in counts.items()}


def interpolate_track(track: Track) -> Track:
    """Fill every frame between consecutive detections with a linearly
    interpolated center. Endpoints and detected points are left untouched."""
    detected = sorted(track.detected_points(), key=lambda p: p.frame)
    if len(detected) < 2:
        return replace(track, points=list(detected))
    points: list[TrackPoint] = [detected[0]]
    for a, b in zip(detected, detected[1:]):
        span = b.frame - a.frame
        for f in range(a.frame + 1, b.frame):
            t = (f - a.frame) / span
            c = Point(
                a.center.x + t * (b.center.x - a.center.x),
                a.center.y + t * (b.center.y - a.center.y),
            )
            points.append(TrackPoint(f, c, Provenance.INTERPOLATED))
        points.append(b)
    return replace(track, points=points)


def assign_hand_side(track: Track, frame_width: float) -> HandSide:
    """Left when the first detected center lies left of the frame midpoint.

    A center exactly on the midpoint goes to the right hand.
    """
    first = min(track.detected_points(), key=lambda p: p.frame)
    return HandSide.LEFT if first.center.x < frame_width / 2.0 else HandSide.RIGHT


def _trim_to_detections(points: list[TrackPoint]) -> list[TrackPoint]:
    det_idx = [i for i, p in enumerate(points) if p.provenance is Provenance.DETECTED]
    if not det_idx:
        return []
    return points[det_idx[0] : det_idx[-1] + 1]


def eliminate_overlaps(
    tracks: Sequence[tuple[Track, HandSide]]
) -> list[tuple[Track, HandSide]]:
    """Resolve temporally overlapping tracks of the same hand.

    Tracks are ranked by detected-point count (ties: lower id first). A
    lower-ranked track loses every frame already claimed by a higher-ranked
    track of its side; what is left outside the conflict is kept, trimmed so
    it starts and ends on a detection. Tracks left without detections vanish.
    """
    ranked = sorted(tracks, key=lambda ts: (-ts[0].detected_count, ts[0].id))
    claimed: dict[HandSide, set[int]] = {HandSide.LEFT: set(), HandSide.RIGHT: set()}
    kept: list[tuple[Track, HandSide]] = []
    for track, side in ranked:
        taken = claimed[side]
        points = [p for p in track.points if p.frame not in taken]
        if len(points) != len(track.points):
            points = _trim_to_detections(points)
        if not points:
            continue
        taken.update(p.frame for p in points)
        kept.append((replace(track, points=points), side))
    return sorted(kept, key=lambda ts: ts[0].id)


def build_timeline(
    video_id: str,
    tracks: Iterable[tuple[Track, HandSide]],
    num_frames: int,
    image_size: tuple[float, float],
) -> HandTimeline:
    """Dense timeline over frames ``[0, num_frames)`` with normalized centers.

    Frames not covered by a track of a side get that side's sentinel.
    """
    width, height = image_size
    by_side: dict[HandSide, dict[int, TrackPoint]] = {HandSide.LEFT: {}, HandSide.RIGHT: {}}
    for track, side in tracks:
        for p in track.points:
            if p.frame >= num_frames:
                raise ValueError(f"track {track.id} reaches frame {p.frame} >= num_frames {num_frames}")
            if p.frame in by_side[side]:
                raise ValueError(f"two {side.value} tracks cover frame {p.frame}; eliminate overlaps first")
            by_side[side][p.frame] = p

    def column(side: HandSide, sentinel: Point) -> list[TimelinePoint]:
        out = []
        for f in range(num_frames):
            p = by_side[side].get(f)
            if p is None:
                out.append(TimelinePoint(f, sentinel, Provenance.SENTINEL))
            else:
                out.append(TimelinePoint(f, normalize(p.center, width, height), p.provenance))
        return out

    return HandTimeline(
        video_id,
        left=column(HandSide.LEFT, SENTINEL_LEFT),
        right=column(HandSide.RIGHT, SENTINEL_RIGHT),
    )


def process_hand_tracks(
    video_id: str,
    tracks: Iterable[Track],
    num_frames: int,
    image_size: tuple[float, float],
) -> tuple[list[tuple[Track, HandSide]], HandTimeline]:
    """Interpolate, side and de-overlap raw tracks, then build the timeline."""
    sided = [(interpolate_track(t), assign_hand_side(t, image_size[0])) for t in tracks if t.detected_count]
    kept = eliminate_overlaps(sided)
    return kept, build_timeline(video_id, kept, num_frames, image_size)


TIMELINE_HEADER = ["frame", "left_x", "left_y", "left_src", "right_x", "right_y", "right_src"]


def write_timeline_csv(timeline: HandTimeline, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TIMELINE_HEADER)
        for lp, rp in zip(timeline.left, timeline.right):
            writer.writerow(
                [
                    lp.frame,
                    repr(lp.position.x),
                    repr(lp.position.y),
                    lp.provenance.value,
                    repr(rp.position.x),
                    repr(rp.position.y),
                    rp.provenance.value,
                ]
            )


def read_timeline_csv(path: Union[str, Path], video_id: str = "") -> HandTimeline:
    left, right = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for expected, row in enumerate(reader):
            frame = int(row["frame"])
            if frame != expected:
                raise ValueError(f"{path}: frames not contiguous at {frame}")
            left.append(
                TimelinePoint(frame, Point(float(row["left_x"]), float(row["left_y"])), Provenance(row["left_src"]))
            )
            right.append(
                TimelinePoint(frame, Point(float(row["right_x"]), float(row["right_y"])), Provenance(row["right_src"]))
            )
    return HandTimeline(video_id or Path(path).stem, left, right)

