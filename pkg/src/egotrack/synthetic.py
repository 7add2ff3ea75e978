"""Synthetic hand-detection streams for four easily separable verbs.

Each sample is its own short video. The right hand performs the verb's
motion while the left hand idles (or is out of view). Centers get Gaussian
jitter in normalized units and every detection is dropped independently
with probability ``dropout``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from egotrack.geometry import BBox
from egotrack.ingest import ActionSegment, DetectionRecord

VERBS = ("sweep", "stir", "put", "static")
IMAGE_SIZE = (640, 360)
BOX_SIZE = (0.12, 0.18)


@dataclass
class SyntheticSet:
    records: list[DetectionRecord]
    segments: list[ActionSegment]


def right_hand_path(verb: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """Noise-free normalized right-hand centers, shape ``(n, 2)``."""
    s = np.linspace(0.0, 1.0, n)
    # keep every path right of the midline so side assignment stays stable
    cx, cy = 0.75 + rng.uniform(-0.03, 0.03), 0.55 + rng.uniform(-0.05, 0.05)
    if verb == "sweep":
        # one direction only: a two-way sweep ends on either side of a
        # static hand, which traps the read-out in a 3-of-4 plateau
        x = cx + (s - 0.5) * 0.36
        y = np.full(n, cy)
    elif verb == "stir":
        turns = rng.uniform(1.5, 2.5)
        phase = rng.uniform(0, 2 * math.pi)
        x = cx + 0.15 * np.cos(phase + 2 * math.pi * turns * s)
        y = cy + 0.15 * np.sin(phase + 2 * math.pi * turns * s)
    elif verb == "put":
        x = np.full(n, cx)
        y = cy - 0.3 + 0.6 * s
    elif verb == "static":
        x = np.full(n, cx)
        y = np.full(n, cy)
    else:
        raise ValueError(f"unknown verb {verb!r}")
    return np.stack([x, y], axis=1)


def _box(cx: float, cy: float) -> BBox:
    w, h = IMAGE_SIZE
    bw, bh = BOX_SIZE
    return BBox((cx - bw / 2) * w, (cy - bh / 2) * h, (cx + bw / 2) * w, (cy + bh / 2) * h)


def render_sample(
    video_id: str,
    verb_index: int,
    num_frames: int,
    rng: np.random.Generator,
    jitter: float = 0.01,
    dropout: float = 0.1,
) -> list[DetectionRecord]:
    right = right_hand_path(VERBS[verb_index], num_frames, rng)
    right = right + rng.normal(0.0, jitter, right.shape)
    left_visible = rng.random() < 0.7
    lx, ly = 0.3 + rng.uniform(-0.05, 0.05), 0.65 + rng.uniform(-0.05, 0.05)
    records = []
    for f in range(num_frames):
        hands = [(right[f, 0], right[f, 1])]
        if left_visible:
            hands.append((lx + rng.normal(0, jitter), ly + rng.normal(0, jitter)))
        for cx, cy in hands:
            if rng.random() < dropout:
                continue
            records.append(
                DetectionRecord(video_id, f, 0, float(rng.uniform(0.5, 1.0)), _box(cx, cy), IMAGE_SIZE)
            )
    return records


def make_dataset(
    per_class: int,
    seed: int = 0,
    participant: int = 1,
    prefix: str = "S",
    jitter: float = 0.01,
    dropout: float = 0.1,
    frames: tuple[int, int] = (60, 120),
) -> SyntheticSet:
    """``per_class`` samples of every verb, one video per sample."""
    rng = np.random.default_rng(seed)
    records, segments = [], []
    k = 0
    for _ in range(per_class):
        for verb in range(len(VERBS)):
            vid = f"{prefix}{k:04d}"
            k += 1
            n = int(rng.integers(frames[0], frames[1] + 1))
            records += render_sample(vid, verb, n, rng, jitter, dropout)
            segments.append(ActionSegment(vid, participant, 0, n, verb, 0))
    return SyntheticSet(records, segments)
