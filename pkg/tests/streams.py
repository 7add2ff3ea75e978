"""Scripted detection streams shared by tracker and acceptance tests."""

from egotrack.geometry import BBox

IMAGE_SIZE = (640, 360)


def constant_velocity_stream(num_frames=60, gap_start=20, gap=0, velocity=(3.0, 1.0)):
    """One box moving at constant velocity with ``gap`` frames removed."""
    frames = {}
    for f in range(num_frames):
        if gap_start <= f < gap_start + gap:
            continue
        frames[f] = [BBox(100, 100, 160, 170).translated(velocity[0] * f, velocity[1] * f)]
    return frames


def hand_stream():
    """Ten frames (1..10) of two hands with missed and spurious detections.

    The left hand is seen on every frame. The right hand is missed on
    frames 2-4 and 7, and on frame 9 a spurious right-side box appears far
    from the real one, starting a second right track.
    """
    frames = {}
    for f in range(1, 11):
        boxes = [BBox(120, 200, 200, 290).translated(2 * f, -f)]
        if f not in (2, 3, 4, 7):
            boxes.append(BBox(420, 180, 500, 270).translated(-3 * f, f))
        if f == 9:
            boxes.append(BBox(560, 20, 630, 90))
        frames[f] = boxes
    return frames
