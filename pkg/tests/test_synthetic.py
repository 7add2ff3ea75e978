import numpy as np
import pytest

from egotrack.ingest import group_detections
from egotrack.pipeline import parallel_map, track_video, worker_count
from egotrack.synthetic import VERBS, make_dataset, right_hand_path


def test_dataset_is_reproducible():
    a, b = make_dataset(2, seed=5), make_dataset(2, seed=5)
    assert a.records == b.records and a.segments == b.segments
    assert make_dataset(2, seed=6).records != a.records


def test_one_video_per_sample():
    ds = make_dataset(3, seed=0, participant=4, prefix="Q")
    assert len(ds.segments) == 3 * len(VERBS)
    assert len({s.video_id for s in ds.segments}) == len(ds.segments)
    assert [s.verb_class for s in ds.segments[:4]] == [0, 1, 2, 3]
    assert {s.participant_id for s in ds.segments} == {4}


@pytest.mark.parametrize("verb", VERBS)
def test_paths_stay_right_of_midline(verb):
    rng = np.random.default_rng(0)
    for _ in range(50):
        path = right_hand_path(verb, 90, rng)
        assert path[:, 0].min() > 0.5
        assert 0 < path[:, 1].min() and path[:, 1].max() < 1


def test_unknown_verb():
    with pytest.raises(ValueError):
        right_hand_path("wave", 10, np.random.default_rng(0))


def test_dropout_rate_is_respected():
    ds = make_dataset(20, seed=1, dropout=0.1)
    frames = sum(s.num_frames for s in ds.segments)
    right = sum(1 for r in ds.records if r.box.x_min / 640 > 0.4)
    assert right / frames == pytest.approx(0.9, abs=0.02)


def test_right_hand_is_tracked_as_right():
    ds = make_dataset(5, seed=2)
    per_video = group_detections(ds.records)
    for seg in ds.segments:
        tl = track_video(seg.video_id, per_video[seg.video_id], seg.stop_frame).timeline
        detected = sum(p.provenance.value == "detected" for p in tl.right)
        assert detected >= 0.7 * seg.num_frames


def test_worker_count_respects_cap(monkeypatch):
    monkeypatch.setenv("EGO_TRACK_THREADS", "1")
    assert worker_count() == 1
    monkeypatch.delenv("EGO_TRACK_THREADS")
    assert worker_count() >= 1


def test_parallel_map_keeps_order(monkeypatch):
    monkeypatch.setenv("EGO_TRACK_THREADS", "4")
    assert parallel_map(lambda x: x * x, list(range(20))) == [x * x for x in range(20)]
