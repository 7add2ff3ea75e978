import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from egotrack import cli
from egotrack.features import read_container, sample_sequence
from egotrack.geometry import BBox
from egotrack.ingest import DetectionRecord, dump_annotations, dump_detections, group_detections
from egotrack.seqmodel import load_checkpoint
from egotrack.synthetic import make_dataset
from egotrack.trackpost import read_timeline_csv

SVG = "{http://www.w3.org/2000/svg}"


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    train = make_dataset(3, seed=1, participant=1, prefix="A", frames=(30, 40))
    test = make_dataset(2, seed=2, participant=25, prefix="B", frames=(30, 40))
    records = train.records + test.records
    # a noun object on a few frames of the first video
    records += [DetectionRecord("A0000", f, 12, 0.8, BBox(300, 100, 340, 140), (640, 360)) for f in range(5, 9)]
    # below the confidence cut
    records.append(DetectionRecord("A0000", 3, 0, 0.2, BBox(0, 0, 30, 30), (640, 360)))
    dump_detections(group_detections(records), root / "det.jsonl")
    dump_annotations(train.segments + test.segments, root / "ann.csv")
    return root


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_full_pipeline(data, tmp_path, capsys):
    out = tmp_path / "out"
    det, ann = data / "det.jsonl", data / "ann.csv"
    assert run("track", "--detections", det, "--annotations", ann, "--out", out) == 0
    summary = json.loads((out / "track_summary.json").read_text())
    assert len(summary["videos"]) == 20
    assert summary["tracker"]["t_lost"] == 10
    assert (out / "timelines" / "A0000.csv").exists()

    assert run("featurize", "--annotations", ann, "--detections", det, "--kind", "lr-bpv", "--out", out) == 0
    header, seqs = read_container(out / "features" / "train_lr-bpv.bin")
    assert header["dim"] == 356 and len(seqs) == 12
    assert seqs[0].steps[5:9, 4 + 11].tolist() == [1.0] * 4

    assert run("featurize", "--annotations", ann, "--out", out) == 0
    assert run("train", "--epochs", "2", "--out", out, "--hidden", "16") == 0
    model, extra = load_checkpoint(out / "models" / "lr_32_h16.ckpt")
    assert model.config.hidden_units == 16 and model.config.seq_length == 32
    assert extra["train_counts"] == {"0": 3, "1": 3, "2": 3, "3": 3}
    assert (out / "models" / "lr_32_h16.history.csv").read_text().startswith("epoch,loss,top1,top5")

    capsys.readouterr()
    assert run("evaluate", "--out", out) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0].split(" | ")[0] == "#"
    report = json.loads((out / "reports" / "lr_32_h16.json").read_text())
    assert report["columns"][-1] == "Epoch"
    assert report["row"][2] == "LR" and report["row"][5] == "32"

    svg = tmp_path / "plot.svg"
    assert run("plot", "--timeline", out / "timelines" / "A0001.csv", "--svg", svg) == 0
    root = ET.parse(svg).getroot()
    groups = {g.get("id"): g for g in root.iter(SVG + "g")}
    assert set(groups) == {"full", "sampled"}
    tl = read_timeline_csv(out / "timelines" / "A0001.csv")
    ry = sample_sequence(np.array([p.position.y for p in tl.right]), 32)
    # sentinel steps are left out of the drawing
    assert len(groups["sampled"].findall(f"{SVG}circle[@class='right']")) == int((ry <= 1).sum()) > 0
    assert run("plot", "--features", out / "features" / "test_lr.bin", "--index", 1, "--sample", 0, "--svg", svg) == 0
    assert {g.get("id") for g in ET.parse(svg).getroot().iter(SVG + "g")} == {"full"}


def test_config_file_and_flag_precedence(data, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"t_lost": 3, "threshold": 0.5, "iou_min": 0.2}))
    out = tmp_path / "o"
    assert run("track", "--config", cfg, "--detections", data / "det.jsonl", "--t-lost", 7, "--out", out) == 0
    summary = json.loads((out / "track_summary.json").read_text())
    assert summary["tracker"]["t_lost"] == 7
    assert summary["tracker"]["iou_min"] == 0.2
    assert summary["threshold"] == 0.5


def test_detector_eval(tmp_path, capsys):
    gt = [DetectionRecord("img", f, 0, 1.0, BBox(10, 10, 50, 50), (64, 64)) for f in range(3)]
    pred = gt + [DetectionRecord("img", 0, 0, 0.4, BBox(0, 30, 9, 60), (64, 64))]
    empty_pred = [DetectionRecord("neg", 0, 0, 0.9, BBox(1, 1, 9, 9), (64, 64))]
    dump_detections(group_detections(gt), tmp_path / "gt.jsonl")
    dump_detections(group_detections(pred), tmp_path / "pred.jsonl")
    dump_detections(group_detections(empty_pred), tmp_path / "neg_pred.jsonl")
    (tmp_path / "neg_gt.jsonl").write_text("")
    code = run(
        "detector-eval",
        "--gt", f"hands={tmp_path / 'gt.jsonl'}",
        "--gt", f"negatives={tmp_path / 'neg_gt.jsonl'}",
        "--pred", f"combined:hands={tmp_path / 'pred.jsonl'}",
        "--pred", f"combined:negatives={tmp_path / 'neg_pred.jsonl'}",
        "--out", tmp_path,
    )
    assert code == 0
    payload = json.loads((tmp_path / "detector_eval.json").read_text())
    cell = payload["matrix"]["combined"]["hands"]
    assert (cell["ap"], cell["fdr"], cell["tp"], cell["fp"]) == (100.0, 25.0, 3, 1)
    assert payload["matrix"]["combined"]["negatives"]["fp"] == 1
    row = capsys.readouterr().out.splitlines()[-1]
    assert [c.strip() for c in row.split("|")] == ["combined", "100.00 (25)", "1"]


def test_min_confidence_filters_predictions(tmp_path):
    gt = [DetectionRecord("img", 0, 0, 1.0, BBox(10, 10, 50, 50), (64, 64))]
    pred = gt + [DetectionRecord("img", 0, 0, 0.3, BBox(0, 30, 9, 60), (64, 64))]
    dump_detections(group_detections(gt), tmp_path / "gt.jsonl")
    dump_detections(group_detections(pred), tmp_path / "pred.jsonl")
    args = ["detector-eval", "--gt", f"g={tmp_path / 'gt.jsonl'}", "--pred", f"m={tmp_path / 'pred.jsonl'}", "--out", tmp_path]
    assert run(*args) == 0
    assert json.loads((tmp_path / "detector_eval.json").read_text())["matrix"]["m"]["g"]["fp"] == 1
    assert run(*args, "--min-confidence", 0.5) == 0
    assert json.loads((tmp_path / "detector_eval.json").read_text())["matrix"]["m"]["g"]["fp"] == 0


def test_errors_exit_nonzero(tmp_path, capsys):
    assert run("track", "--out", tmp_path) == 1
    assert "--detections" in capsys.readouterr().err
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json}\n")
    assert run("track", "--detections", bad, "--out", tmp_path) == 1
    assert "bad.jsonl:1" in capsys.readouterr().err
    assert run("evaluate", "--out", tmp_path / "missing") == 1
    assert run("plot", "--out", tmp_path) == 1
    with pytest.raises(SystemExit):
        run("train", "--hidden", "64")
