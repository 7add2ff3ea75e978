"""``egotrack`` command line: track, featurize, train, evaluate, detector-eval, plot.

Options can come from a JSON file given with ``--config``; keys use the
long option names with dashes replaced by underscores. Flags given on the
command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional

from egotrack import evaluation, pipeline
from egotrack.features import FeatureKind, read_container, sample_sequence
from egotrack.ingest import DEFAULT_CONFIDENCE_THRESHOLD, IngestError
from egotrack.plotting import render_svg
from egotrack.seqmodel import CLRConfig, TrainConfig
from egotrack.tracker import TrackerConfig
from egotrack.trackpost import read_timeline_csv

DEFAULTS: dict[str, Any] = {
    "out": "out",
    "seed": 0,
    "deterministic": False,
    "threshold": DEFAULT_CONFIDENCE_THRESHOLD,
    "iou_min": 0.10,
    "t_lost": 10,
    "t_min": 1,
    "kind": "lr",
    "seq": "32",
    "hidden": 16,
    "epochs": 1000,
    "batch_size": 128,
    "base_lr": 1e-3,
    "max_lr": 1e-1,
    "cycle_epochs": 20.0,
    "half_cycle": False,
    "momentum": 0.0,
    "iou": evaluation.DETECTION_IOU,
    "eleven_point": False,
    "sample": 32,
    "min_train": evaluation.MIN_TRAIN_SAMPLES,
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with option defaults")
    p.add_argument("--out", type=Path, help="output directory (default: out)")
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true", default=None)


def _tracker_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threshold", type=float, help="confidence cut, strict > (default 0.25)")
    p.add_argument("--iou-min", type=float)
    p.add_argument("--t-lost", type=int)
    p.add_argument("--t-min", type=int)


def _model_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kind", choices=[k.value for k in FeatureKind])
    p.add_argument("--seq", choices=["full", "32"])
    p.add_argument("--hidden", type=int, choices=[16, 32])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egotrack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="track hands and write timelines")
    _common(p)
    _tracker_opts(p)
    p.add_argument("--detections", type=Path)
    p.add_argument("--annotations", type=Path, help="extends timelines to annotated segment ends")

    p = sub.add_parser("featurize", help="build feature containers per split")
    _common(p)
    _tracker_opts(p)
    p.add_argument("--detections", type=Path)
    p.add_argument("--annotations", type=Path)
    p.add_argument("--splits", type=Path)
    p.add_argument("--kind", choices=[k.value for k in FeatureKind])

    p = sub.add_parser("train", help="train the sequence classifier")
    _common(p)
    _model_opts(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--base-lr", type=float)
    p.add_argument("--max-lr", type=float)
    p.add_argument("--cycle-epochs", type=float)
    p.add_argument("--half-cycle", action="store_true", default=None, help="read cycle-epochs as a half cycle")
    p.add_argument("--momentum", type=float)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    _common(p)
    _model_opts(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--min-train", type=int)

    p = sub.add_parser("detector-eval", help="AP / FDR of detector outputs")
    _common(p)
    p.add_argument("--gt", action="append", metavar="TESTSET=PATH", help="ground truth per test set")
    p.add_argument("--pred", action="append", metavar="MODEL:TESTSET=PATH", help="predictions of a model on a test set")
    p.add_argument("--iou", type=float)
    p.add_argument("--min-confidence", type=float, help="optional confidence cut on predictions, strict >")
    p.add_argument("--eleven-point", action="store_true", default=None)

    p = sub.add_parser("plot", help="render hand trajectories as SVG")
    _common(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--timeline", type=Path)
    src.add_argument("--features", type=Path)
    p.add_argument("--index", type=int, default=0, help="sequence index inside --features")
    p.add_argument("--start", type=int)
    p.add_argument("--stop", type=int)
    p.add_argument("--sample", type=int, help="length of the sampled panel, 0 to omit")
    p.add_argument("--svg", type=Path, help="output file (default: <out>/plot.svg)")
    return parser


def resolve(args: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults < config file < command-line flags."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            opts.update(json.load(fh))
    for key, value in vars(args).items():
        if value is not None:
            opts[key] = value
    return opts


def _require(opts: dict, *keys: str) -> None:
    missing = [k for k in keys if not opts.get(k)]
    if missing:
        raise ValueError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _tracker_config(opts: dict) -> TrackerConfig:
    return TrackerConfig(iou_min=float(opts["iou_min"]), t_lost=int(opts["t_lost"]), t_min=int(opts["t_min"]))


def _seq_length(opts: dict) -> Optional[int]:
    return None if str(opts["seq"]) == "full" else int(opts["seq"])


def cmd_track(opts: dict) -> int:
    _require(opts, "detections")
    summary = pipeline.run_track(
        opts["detections"], opts["out"], opts.get("annotations"), float(opts["threshold"]), _tracker_config(opts), int(opts["seed"])
    )
    print(f"videos: {len(summary['videos'])}  tracks: {summary['total_tracks']}")
    for vid, info in summary["videos"].items():
        sf = info["sentinel_fraction"]
        print(f"  {vid}: frames={info['frames']} tracks={info['kept_tracks']} sentinel L={sf['left']:.3f} R={sf['right']:.3f}")
    return 0


def cmd_featurize(opts: dict) -> int:
    _require(opts, "annotations")
    kind = FeatureKind(opts["kind"])
    res = pipeline.run_featurize(
        opts["out"],
        opts["annotations"],
        kind,
        opts.get("detections"),
        opts.get("splits"),
        float(opts["threshold"]),
        _tracker_config(opts),
        int(opts["seed"]),
    )
    for split, n in res.counts.items():
        print(f"{split}: {n} sequences ({kind.value}, D={kind.dim()}) -> {res.paths[split]}")
    if res.skipped:
        print(f"skipped {res.skipped} segment(s) outside tracked range")
    return 0


def cmd_train(opts: dict) -> int:
    kind = FeatureKind(opts["kind"])
    clr_cfg = CLRConfig(
        base_lr=float(opts["base_lr"]),
        max_lr=float(opts["max_lr"]),
        cycle_epochs=float(opts["cycle_epochs"]),
        full_cycle=not opts["half_cycle"],
    )
    train_cfg = TrainConfig(
        batch_size=int(opts["batch_size"]), epochs=int(opts["epochs"]), seed=int(opts["seed"]), momentum=float(opts["momentum"])
    )

    def progress(rec):
        logging.getLogger("egotrack").info(
            "epoch %d loss %.4f top1 %.2f top5 %.2f lr %.4g", rec.epoch, rec.loss, rec.top1, rec.top5, rec.lr
        )

    result, ckpt = pipeline.run_train(
        opts["out"], kind, _seq_length(opts), int(opts["hidden"]), clr_cfg, train_cfg, log_fn=progress
    )
    best = result.history[result.best_epoch - 1] if result.best_epoch else None
    if best is not None:
        print(f"best epoch {best.epoch}: top1 {best.top1:.3f} top5 {best.top5:.3f}")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_evaluate(opts: dict) -> int:
    kind = FeatureKind(opts["kind"])
    _, table = pipeline.run_evaluate(
        opts["out"], kind, _seq_length(opts), int(opts["hidden"]), opts.get("checkpoint"), int(opts["min_train"])
    )
    print(table, end="")
    return 0


def _split_assignment(text: str) -> tuple[str, str]:
    name, sep, path = text.partition("=")
    if not sep or not name or not path:
        raise ValueError(f"expected NAME=PATH, got {text!r}")
    return name, path


def cmd_detector_eval(opts: dict) -> int:
    _require(opts, "gt", "pred")
    gts = [_split_assignment(t) for t in opts["gt"]]
    preds = []
    for text in opts["pred"]:
        key, path = _split_assignment(text)
        model, sep, testset = key.partition(":")
        if not sep:
            if len(gts) != 1:
                raise ValueError(f"--pred {text!r} must name its test set as MODEL:TESTSET")
            testset = gts[0][0]
        preds.append((model, testset, path))
    payload, table = pipeline.run_detector_eval(
        preds, gts, float(opts["iou"]), opts.get("min_confidence"), bool(opts["eleven_point"])
    )
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "detector_eval.json").write_text(evaluation.dumps_json(payload), encoding="utf-8")
    (out / "detector_eval.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def cmd_plot(opts: dict) -> int:
    import numpy as np

    if opts.get("timeline"):
        tl = read_timeline_csv(opts["timeline"])
        coords = np.array(
            [(lp.position.x, lp.position.y, rp.position.x, rp.position.y) for lp, rp in zip(tl.left, tl.right)]
        ).reshape(-1, 4)
        title = tl.video_id
    elif opts.get("features"):
        _, seqs = read_container(opts["features"])
        if not 0 <= opts["index"] < len(seqs):
            raise ValueError(f"--index {opts['index']} outside container of {len(seqs)} sequences")
        fs = seqs[opts["index"]]
        coords = fs.steps[:, :4]
        title = f"{fs.video_id} [{fs.start_frame}, {fs.stop_frame}) verb {fs.label}"
    else:
        raise ValueError("one of --timeline or --features is required")
    coords = coords[opts.get("start") : opts.get("stop")]
    n = int(opts["sample"])
    sampled = sample_sequence(coords, n) if n > 0 and len(coords) else None
    svg_path = Path(opts["svg"]) if opts.get("svg") else Path(opts["out"]) / "plot.svg"
    svg_path.parent.mkdir(parents=True, exist_ok=True)
    svg_path.write_text(render_svg(coords, sampled, title), encoding="utf-8")
    print(f"wrote {svg_path}")
    return 0


COMMANDS = {
    "track": cmd_track,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "detector-eval": cmd_detector_eval,
    "plot": cmd_plot,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except (IngestError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
