"""Command-line interface.

Subcommands: ``gen-data`` (synthetic dataset), ``train`` (manifest to
checkpoint + metrics + loss figure), ``localize`` (checkpoint + manifest to
detections JSON + per-frame activation CSV), ``eval`` (detections + manifest
to report JSON/CSV + mAP figure), ``ablate`` (toggle grid to table + figure).

Exit codes: 0 success, 2 usage errors (bad flags, missing input files),
1 for anything the library itself rejects.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

__all__ = ["main", "build_parser"]


def _existing_file(value: str) -> Path:
    path = Path(value)
    if not path.is_file():
        raise argparse.ArgumentTypeError(f"file not found: {value}")
    return path


def _threshold_list(value: str) -> list[float]:
    try:
        out = [float(v) for v in value.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad threshold list: {value}") from exc
    if not out or not all(0.0 < t <= 1.0 for t in out):
        raise argparse.ArgumentTypeError("thresholds must lie in (0, 1]")
    return out


def _load_hyperparams(args) -> "Hyperparams":
    from .trainer import Hyperparams

    if getattr(args, "config", None) is not None:
        doc = json.loads(Path(args.config).read_text())
        hp = Hyperparams.from_json(doc)
    else:
        hp = Hyperparams()
    if getattr(args, "seed", None) is not None:
        hp = dataclasses.replace(hp, seed=args.seed)
    hp.validate()
    return hp


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    from .data import SynthConfig, generate_synthetic, save_manifest

    if args.config is not None:
        config = SynthConfig.from_json(json.loads(Path(args.config).read_text()))
    else:
        config = SynthConfig()
    if args.split is not None:
        config = dataclasses.replace(config, split=args.split)
    config.validate()
    manifest = generate_synthetic(config, seed=args.seed)
    out = _out_dir(args)
    save_manifest(manifest, out / "manifest.json", out / "features")
    n_gt = sum(len(v.gt) for v in manifest)
    print(
        f"wrote {len(manifest)} videos ({manifest.num_classes} classes, "
        f"{n_gt} action intervals) to {out / 'manifest.json'}"
    )
    return 0


def _cmd_train(args) -> int:
    from .data import load_manifest
    from .trainer import train

    hp = _load_hyperparams(args)
    manifest = load_manifest(args.manifest)
    val_manifest = load_manifest(args.val_manifest) if args.val_manifest else None
    out = _out_dir(args)

    def report(row):
        if not args.quiet:
            print(
                f"epoch {row['epoch']:3d}/{hp.epochs}  "
                f"loss {row['total']:8.4f}  accuracy {row['accuracy']:.3f}"
            )

    result = train(
        manifest,
        hp,
        val_manifest=val_manifest,
        out_dir=out,
        resume_from=args.resume,
        on_epoch=report,
    )
    if result.diverged:
        print(
            f"training diverged after epoch {result.checkpoint.epoch}; "
            f"checkpoint holds the last finished epoch",
            file=sys.stderr,
        )
        return 1
    print(f"saved checkpoint to {result.checkpoint_path}")
    return 0


def _cmd_localize(args) -> int:
    import csv

    from .attention import class_activation_matrix
    from .data import load_manifest
    from .localize import decode_detections, write_detections_json
    from .trainer import load_checkpoint

    checkpoint = load_checkpoint(args.checkpoint)
    hp = _load_hyperparams(args) if args.config else checkpoint.hp
    manifest = load_manifest(args.manifest)
    out = _out_dir(args)
    detections = []
    with open(out / "activations.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["video_id", "frame"]
            + [f"class_{c}" for c in range(1, manifest.num_classes + 1)]
            + ["background"]
        )
        for video in manifest:
            detections.extend(decode_detections(video, checkpoint.model, hp))
            cam = class_activation_matrix(video.features, checkpoint.model.classifier)
            for t in range(video.features.t_len):
                writer.writerow(
                    [video.video_id, t + 1] + [f"{v:.6f}" for v in cam[t]]
                )
    write_detections_json(detections, out / "detections.json")
    print(
        f"decoded {len(detections)} detections from {len(manifest)} videos "
        f"to {out / 'detections.json'}"
    )
    return 0


def _cmd_eval(args) -> int:
    from . import plots
    from .data import load_manifest
    from .localize import evaluate, read_detections_json, write_report_csv, write_report_json

    manifest = load_manifest(args.manifest)
    detections = read_detections_json(args.detections)
    report = evaluate(detections, manifest, args.thresholds)
    out = _out_dir(args)
    write_report_json(report, out / "report.json")
    write_report_csv(report, out / "report.csv")
    plots.render_map_curve(report, out / "map_vs_iou.png")
    for threshold, value in zip(report.thresholds, report.map_per_threshold):
        print(f"mAP@{threshold:g} = {value:.4f}")
    print(f"average mAP = {report.average_map:.4f}")
    if report.skipped_classes:
        print(f"classes without ground truth (skipped): {report.skipped_classes}")
    return 0


def _cmd_ablate(args) -> int:
    from .data import load_manifest
    from .trainer import ablate

    hp = _load_hyperparams(args)
    train_manifest = load_manifest(args.train_manifest)
    eval_manifest = load_manifest(args.eval_manifest)
    out = _out_dir(args)

    def report(row):
        if not args.quiet:
            print(
                f"{row.name:10s} adv={int(row.use_adv)} intra={int(row.use_intra)} "
                f"inter={int(row.use_inter)}  average mAP {row.average_map:.4f}  "
                f"accuracy {row.accuracy:.3f}"
            )

    ablate(
        train_manifest,
        eval_manifest,
        hp,
        thresholds=args.thresholds,
        out_dir=out,
        on_row=report,
    )
    print(f"wrote ablation table to {out / 'ablation.csv'}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shufloc",
        description=(
            "Weakly supervised temporal action localization over per-frame "
            "feature sequences: synthetic data, training, detection decoding, "
            "and mAP evaluation."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", type=_existing_file, help="generator config JSON")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--split", help="split name override (e.g. train, eval)")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset manifest")
    p.add_argument("--manifest", required=True, type=_existing_file)
    p.add_argument("--val-manifest", type=_existing_file)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", type=_existing_file, help="hyperparameter JSON")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--resume", type=_existing_file, help="checkpoint to resume from")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("localize", help="decode detections with a trained checkpoint")
    p.add_argument("--manifest", required=True, type=_existing_file)
    p.add_argument("--checkpoint", required=True, type=_existing_file)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", type=_existing_file, help="hyperparameter JSON override")
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--manifest", required=True, type=_existing_file)
    p.add_argument("--detections", required=True, type=_existing_file)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--thresholds",
        type=_threshold_list,
        default=[round(0.1 * k, 1) for k in range(1, 10)],
        help="comma-separated IoU thresholds (default 0.1..0.9)",
    )
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train/evaluate every toggle configuration")
    p.add_argument("--train-manifest", required=True, type=_existing_file)
    p.add_argument("--eval-manifest", required=True, type=_existing_file)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", type=_existing_file, help="hyperparameter JSON")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument(
        "--thresholds",
        type=_threshold_list,
        default=[round(0.1 * k, 1) for k in range(1, 10)],
        help="comma-separated IoU thresholds (default 0.1..0.9)",
    )
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point for module errors
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
