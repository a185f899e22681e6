"""Detection decoding and localization scoring.

Decoding thresholds each selected class's smoothed activation profile into
runs; scoring ranks detections by confidence and greedily matches them to
ground-truth intervals at an IoU threshold, yielding per-class average
precision and mAP.

Intervals are half-open 1-based ``[start, stop)`` in memory; JSON files store
inclusive ends (``end = stop - 1``), matching the dataset manifest format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ndtensor as nd
from .attention import class_activation_matrix, segment_by_attention, select_classes, video_class_probs
from .data import DatasetManifest, VideoRecord
from .model import Model
from .ndtensor import Tensor

__all__ = [
    "Detection",
    "EvalReport",
    "DetectionFileError",
    "iou",
    "merge_runs",
    "decode_detections",
    "decode_dataset",
    "average_precision",
    "evaluate",
    "write_detections_json",
    "read_detections_json",
    "write_report_json",
    "write_report_csv",
]


class DetectionFileError(ValueError):
    """Detections JSON is malformed."""


@dataclass(frozen=True)
class Detection:
    """One scored class-labeled interval, half-open [start, stop).

    ``probs`` is the mean per-frame class distribution over the interval
    (length C+1, background last); ``score`` is the mean smoothed activation
    of ``class_id`` and lives in [0, 1].
    """

    video_id: str
    class_id: int
    start: int
    stop: int
    score: float
    probs: tuple[float, ...] = ()

    def __post_init__(self):
        if self.class_id < 1:
            raise ValueError(f"Detection: class_id must be >= 1, got {self.class_id}")
        if not (1 <= self.start < self.stop):
            raise ValueError(f"Detection: bad interval [{self.start}, {self.stop})")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"Detection: score must be in [0, 1], got {self.score}")


def iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    """Intersection over union of two half-open intervals."""
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


def merge_runs(runs: list[tuple[int, int]], max_gap: int) -> list[tuple[int, int]]:
    """Bridge consecutive half-open runs separated by at most ``max_gap``."""
    if max_gap < 0:
        raise ValueError(f"merge_runs: max_gap must be >= 0, got {max_gap}")
    merged: list[tuple[int, int]] = []
    for start, stop in runs:
        if merged and start - merged[-1][1] <= max_gap:
            merged[-1] = (merged[-1][0], stop)
        else:
            merged.append((start, stop))
    return merged


def decode_detections(video: VideoRecord, model: Model, hp) -> list[Detection]:
    """Scored intervals for every class the video-level prediction selects.

    For each selected class, the class's activation column is smoothed and
    thresholded (``tau_loc`` times the column maximum in relative mode, the
    raw value in absolute mode); runs of at least ``min_seg_len`` frames,
    after bridging gaps of at most ``merge_gap`` frames, become detections
    scored by their mean smoothed activation.
    """
    probs = video_class_probs(video.features, model.attention, model.classifier, eps=hp.pool_eps)
    selected = select_classes(probs, model.num_classes)
    if not selected:
        return []
    cam = class_activation_matrix(video.features, model.classifier)
    detections: list[Detection] = []
    for class_id in selected:
        column = cam[:, class_id - 1]
        signal = nd.gaussian_smooth_1d(Tensor(column), hp.sigma_smooth).values
        peak = float(signal.max())
        if peak <= 0.0:
            continue
        threshold = hp.tau_loc * peak if hp.tau_loc_mode == "relative" else hp.tau_loc
        runs = segment_by_attention(signal, threshold, 1).actions
        for start, stop in merge_runs(runs, hp.merge_gap):
            if stop - start < hp.min_seg_len:
                continue
            score = min(max(float(signal[start - 1 : stop - 1].mean()), 0.0), 1.0)
            probs = tuple(float(v) for v in cam[start - 1 : stop - 1].mean(axis=0))
            detections.append(
                Detection(video.video_id, class_id, start, stop, score, probs)
            )
    return detections


def decode_dataset(manifest: DatasetManifest, model: Model, hp) -> list[Detection]:
    """Detections for every video in the manifest, in manifest order."""
    out: list[Detection] = []
    for video in manifest:
        out.extend(decode_detections(video, model, hp))
    return out


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def average_precision(
    detections: list[Detection],
    ground_truths: list[tuple[str, int, int]],
    iou_threshold: float,
) -> float:
    """AP for one class over the whole dataset.

    Detections are ranked by descending score with deterministic tie-breaking
    (video id, then interval). Each one greedily claims the unmatched
    same-video ground truth with the strictly highest IoU; the claim counts as
    a true positive when that IoU meets the threshold. AP sums precision at
    the true-positive ranks and divides by the ground-truth count.
    """
    if not ground_truths:
        raise ValueError("average_precision: no ground truths for this class")
    ranked = sorted(detections, key=lambda d: (-d.score, d.video_id, d.start, d.stop))
    matched = [False] * len(ground_truths)
    ap = 0.0
    tp = 0
    for rank, det in enumerate(ranked, start=1):
        best_j = -1
        best_iou = 0.0
        for j, (vid, gstart, gstop) in enumerate(ground_truths):
            if vid != det.video_id or matched[j]:
                continue
            ov = iou((det.start, det.stop), (gstart, gstop))
            if ov > best_iou:
                best_iou = ov
                best_j = j
        if best_j >= 0 and best_iou >= iou_threshold:
            matched[best_j] = True
            tp += 1
            ap += tp / rank
    return ap / len(ground_truths)


@dataclass
class EvalReport:
    """Per-class AP at each IoU threshold plus mAP summaries."""

    thresholds: list[float]
    per_class: dict[int, list[float]]
    gt_counts: dict[int, int]
    skipped_classes: list[int]
    map_per_threshold: list[float]
    average_map: float


def evaluate(
    detections: list[Detection],
    manifest: DatasetManifest,
    thresholds: list[float],
) -> EvalReport:
    """Score detections against the manifest's ground truth.

    Classes with no ground truth anywhere are skipped (recorded, excluded
    from mAP). mAP at each threshold is the mean AP over scored classes.
    """
    if not thresholds:
        raise ValueError("evaluate: no IoU thresholds given")
    by_class: dict[int, list[Detection]] = {}
    for det in detections:
        by_class.setdefault(det.class_id, []).append(det)
    per_class: dict[int, list[float]] = {}
    gt_counts: dict[int, int] = {}
    skipped: list[int] = []
    for class_id in range(1, manifest.num_classes + 1):
        gts = [
            (video.video_id, gt.start, gt.stop)
            for video in manifest
            for gt in video.gt
            if gt.class_id == class_id
        ]
        if not gts:
            skipped.append(class_id)
            continue
        gt_counts[class_id] = len(gts)
        dets = by_class.get(class_id, [])
        per_class[class_id] = [average_precision(dets, gts, thr) for thr in thresholds]
    if not per_class:
        raise ValueError("evaluate: manifest has no ground-truth intervals")
    map_per_threshold = [
        float(np.mean([aps[k] for aps in per_class.values()]))
        for k in range(len(thresholds))
    ]
    return EvalReport(
        thresholds=list(thresholds),
        per_class=per_class,
        gt_counts=gt_counts,
        skipped_classes=skipped,
        map_per_threshold=map_per_threshold,
        average_map=float(np.mean(map_per_threshold)),
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def write_detections_json(detections: list[Detection], path: str | Path) -> None:
    """Group detections by video and store intervals with inclusive ends."""
    by_video: dict[str, list[Detection]] = {}
    for det in detections:
        by_video.setdefault(det.video_id, []).append(det)
    doc = [
        {
            "video_id": video_id,
            "detections": [
                {
                    "class": d.class_id,
                    "start": d.start,
                    "end": d.stop - 1,
                    "score": d.score,
                    "probs": list(d.probs),
                }
                for d in dets
            ],
        }
        for video_id, dets in sorted(by_video.items())
    ]
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_detections_json(path: str | Path) -> list[Detection]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DetectionFileError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, list):
        raise DetectionFileError(f"{path}: expected a top-level list")
    out: list[Detection] = []
    for entry in doc:
        try:
            video_id = entry["video_id"]
            for d in entry["detections"]:
                out.append(
                    Detection(
                        video_id=video_id,
                        class_id=int(d["class"]),
                        start=int(d["start"]),
                        stop=int(d["end"]) + 1,
                        score=float(d["score"]),
                        probs=tuple(float(v) for v in d.get("probs", ())),
                    )
                )
        except (KeyError, TypeError, ValueError) as exc:
            raise DetectionFileError(f"{path}: malformed detection entry ({exc})") from exc
    return out


def write_report_json(report: EvalReport, path: str | Path) -> None:
    doc = {
        "thresholds": report.thresholds,
        "per_class": {str(c): aps for c, aps in sorted(report.per_class.items())},
        "gt_counts": {str(c): n for c, n in sorted(report.gt_counts.items())},
        "skipped_classes": report.skipped_classes,
        "map_per_threshold": report.map_per_threshold,
        "average_map": report.average_map,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_report_csv(report: EvalReport, path: str | Path) -> None:
    """One row per class plus a final mAP row; columns are IoU thresholds."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class"] + [f"ap@{t:g}" for t in report.thresholds] + ["gt_count"])
        for class_id in sorted(report.per_class):
            writer.writerow(
                [class_id]
                + [f"{v:.6f}" for v in report.per_class[class_id]]
                + [report.gt_counts[class_id]]
            )
        writer.writerow(
            ["mAP"] + [f"{v:.6f}" for v in report.map_per_threshold] + [""]
        )
