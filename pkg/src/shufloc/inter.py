"""Inter-video shuffling: synthesize extra training videos from detected actions.

Action segments detected by the current attention (inflated by a small margin
to catch full boundaries) are pooled per class. New single-class videos are
then spliced together by concatenating k randomly drawn same-class slices;
these carry ordinary video-level labels, so they feed the standard
classification loss and expand the training set without any new annotation.
Only single-label source videos contribute, since a multi-label video's
segments cannot be attributed to one class without extra supervision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import classification_loss, compute_attention, pool_action, pool_background, segment_by_attention
from .data import DatasetManifest, FeatureSequence, VideoLabel, VideoRecord
from .model import Model
from .ndtensor import Tensor

__all__ = [
    "PoolEntry",
    "ActionPool",
    "PoolEmptyError",
    "inflate_window",
    "build_pool",
    "synthesize_video",
    "augment_training_set",
    "inter_loss",
]


class PoolEmptyError(ValueError):
    """Augmentation requested but no class has any pooled segment."""


@dataclass(frozen=True)
class PoolEntry:
    """One class-attributed action slice of a source video."""

    video_id: str
    start: int
    stop: int
    features: FeatureSequence  # the source video's full sequence

    def rows(self) -> np.ndarray:
        return np.array(self.features.frames[self.start - 1 : self.stop - 1], copy=True)


@dataclass
class ActionPool:
    """Per-class collections of detected action slices."""

    entries: dict[int, list[PoolEntry]] = field(default_factory=dict)

    def add(self, class_id: int, entry: PoolEntry) -> None:
        self.entries.setdefault(class_id, []).append(entry)

    def classes(self) -> list[int]:
        return sorted(c for c, es in self.entries.items() if es)

    def size(self, class_id: int) -> int:
        return len(self.entries.get(class_id, []))

    def total(self) -> int:
        return sum(len(es) for es in self.entries.values())


def inflate_window(start: int, stop: int, delta: int, t_len: int) -> tuple[int, int]:
    """Widen a window by delta on both sides, clamped to the video bounds."""
    if delta < 0:
        raise ValueError("inflate_window: delta must be non-negative")
    return (max(1, start - delta), min(t_len + 1, stop + delta))


def build_pool(
    manifest: DatasetManifest,
    model: Model,
    delta: int,
    tau: float,
    min_len: int,
) -> ActionPool:
    """Detect action segments in every single-label video and pool them by class.

    Segmentation thresholds the current attention at ``tau`` (runs shorter
    than ``min_len`` dropped); each kept run is inflated by ``delta`` frames
    per side before pooling. Call outside any gradient tape.
    """
    pool = ActionPool()
    for video in manifest:
        if not video.label.is_single:
            continue
        class_id = video.label.classes[0]
        lam = compute_attention(video.features, model.attention).values
        segments = segment_by_attention(lam, tau, min_len)
        for start, stop in segments.actions:
            s, e = inflate_window(start, stop, delta, video.features.t_len)
            pool.add(
                class_id,
                PoolEntry(video_id=video.video_id, start=s, stop=e, features=video.features),
            )
    return pool


def synthesize_video(
    pool: ActionPool,
    class_id: int,
    n_segments: int,
    rng: np.random.Generator,
    video_id: str,
    num_classes: int,
) -> VideoRecord:
    """Concatenate n same-class slices (drawn with replacement) into a new video."""
    entries = pool.entries.get(class_id) or []
    if not entries:
        raise PoolEmptyError(f"synthesize_video: no pooled segments for class {class_id}")
    if n_segments < 1:
        raise ValueError("synthesize_video: need at least one segment")
    picks = [entries[int(rng.integers(len(entries)))] for _ in range(n_segments)]
    frames = np.concatenate([p.rows() for p in picks], axis=0)
    return VideoRecord(
        video_id=video_id,
        features=FeatureSequence(video_id=video_id, frames=frames),
        label=VideoLabel((class_id,), num_classes),
        gt=[],
        source=[(p.video_id, p.start, p.stop) for p in picks],
    )


def augment_training_set(
    manifest: DatasetManifest,
    pool: ActionPool,
    factor: int,
    rng: np.random.Generator,
    k_min: int = 2,
    k_max: int = 5,
    id_prefix: str = "gen",
) -> DatasetManifest:
    """Extend a manifest with ``factor * len(manifest)`` synthesized videos.

    Generated videos are spread across the classes that have pooled segments
    as evenly as possible (counts differ by at most one; the remainder goes to
    a seeded random subset of classes). Each video splices k segments with
    k drawn uniformly from [k_min, k_max]. ``factor=0`` returns the manifest
    unchanged.
    """
    if factor < 0:
        raise ValueError("augment_training_set: factor must be non-negative")
    if factor == 0:
        return manifest
    available = pool.classes()
    if not available:
        raise PoolEmptyError("augment_training_set: action pool is empty for every class")
    if not (1 <= k_min <= k_max):
        raise ValueError("augment_training_set: need 1 <= k_min <= k_max")
    total = factor * len(manifest)
    base, rem = divmod(total, len(available))
    bonus = set(rng.permutation(len(available))[:rem].tolist())
    generated: list[VideoRecord] = []
    index = 0
    for slot, class_id in enumerate(available):
        count = base + (1 if slot in bonus else 0)
        for _ in range(count):
            k = int(rng.integers(k_min, k_max + 1))
            video = synthesize_video(
                pool, class_id, k, rng, f"{id_prefix}-{index:04d}", manifest.num_classes
            )
            generated.append(video)
            index += 1
    return DatasetManifest(
        videos=list(manifest.videos) + generated,
        num_classes=manifest.num_classes,
        split=manifest.split,
    )


def inter_loss(video: VideoRecord, model: Model, alpha: float, pool_eps: float = 0.0) -> Tensor:
    """Standard classification loss applied to a synthesized video.

    The synthesized video runs through the full pipeline: attention, action and
    background pooling over the whole sequence, then the two-term video-level
    cross-entropy against its single-class label.
    """
    t_len = video.features.t_len
    lam = compute_attention(video.features, model.attention)
    x_a = pool_action(video.features, lam, 1, t_len + 1, eps=pool_eps)
    x_b = pool_background(video.features, lam, 1, t_len + 1, eps=pool_eps)
    return classification_loss(model.classifier, x_a, x_b, video.label.vector(), alpha)
