"""Frame attention, attention-weighted pooling, video-level classification.

The attention network scores every frame with a value in (0, 1). Action and
background descriptors are attention-weighted means of the frame features;
a linear softmax classifier over ``C + 1`` classes (the extra slot is
background) consumes those descriptors. Class activations derived from the
classifier feed both a self-guidance term on the attention and, at test time,
the temporal decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd
from .data import FeatureSequence, background_target
from .ndtensor import Tensor

__all__ = [
    "AttentionNetParams",
    "ClassifierParams",
    "SegmentSet",
    "DegenerateWindowError",
    "compute_attention",
    "class_probs",
    "pool_action",
    "pool_background",
    "classification_loss",
    "class_activation_matrix",
    "compute_tcam",
    "self_guided_loss",
    "segment_by_attention",
    "select_classes",
    "video_class_probs",
]


class DegenerateWindowError(ValueError):
    """Pooling window whose attention mass is exactly zero."""


def frames_of(x) -> np.ndarray:
    """Accept a FeatureSequence or a raw (T, d) array."""
    arr = x.frames if isinstance(x, FeatureSequence) else np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a (T, d) feature matrix, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass
class AttentionNetParams:
    """Two-layer MLP d -> hidden -> 1 with a sigmoid output per frame."""

    w1: Tensor  # (d, hidden)
    b1: Tensor  # (hidden,)
    w2: Tensor  # (hidden, 1)
    b2: Tensor  # (1,)

    @classmethod
    def init(cls, feat_dim: int, hidden: int, rng: np.random.Generator) -> "AttentionNetParams":
        return cls(
            w1=Tensor(rng.normal(0.0, 1.0 / np.sqrt(feat_dim), size=(feat_dim, hidden)), requires_grad=True),
            b1=Tensor(np.zeros(hidden), requires_grad=True),
            w2=Tensor(rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, 1)), requires_grad=True),
            b2=Tensor(np.zeros(1), requires_grad=True),
        )

    def named(self, prefix: str = "attention") -> dict[str, Tensor]:
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }


@dataclass
class ClassifierParams:
    """Bias-free linear classifier over C action classes plus background."""

    w: Tensor  # (C + 1, d)

    @classmethod
    def init(cls, feat_dim: int, num_classes: int, rng: np.random.Generator) -> "ClassifierParams":
        return cls(
            w=Tensor(
                rng.normal(0.0, 1.0 / np.sqrt(feat_dim), size=(num_classes + 1, feat_dim)),
                requires_grad=True,
            )
        )

    @property
    def num_classes(self) -> int:
        return self.w.shape[0] - 1

    def named(self, prefix: str = "classifier") -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w}


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------


def compute_attention(features, params: AttentionNetParams) -> Tensor:
    """Per-frame attention in (0, 1); returns a (T,) tensor."""
    x = Tensor(frames_of(features))
    h = nd.relu(nd.add(nd.matmul(x, params.w1), params.b1))
    z = nd.add(nd.matmul(h, params.w2), params.b2)
    return nd.sigmoid(nd.reshape(z, (z.shape[0],)))


def class_probs(classifier: ClassifierParams, x: Tensor) -> Tensor:
    """Softmax class distribution over C+1 slots for one descriptor."""
    return nd.softmax(nd.matmul(classifier.w, x))


def _window_pool(features, weights: Tensor, start: int, stop: int, eps: float, what: str) -> Tensor:
    arr = frames_of(features)
    t_len = arr.shape[0]
    if not (1 <= start < stop <= t_len + 1):
        raise ValueError(f"{what}: window [{start}, {stop}) out of range for length {t_len}")
    w_win = nd.slice1d(weights, start - 1, stop - 1)
    num = nd.matmul(Tensor(arr[start - 1 : stop - 1].T), w_win)
    den = nd.tsum(w_win)
    if eps > 0.0:
        den = nd.add(den, float(eps))
    elif den.item() <= 0.0:
        raise DegenerateWindowError(
            f"{what}: attention mass over [{start}, {stop}) is zero; cannot normalize"
        )
    return nd.div(num, den)


def pool_action(features, lam, start: int, stop: int, eps: float = 0.0) -> Tensor:
    """Attention-weighted mean of the window's frames: sum(lam*x) / sum(lam)."""
    return _window_pool(features, nd.as_tensor(lam), start, stop, eps, "pool_action")


def pool_background(features, lam, start: int, stop: int, eps: float = 0.0) -> Tensor:
    """Like pool_action but weighted by the complement (1 - lam)."""
    lam = nd.as_tensor(lam)
    inv = nd.sub(1.0, lam)
    return _window_pool(features, inv, start, stop, eps, "pool_background")


def classification_loss(
    classifier: ClassifierParams,
    x_action: Tensor,
    x_background: Tensor,
    label_vector: np.ndarray,
    alpha: float,
) -> Tensor:
    """Cross-entropy on the action descriptor plus alpha times the background term.

    The video-level target is the multi-hot label normalized to a distribution;
    the background descriptor is pushed toward the background slot.
    """
    y = np.asarray(label_vector, dtype=np.float64)
    if y.sum() <= 0:
        raise ValueError("classification_loss: label vector has no positive entries")
    y_norm = y / y.sum()
    num_classes = classifier.num_classes
    loss_a = nd.cross_entropy(class_probs(classifier, x_action), Tensor(y_norm))
    loss_b = nd.cross_entropy(
        class_probs(classifier, x_background), Tensor(background_target(num_classes))
    )
    return nd.add(loss_a, nd.mul(loss_b, float(alpha)))


# ---------------------------------------------------------------------------
# Class activations and self-guidance
# ---------------------------------------------------------------------------


def class_activation_matrix(features, classifier: ClassifierParams) -> np.ndarray:
    """Per-frame softmax over C+1 classes; detached (T, C+1) array."""
    arr = frames_of(features)
    scores = arr @ classifier.w.values.T
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def select_classes(video_probs: np.ndarray, num_classes: int) -> list[int]:
    """Action classes whose video-level probability beats the uniform level."""
    thresh = 1.0 / (num_classes + 1)
    return [c for c in range(1, num_classes + 1) if video_probs[c - 1] > thresh]


def compute_tcam(
    features,
    classifier: ClassifierParams,
    selected_classes: list[int],
    sigma: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed class-activation attention targets; both in [0, 1].

    The action target is the per-frame softmax mass of the selected classes;
    the background-complement target is the mass of all action classes (i.e.
    one minus the background slot's probability). Both are Gaussian-smoothed
    and detached from the tape.
    """
    probs = class_activation_matrix(features, classifier)
    num_classes = classifier.num_classes
    for c in selected_classes:
        if not (1 <= c <= num_classes):
            raise ValueError(f"compute_tcam: class {c} outside 1..{num_classes}")
    if selected_classes:
        mass_a = probs[:, [c - 1 for c in selected_classes]].sum(axis=1)
    else:
        mass_a = np.zeros(probs.shape[0])
    mass_b = probs[:, :num_classes].sum(axis=1)
    lhat_a = nd.gaussian_smooth_1d(Tensor(mass_a), sigma).values
    lhat_b = nd.gaussian_smooth_1d(Tensor(mass_b), sigma).values
    return lhat_a, lhat_b


def self_guided_loss(lam: Tensor, lhat_a: np.ndarray, lhat_b: np.ndarray) -> Tensor:
    """Mean absolute gap between attention and both activation targets."""
    if lam.shape != np.shape(lhat_a) or lam.shape != np.shape(lhat_b):
        raise ValueError(
            f"self_guided_loss: shape mismatch {lam.shape} vs {np.shape(lhat_a)} / {np.shape(lhat_b)}"
        )
    gap_a = nd.tmean(nd.tabs(nd.sub(lam, Tensor(lhat_a))))
    gap_b = nd.tmean(nd.tabs(nd.sub(lam, Tensor(lhat_b))))
    return nd.add(gap_a, gap_b)


# ---------------------------------------------------------------------------
# Attention-threshold segmentation
# ---------------------------------------------------------------------------


@dataclass
class SegmentSet:
    """Alternating background/action tiling of a video.

    ``actions`` holds m half-open windows in temporal order; ``backgrounds``
    holds m+1 windows (before, between, after), some possibly empty, such that
    backgrounds[0], actions[0], backgrounds[1], ..., actions[m-1],
    backgrounds[m] tiles [1, T+1) exactly.
    """

    t_len: int
    actions: list[tuple[int, int]]
    backgrounds: list[tuple[int, int]]

    @classmethod
    def from_actions(cls, t_len: int, actions: list[tuple[int, int]]) -> "SegmentSet":
        prev_stop = 1
        backgrounds = []
        for start, stop in actions:
            if not (1 <= start < stop <= t_len + 1):
                raise ValueError(f"SegmentSet: action [{start}, {stop}) out of range")
            if start < prev_stop:
                raise ValueError("SegmentSet: actions overlap or are unsorted")
            backgrounds.append((prev_stop, start))
            prev_stop = stop
        backgrounds.append((prev_stop, t_len + 1))
        return cls(t_len=t_len, actions=list(actions), backgrounds=backgrounds)

    @property
    def num_actions(self) -> int:
        return len(self.actions)

    def tiles_exactly(self) -> bool:
        cursor = 1
        for i, action in enumerate(self.actions):
            bg = self.backgrounds[i]
            if bg[0] != cursor or bg[1] != action[0]:
                return False
            cursor = action[1]
        last = self.backgrounds[-1]
        return last[0] == cursor and last[1] == self.t_len + 1


def segment_by_attention(lam_values: np.ndarray, tau: float, min_len: int) -> SegmentSet:
    """Maximal runs of ``lam >= tau`` of at least ``min_len`` frames become actions."""
    lam_values = np.asarray(lam_values, dtype=np.float64)
    if lam_values.ndim != 1:
        raise ValueError(f"segment_by_attention: expected a vector, got {lam_values.shape}")
    if min_len < 1:
        raise ValueError("segment_by_attention: min_len must be >= 1")
    t_len = lam_values.size
    mask = lam_values >= tau
    actions = []
    t = 0
    while t < t_len:
        if mask[t]:
            run_start = t
            while t < t_len and mask[t]:
                t += 1
            if t - run_start >= min_len:
                actions.append((run_start + 1, t + 1))
        else:
            t += 1
    return SegmentSet.from_actions(t_len, actions)


def video_class_probs(
    features,
    attention: AttentionNetParams,
    classifier: ClassifierParams,
    eps: float = 1e-8,
) -> np.ndarray:
    """Video-level class distribution from whole-video action pooling (detached)."""
    arr = frames_of(features)
    lam = compute_attention(arr, attention)
    x_a = pool_action(arr, lam, 1, arr.shape[0] + 1, eps=eps)
    return class_probs(classifier, x_a).values
