"""Intra-video shuffling: order recovery over clips cut from one action segment.

An eligible action segment is cut into N equal-length, temporally ordered,
non-overlapping clips. The clips are pooled into descriptors, shuffled by a
random permutation, and a relation network must recover which permutation was
applied — a classification problem over all N! orders. Permutations are
indexed by their position in the lexicographic enumeration (Lehmer code), so
labels are stable integers in [0, N!).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd
from .attention import pool_action
from .ndtensor import Tensor

__all__ = [
    "OrderNetParams",
    "perm_encode",
    "perm_decode",
    "sample_clips",
    "clip_descriptors",
    "predict_order",
    "make_shuffled_task",
    "intra_loss",
]


# ---------------------------------------------------------------------------
# Permutation codec
# ---------------------------------------------------------------------------


def perm_encode(order) -> int:
    """Lexicographic index of a permutation of 0..n-1 (identity -> 0)."""
    order = tuple(int(v) for v in order)
    n = len(order)
    if sorted(order) != list(range(n)):
        raise ValueError(f"perm_encode: {order} is not a permutation of 0..{n - 1}")
    index = 0
    for k, v in enumerate(order):
        smaller_right = sum(1 for u in order[k + 1 :] if u < v)
        index += smaller_right * math.factorial(n - 1 - k)
    return index


def perm_decode(index: int, n: int) -> tuple[int, ...]:
    """Inverse of perm_encode: the index-th permutation in lexicographic order."""
    if n < 1:
        raise ValueError("perm_decode: n must be >= 1")
    total = math.factorial(n)
    if not (0 <= index < total):
        raise ValueError(f"perm_decode: index {index} outside [0, {total})")
    pool = list(range(n))
    out = []
    rem = index
    for k in range(n, 0, -1):
        f = math.factorial(k - 1)
        pick, rem = divmod(rem, f)
        out.append(pool.pop(pick))
    return tuple(out)


# ---------------------------------------------------------------------------
# Clip sampling
# ---------------------------------------------------------------------------


def sample_clips(
    start: int, stop: int, n_clips: int, clip_len: int | None = None
) -> list[tuple[int, int]] | None:
    """Evenly spaced, equal-length, non-overlapping clip windows in a segment.

    With ``clip_len`` unset it defaults to ``max(2, ceil(L / (2N - 1)))`` for a
    segment of length L. The first clip starts at the segment start; leftover
    frames are spread as uniformly as possible into the N-1 inter-clip gaps
    (earlier gaps take the remainder), every gap at least one frame. Returns
    ``None`` when the segment is too short to fit N such clips — callers skip
    the segment rather than erroring.
    """
    if n_clips < 2:
        raise ValueError("sample_clips: need at least two clips")
    length = stop - start
    if length < 1:
        raise ValueError(f"sample_clips: empty segment [{start}, {stop})")
    if clip_len is None:
        clip_len = max(2, -(-length // (2 * n_clips - 1)))
    if clip_len < 1:
        raise ValueError("sample_clips: clip_len must be >= 1")
    needed = n_clips * clip_len + (n_clips - 1)
    if length < needed:
        return None
    total_gap = length - n_clips * clip_len
    base, rem = divmod(total_gap, n_clips - 1)
    windows = []
    cursor = start
    for i in range(n_clips):
        windows.append((cursor, cursor + clip_len))
        if i < n_clips - 1:
            gap = base + (1 if i < rem else 0)
            cursor += clip_len + gap
    return windows


def clip_descriptors(features, lam, windows: list[tuple[int, int]], eps: float = 0.0) -> list[Tensor]:
    """Attention-weighted descriptor for each clip window."""
    return [pool_action(features, lam, s, e, eps=eps) for s, e in windows]


# ---------------------------------------------------------------------------
# Order network
# ---------------------------------------------------------------------------


@dataclass
class OrderNetParams:
    """Pairwise relation MLP plus a linear head over all N! orders."""

    n_clips: int
    w1: Tensor  # (hidden, 2d)
    b1: Tensor  # (hidden,)
    w2: Tensor  # (N!, C(N,2) * hidden)
    b2: Tensor  # (N!,)

    @classmethod
    def init(
        cls, feat_dim: int, n_clips: int, hidden: int, rng: np.random.Generator
    ) -> "OrderNetParams":
        n_orders = math.factorial(n_clips)
        n_pairs = math.comb(n_clips, 2)
        return cls(
            n_clips=n_clips,
            w1=Tensor(rng.normal(0.0, 1.0 / np.sqrt(2 * feat_dim), size=(hidden, 2 * feat_dim)), requires_grad=True),
            b1=Tensor(np.zeros(hidden), requires_grad=True),
            w2=Tensor(
                rng.normal(0.0, 1.0 / np.sqrt(n_pairs * hidden), size=(n_orders, n_pairs * hidden)),
                requires_grad=True,
            ),
            b2=Tensor(np.zeros(n_orders), requires_grad=True),
        )

    @property
    def n_orders(self) -> int:
        return math.factorial(self.n_clips)

    def named(self, prefix: str = "order") -> dict[str, Tensor]:
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }


def predict_order(clip_features: list[Tensor], params: OrderNetParams) -> Tensor:
    """Distribution over the N! possible orders of the given (shuffled) clips.

    Every position pair (k, j) with k < j, in lexicographic order, is scored by
    the relation MLP on the concatenated pair of descriptors; the concatenated
    relation vectors feed the order head.
    """
    n = params.n_clips
    if len(clip_features) != n:
        raise ValueError(
            f"predict_order: got {len(clip_features)} clips, parameters expect {n}"
        )
    relations = []
    for k in range(n):
        for j in range(k + 1, n):
            pair = nd.concat([clip_features[k], clip_features[j]])
            relations.append(nd.relu(nd.matvec_add(params.w1, pair, params.b1)))
    logits = nd.matvec_add(params.w2, nd.concat(relations), params.b2)
    return nd.softmax(logits)


def make_shuffled_task(
    features,
    lam,
    segment: tuple[int, int],
    n_clips: int,
    rng: np.random.Generator,
    clip_len: int | None = None,
    eps: float = 0.0,
) -> tuple[list[Tensor], int] | None:
    """Cut a segment into clips, shuffle them, return (shuffled clips, label).

    The label is the permutation index such that slot k of the shuffled tuple
    holds the clip at original position ``perm_decode(label, N)[k]``. Returns
    None when the segment is too short for N clips.
    """
    windows = sample_clips(segment[0], segment[1], n_clips, clip_len)
    if windows is None:
        return None
    descs = clip_descriptors(features, lam, windows, eps=eps)
    order = tuple(int(v) for v in rng.permutation(n_clips))
    shuffled = [descs[order[k]] for k in range(n_clips)]
    return shuffled, perm_encode(order)


def intra_loss(predictions: list[tuple[Tensor, int]]) -> Tensor:
    """Mean cross-entropy of order predictions against their true permutation."""
    if not predictions:
        raise ValueError("intra_loss: no order predictions")
    terms = []
    for p_ord, label in predictions:
        n_orders = p_ord.shape[0]
        if not (0 <= label < n_orders):
            raise ValueError(f"intra_loss: label {label} outside [0, {n_orders})")
        target = np.zeros(n_orders)
        target[label] = 1.0
        terms.append(nd.cross_entropy(p_ord, Tensor(target)))
    return nd.mean_scalars(terms)
