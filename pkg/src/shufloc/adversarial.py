"""Sign-gradient input perturbations and the two adversarial loss terms.

The global term perturbs the whole-video action/background descriptors in the
direction that increases classification loss and asks the classifier to stay
right anyway. The local term walks the alternating background/action/background
chain and, for each adjacent (earlier, later) pair of segments, penalizes the
earlier segment's perturbed class distribution for resembling the later one's —
pushing neighboring segments apart so boundaries sharpen.

Perturbations are computed on detached copies under a nested tape and then
added as constants, so no second-order terms enter the training gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ndtensor as nd
from .attention import (
    ClassifierParams,
    SegmentSet,
    class_probs,
    classification_loss,
    pool_action,
    pool_background,
)
from .data import background_target
from .ndtensor import GradTape, Tensor

__all__ = [
    "Perturbation",
    "fgsm",
    "global_adv_loss",
    "local_adv_terms",
    "local_adv_loss",
    "adv_loss",
]


@dataclass(frozen=True)
class Perturbation:
    """An additive input perturbation with its sup-norm budget."""

    delta: np.ndarray
    epsilon: float

    def __post_init__(self):
        if self.delta.size and np.max(np.abs(self.delta)) > self.epsilon + 1e-15:
            raise ValueError("Perturbation: delta exceeds the epsilon budget")


def fgsm(x, loss_fn: Callable[[Tensor], Tensor], epsilon: float) -> Perturbation:
    """Fast sign-gradient perturbation: epsilon * sign(d loss_fn / d x).

    ``x`` is copied into a detached leaf; the gradient is taken under a private
    nested tape, so calling this inside a training graph records nothing there.
    ``epsilon=0`` short-circuits to a zero perturbation.
    """
    if epsilon < 0:
        raise ValueError("fgsm: epsilon must be non-negative")
    values = x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if epsilon == 0.0:
        return Perturbation(delta=np.zeros_like(values), epsilon=0.0)
    leaf = Tensor(np.array(values, copy=True), requires_grad=True)
    with GradTape() as tape:
        loss = loss_fn(leaf)
    grad = tape.backward(loss).get(leaf)
    if grad is None:
        grad = np.zeros_like(values)
    if not np.all(np.isfinite(grad)):
        raise ValueError("fgsm: non-finite gradient")
    return Perturbation(delta=epsilon * np.sign(grad), epsilon=float(epsilon))


def global_adv_loss(
    classifier: ClassifierParams,
    x_action: Tensor,
    x_background: Tensor,
    label_vector: np.ndarray,
    alpha: float,
    epsilon: float,
) -> Tensor:
    """Classification loss evaluated at sign-gradient-perturbed descriptors.

    Each descriptor gets its own perturbation that ascends its own
    cross-entropy term. With ``epsilon=0`` this reduces bit-for-bit to the
    unperturbed classification loss.
    """
    if epsilon == 0.0:
        return classification_loss(classifier, x_action, x_background, label_vector, alpha)
    y = np.asarray(label_vector, dtype=np.float64)
    if y.sum() <= 0:
        raise ValueError("global_adv_loss: label vector has no positive entries")
    y_norm = y / y.sum()
    y_bg = background_target(classifier.num_classes)

    def ce_against(target):
        return lambda t: nd.cross_entropy(class_probs(classifier, t), Tensor(target))

    pert_a = fgsm(x_action.detach(), ce_against(y_norm), epsilon)
    pert_b = fgsm(x_background.detach(), ce_against(y_bg), epsilon)
    loss_a = nd.cross_entropy(
        class_probs(classifier, nd.add(x_action, Tensor(pert_a.delta))), Tensor(y_norm)
    )
    loss_b = nd.cross_entropy(
        class_probs(classifier, nd.add(x_background, Tensor(pert_b.delta))), Tensor(y_bg)
    )
    return nd.add(loss_a, nd.mul(loss_b, float(alpha)))


def _chain_windows(segments: SegmentSet) -> list[tuple[str, tuple[int, int]]]:
    """bg0, act0, bg1, act1, ..., bgm as (kind, window) in temporal order."""
    chain = []
    for i, action in enumerate(segments.actions):
        chain.append(("background", segments.backgrounds[i]))
        chain.append(("action", action))
    chain.append(("background", segments.backgrounds[-1]))
    return chain


def local_adv_terms(
    features,
    lam: Tensor,
    segments: SegmentSet,
    classifier: ClassifierParams,
    epsilon: float,
    pool_eps: float = 0.0,
    clamp_floor: float = -10.0,
) -> list[Tensor]:
    """Per-pair repulsion terms along the background/action chain.

    Every action contributes up to two terms: (previous background -> action)
    and (action -> next background). A term is the negated cross-entropy of the
    earlier segment's perturbed class distribution against the later segment's
    perturbed class distribution, clamped below at ``clamp_floor`` so a single
    pair cannot dominate. Gradients flow through both distributions; only the
    perturbations themselves are constants. Pairs touching an empty window are
    skipped. Each segment carries one perturbation, computed from its own pair
    term with the other side held fixed and unperturbed.
    """
    chain = _chain_windows(segments)
    n = len(chain)
    pairs = []
    for i in range(segments.num_actions):
        pairs.append((2 * i, 2 * i + 1))
        pairs.append((2 * i + 1, 2 * i + 2))
    nonempty = [w[1][1] > w[1][0] for w in chain]
    valid_pairs = [(a, b) for a, b in pairs if nonempty[a] and nonempty[b]]
    if not valid_pairs:
        return []

    def pool(idx: int, tracked: bool) -> Tensor:
        kind, (s, e) = chain[idx]
        weights = lam if tracked else Tensor(np.asarray(lam.values, dtype=np.float64))
        if kind == "action":
            return pool_action(features, weights, s, e, eps=pool_eps)
        return pool_background(features, weights, s, e, eps=pool_eps)

    # Detached descriptors and unperturbed distributions per window.
    x_det: dict[int, np.ndarray] = {}
    q_unpert: dict[int, np.ndarray] = {}
    for idx in range(n):
        if not nonempty[idx]:
            continue
        if not any(idx in pair for pair in valid_pairs):
            continue
        x_det[idx] = pool(idx, tracked=False).values
        q_unpert[idx] = class_probs(classifier, Tensor(x_det[idx])).values

    # One perturbation per window: ascend the window's own pair term, taking
    # the prediction role when it has one, else the target role.
    deltas: dict[int, np.ndarray] = {}
    for idx in x_det:
        if epsilon == 0.0:
            deltas[idx] = np.zeros_like(x_det[idx])
            continue
        pred_pair = next((p for p in valid_pairs if p[0] == idx), None)
        targ_pair = next((p for p in valid_pairs if p[1] == idx), None)
        if pred_pair is not None:
            target = q_unpert[pred_pair[1]]
            fn = lambda t, target=target: nd.neg(
                nd.cross_entropy(class_probs(classifier, t), Tensor(target))
            )
        else:
            pred = q_unpert[targ_pair[0]]
            fn = lambda t, pred=pred: nd.neg(
                nd.cross_entropy(Tensor(pred), class_probs(classifier, t))
            )
        deltas[idx] = fgsm(x_det[idx], fn, epsilon).delta

    # Tape-tracked terms; each window is pooled once and shared across pairs.
    tracked: dict[int, Tensor] = {}

    def tracked_pool(idx: int) -> Tensor:
        if idx not in tracked:
            tracked[idx] = pool(idx, tracked=True)
        return tracked[idx]

    terms = []
    for pred_idx, targ_idx in valid_pairs:
        p_pred = class_probs(classifier, nd.add(tracked_pool(pred_idx), Tensor(deltas[pred_idx])))
        p_targ = class_probs(classifier, nd.add(tracked_pool(targ_idx), Tensor(deltas[targ_idx])))
        term = nd.neg(nd.cross_entropy(p_pred, p_targ))
        terms.append(nd.clamp_min(term, clamp_floor))
    return terms


def local_adv_loss(
    features,
    lam: Tensor,
    segments: SegmentSet,
    classifier: ClassifierParams,
    epsilon: float,
    pool_eps: float = 0.0,
    clamp_floor: float = -10.0,
) -> Tensor:
    """Sum of the per-pair repulsion terms; exactly zero with no usable pair."""
    terms = local_adv_terms(
        features, lam, segments, classifier, epsilon, pool_eps=pool_eps, clamp_floor=clamp_floor
    )
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = nd.add(total, t)
    return total


def adv_loss(global_term: Tensor, local_term: Tensor, beta: float) -> Tensor:
    """Combined adversarial objective: global + beta * local."""
    return nd.add(global_term, nd.mul(local_term, float(beta)))
