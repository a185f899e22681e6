"""Tests for sign-gradient perturbations and the adversarial loss terms."""

import math

import numpy as np
import pytest

import oracles
from shufloc import adversarial as adv
from shufloc import ndtensor as nd
from shufloc.attention import (
    ClassifierParams,
    SegmentSet,
    class_probs,
    classification_loss,
    segment_by_attention,
)
from shufloc.data import VideoLabel
from shufloc.ndtensor import GradTape, Tensor


def _classifier(d, c, seed=0, scale=None):
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, scale if scale is not None else 1.0 / np.sqrt(d), size=(c + 1, d))
    return ClassifierParams(w=Tensor(w, requires_grad=True))


class TestFgsm:
    def test_sum_objective_gives_positive_signs(self):
        pert = adv.fgsm(np.array([0.3, -0.2, 1.0]), lambda t: nd.tsum(t), 0.01)
        np.testing.assert_array_equal(pert.delta, np.full(3, 0.01))

    def test_negated_objective_flips_signs(self):
        pert = adv.fgsm(np.array([0.3, -0.2]), lambda t: nd.neg(nd.tsum(t)), 0.5)
        np.testing.assert_array_equal(pert.delta, np.full(2, -0.5))

    def test_epsilon_zero_short_circuits(self):
        pert = adv.fgsm(np.ones(4), lambda t: nd.tsum(t), 0.0)
        np.testing.assert_array_equal(pert.delta, np.zeros(4))

    def test_negative_epsilon_rejected(self):
        with pytest.raises(ValueError, match="epsilon"):
            adv.fgsm(np.ones(2), lambda t: nd.tsum(t), -0.1)

    def test_objective_independent_of_input_gives_zero(self):
        pert = adv.fgsm(np.ones(3), lambda t: Tensor(2.0, requires_grad=True) * 1.0, 0.1)
        np.testing.assert_array_equal(pert.delta, np.zeros(3))

    def test_sup_norm_never_exceeds_epsilon(self):
        rng = np.random.default_rng(1)
        clf = _classifier(5, 3, seed=2)
        y = VideoLabel((2,), 3).vector()
        y_norm = y / y.sum()
        for _ in range(50):
            x = rng.normal(size=5)
            eps = float(rng.uniform(1e-4, 1e-1))
            pert = adv.fgsm(
                x, lambda t: nd.cross_entropy(class_probs(clf, t), Tensor(y_norm)), eps
            )
            assert np.max(np.abs(pert.delta)) <= eps + 1e-15

    def test_sign_matches_finite_difference_sign(self):
        clf = _classifier(4, 2, seed=3)
        y = np.array([1.0, 0.0, 0.0])
        x = np.random.default_rng(4).normal(size=4)

        def value(arr):
            return oracles.cross_entropy_oracle(
                oracles.softmax_oracle(clf.w.values @ arr), y
            )

        pert = adv.fgsm(
            x, lambda t: nd.cross_entropy(class_probs(clf, t), Tensor(y)), 1e-3
        )
        base = np.array(x, copy=True)
        fd = oracles.central_difference(lambda: value(base), base, h=1e-6)
        keep = np.abs(fd) > 1e-7  # ignore coordinates too flat to resolve
        np.testing.assert_array_equal(np.sign(pert.delta[keep]), np.sign(fd[keep]))

    def test_nested_tape_does_not_pollute_outer_graph(self):
        clf = _classifier(3, 2, seed=5)
        x = Tensor(np.random.default_rng(6).normal(size=3), requires_grad=True)
        y = np.array([1.0, 0.0, 0.0])
        with GradTape() as tape:
            before = len(tape)
            adv.fgsm(x.detach(), lambda t: nd.cross_entropy(class_probs(clf, t), Tensor(y)), 1e-3)
            assert len(tape) == before  # nothing recorded on the outer tape
            loss = nd.cross_entropy(class_probs(clf, x), Tensor(y))
        assert x in tape.backward(loss)


class TestGlobalAdvLoss:
    def test_epsilon_zero_equals_classification_loss(self):
        rng = np.random.default_rng(0)
        clf = _classifier(5, 3, seed=1)
        x_a = Tensor(rng.normal(size=5))
        x_b = Tensor(rng.normal(size=5))
        y = VideoLabel((1, 3), 3).vector()
        got = adv.global_adv_loss(clf, x_a, x_b, y, alpha=0.7, epsilon=0.0).item()
        want = classification_loss(clf, x_a, x_b, y, 0.7).item()
        assert got == want

    def test_perturbation_does_not_decrease_loss(self):
        """FGSM ascends: perturbed loss >= clean loss in nearly every draw."""
        rng = np.random.default_rng(2)
        clf = _classifier(6, 4, seed=3)
        wins = 0
        n = 60
        for _ in range(n):
            x_a = Tensor(rng.normal(size=6))
            x_b = Tensor(rng.normal(size=6))
            y = VideoLabel((int(rng.integers(1, 5)),), 4).vector()
            clean = classification_loss(clf, x_a, x_b, y, 1.0).item()
            pert = adv.global_adv_loss(clf, x_a, x_b, y, alpha=1.0, epsilon=1e-3).item()
            wins += pert >= clean - 1e-12
        assert wins / n >= 0.95

    def test_alpha_zero_keeps_action_term_only(self):
        rng = np.random.default_rng(4)
        clf = _classifier(4, 2, seed=5)
        x_a = Tensor(rng.normal(size=4))
        x_b = Tensor(rng.normal(size=4))
        y = VideoLabel((2,), 2).vector()
        eps = 1e-3
        got = adv.global_adv_loss(clf, x_a, x_b, y, alpha=0.0, epsilon=eps).item()
        y_norm = y / y.sum()
        pert = adv.fgsm(
            x_a.detach(), lambda t: nd.cross_entropy(class_probs(clf, t), Tensor(y_norm)), eps
        )
        want = nd.cross_entropy(
            class_probs(clf, nd.add(x_a, Tensor(pert.delta))), Tensor(y_norm)
        ).item()
        assert abs(got - want) < 1e-12

    def test_gradient_matches_finite_differences(self):
        """d global_adv_loss / d W checked by FD with the perturbation frozen."""
        rng = np.random.default_rng(8)
        clf = _classifier(4, 2, seed=9)
        x_a = Tensor(rng.normal(size=4))
        x_b = Tensor(rng.normal(size=4))
        y = VideoLabel((1,), 2).vector()

        def build():
            return adv.global_adv_loss(clf, x_a, x_b, y, alpha=1.0, epsilon=1e-3)

        with GradTape() as tape:
            loss = build()
        analytic = tape.backward(loss)[clf.w]
        numeric = oracles.central_difference(lambda: build().item(), clf.w.values, h=1e-6)
        assert oracles.max_relative_error(analytic, numeric) < 1e-4


def _constant_video(t_len=12, d=3, value=1.0):
    frames = np.full((t_len, d), value)
    lam = Tensor(np.full(t_len, 0.5))
    segments = SegmentSet.from_actions(t_len, [(4, 9)])
    return frames, lam, segments


class TestLocalAdvLoss:
    def test_no_actions_gives_exact_zero(self):
        frames = np.random.default_rng(0).normal(size=(10, 3))
        lam = Tensor(np.full(10, 0.3))
        segments = SegmentSet.from_actions(10, [])
        loss = adv.local_adv_loss(frames, lam, segments, _classifier(3, 2), epsilon=1e-3)
        assert loss.item() == 0.0

    def test_identical_segments_cost_negative_entropy_each(self):
        """Constant video: every pair term is -H(p) of the shared distribution."""
        frames, lam, segments = _constant_video()
        clf = _classifier(3, 2, seed=1)
        p = class_probs(clf, Tensor(frames[0])).values
        entropy = -float(np.sum(p * np.log(p)))
        loss = adv.local_adv_loss(frames, lam, segments, clf, epsilon=0.0)
        assert abs(loss.item() - (-2.0 * entropy)) < 1e-9

    def test_term_count_two_per_interior_action(self):
        frames = np.random.default_rng(2).normal(size=(30, 4))
        lam = Tensor(np.random.default_rng(3).uniform(0.2, 0.8, size=30))
        segments = SegmentSet.from_actions(30, [(3, 8), (12, 20), (24, 28)])
        terms = adv.local_adv_terms(frames, lam, segments, _classifier(4, 2, seed=4), 1e-3)
        assert len(terms) == 6

    def test_pairs_with_empty_windows_skipped(self):
        """An action flush against the video start loses its leading pair."""
        frames = np.random.default_rng(5).normal(size=(20, 3))
        lam = Tensor(np.random.default_rng(6).uniform(0.2, 0.8, size=20))
        segments = SegmentSet.from_actions(20, [(1, 7), (12, 16)])
        terms = adv.local_adv_terms(frames, lam, segments, _classifier(3, 2, seed=7), 1e-3)
        assert len(terms) == 3

    def test_action_covering_whole_video_has_no_terms(self):
        frames = np.random.default_rng(7).normal(size=(15, 3))
        lam = Tensor(np.full(15, 0.7))
        segments = SegmentSet.from_actions(15, [(1, 16)])
        loss = adv.local_adv_loss(frames, lam, segments, _classifier(3, 2, seed=8), 1e-3)
        assert loss.item() == 0.0

    def test_terms_clamped_at_floor(self):
        """Orthogonal segments under a sharp classifier hit the clamp exactly."""
        d = 3
        frames = np.zeros((12, d))
        frames[:4] = 60.0 * np.eye(d)[2]  # background direction
        frames[4:8] = 60.0 * np.eye(d)[0]  # action direction
        frames[8:] = 60.0 * np.eye(d)[2]
        lam_vals = np.full(12, 0.1)
        lam_vals[4:8] = 0.9
        clf = ClassifierParams(w=Tensor(np.eye(d), requires_grad=True))
        segments = SegmentSet.from_actions(12, [(5, 9)])
        terms = adv.local_adv_terms(frames, Tensor(lam_vals), segments, clf, epsilon=0.0)
        assert [t.item() for t in terms] == [-10.0, -10.0]

    def test_custom_clamp_floor(self):
        frames, lam, segments = _constant_video()
        clf = _classifier(3, 2, seed=9)
        terms = adv.local_adv_terms(
            frames, lam, segments, clf, epsilon=0.0, clamp_floor=-0.01
        )
        assert all(t.item() == -0.01 for t in terms)

    def test_reversed_video_swaps_pair_roles(self):
        """Reversing the video yields the role-swapped multiset of pair values."""
        rng = np.random.default_rng(4)
        t_len, d = 40, 4
        frames = rng.normal(size=(t_len, d))
        lam_vals = rng.uniform(0.1, 0.9, size=t_len)
        clf = _classifier(d, 2, seed=11)
        segments = segment_by_attention(lam_vals, 0.5, 3)
        assert len(segments.actions) == 2  # seed chosen for interior segments
        fwd_chain = adv._chain_windows(segments)

        def descriptor(kind, window):
            s, e = window
            rows = frames[s - 1 : e - 1]
            w = lam_vals[s - 1 : e - 1]
            if kind == "background":
                w = 1.0 - w
            return (rows * w[:, None]).sum(axis=0) / w.sum()

        # Expected reversed-term values: role-swapped cross-entropies.
        expected = []
        for i, action in enumerate(segments.actions):
            for pred_idx, targ_idx in [(2 * i, 2 * i + 1), (2 * i + 1, 2 * i + 2)]:
                pw, tw = fwd_chain[pred_idx], fwd_chain[targ_idx]
                if pw[1][0] == pw[1][1] or tw[1][0] == tw[1][1]:
                    continue
                q_pred = oracles.softmax_oracle(clf.w.values @ descriptor(*pw))
                q_targ = oracles.softmax_oracle(clf.w.values @ descriptor(*tw))
                swapped = float(np.sum(q_pred * np.log(np.maximum(q_targ, 1e-12))))
                expected.append(max(swapped, -10.0))

        rev_frames = frames[::-1].copy()
        rev_lam = lam_vals[::-1].copy()
        rev_segments = segment_by_attention(rev_lam, 0.5, 3)
        rev_terms = adv.local_adv_terms(
            rev_frames, Tensor(rev_lam), rev_segments, clf, epsilon=0.0
        )
        got = sorted(t.item() for t in rev_terms)
        np.testing.assert_allclose(got, sorted(expected), atol=1e-9)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        t_len, d = 18, 3
        frames = rng.normal(size=(t_len, d))
        clf = _classifier(d, 2, seed=13)
        segments = SegmentSet.from_actions(t_len, [(5, 10)])
        lam0 = rng.uniform(0.3, 0.7, size=t_len)

        def build(lam_tensor):
            return adv.local_adv_loss(
                frames, lam_tensor, segments, clf, epsilon=1e-3, pool_eps=1e-8
            )

        lam = Tensor(lam0.copy(), requires_grad=True)
        with GradTape() as tape:
            loss = build(lam)
        grads = tape.backward(loss)
        for leaf in (lam, clf.w):
            numeric = oracles.central_difference(
                lambda: build(Tensor(lam.values)).item(), leaf.values, h=1e-6
            )
            analytic = grads.get(leaf, np.zeros_like(leaf.values))
            assert oracles.max_relative_error(analytic, numeric) < 1e-4


class TestAdvLoss:
    def test_weighted_combination(self):
        g = Tensor(2.0)
        l = Tensor(-3.0)
        assert abs(adv.adv_loss(g, l, 0.01).item() - (2.0 - 0.03)) < 1e-15

    def test_beta_zero_keeps_global_only(self):
        assert adv.adv_loss(Tensor(1.5), Tensor(-99.0), 0.0).item() == 1.5
