import math

import numpy as np
import pytest

from ddgcn.dynamic_graph import Edges, build_subject_graph
from ddgcn.kernels import softmax_rows
from ddgcn.loss import (
    RewardState,
    compute_rewards,
    cross_entropy,
    graph_loss,
    graph_loss_weight_grad,
    total_loss,
)

from oracles import central_difference


class TestCrossEntropy:
    def test_perfect(self):
        loss, _ = cross_entropy(np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 1], [True, True])
        assert loss == 0.0

    def test_half(self):
        loss, _ = cross_entropy(np.array([[0.5, 0.5]]), [1], [True])
        assert loss == pytest.approx(math.log(2))

    def test_gradient_at_logits(self, rng):
        logits = rng.normal(size=(10, 3))
        labels = rng.integers(0, 3, 10)
        mask = rng.random(10) < 0.6
        mask[0] = True
        _, grad = cross_entropy(softmax_rows(logits), labels, mask)
        fd = central_difference(lambda z: cross_entropy(softmax_rows(z), labels, mask)[0],
                                logits, 1e-6)
        np.testing.assert_allclose(grad, fd, atol=1e-6)
        assert not grad[~mask].any()

    def test_sum_reduction(self, rng):
        probs = softmax_rows(rng.normal(size=(6, 2)))
        labels, mask = rng.integers(0, 2, 6), np.ones(6, bool)
        mean, gmean = cross_entropy(probs, labels, mask)
        total, gsum = cross_entropy(probs, labels, mask, reduction="sum")
        assert total == pytest.approx(6 * mean)
        np.testing.assert_allclose(gsum, 6 * gmean)

    def test_floor(self):
        loss, _ = cross_entropy(np.array([[1.0, 0.0]]), [1], [True])
        assert loss == pytest.approx(-math.log(1e-12))

    def test_empty_mask(self):
        with pytest.raises(ValueError, match="no nodes"):
            cross_entropy(np.array([[0.5, 0.5]]), [0], [False])

    def test_nonnegative(self, rng):
        for _ in range(20):
            probs = softmax_rows(rng.normal(scale=5, size=(8, 2)))
            assert cross_entropy(probs, rng.integers(0, 2, 8), np.ones(8, bool))[0] >= 0


class TestRewards:
    def _state(self, ema):
        return RewardState(running_accuracy=ema, momentum=1.0)

    def test_correct_and_incorrect(self):
        st = compute_rewards([1, 0], [1, 1], [True, True], self._state(0.8))
        np.testing.assert_allclose(st.delta, [-0.2, 0.8])

    def test_unmasked_zero(self):
        st = compute_rewards([1, 0, 0], [1, 1, 1], [True, True, False], self._state(0.5))
        assert st.delta[2] == 0.0

    def test_first_call_seeds_average(self):
        st = compute_rewards([1, 0, 1, 1], [1, 1, 1, 1], [True] * 4, RewardState())
        assert st.running_accuracy == 0.75

    def test_fixed_point(self):
        st = RewardState(running_accuracy=0.3)
        for _ in range(400):
            st = compute_rewards([1, 1, 0], [1, 1, 0], [True] * 3, st)
        assert st.running_accuracy == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(st.delta, 0.0, atol=1e-12)

    def test_delta_bounds_and_sign(self, rng):
        st = RewardState()
        for _ in range(50):
            labels = rng.integers(0, 2, 12)
            pred = rng.integers(0, 2, 12)
            mask = rng.random(12) < 0.7
            mask[0] = True
            st = compute_rewards(pred, labels, mask, st)
            assert np.all(np.abs(st.delta) <= 1)
            if 0 < st.running_accuracy < 1:
                correct = (pred == labels) & mask
                assert np.all(st.delta[correct] < 0)
                assert np.all(st.delta[mask & ~correct] > 0)


def one_edge(weight):
    return Edges(np.array([0]), np.array([1]), np.array([weight]), np.array([-math.log(weight)]))


class TestGraphLoss:
    def test_zero_delta(self, rng):
        g = build_subject_graph(rng.normal(size=(8, 2)), 1.0, 2)
        assert graph_loss(g.edges, np.zeros(8)) == 0.0

    def test_hand_value(self):
        assert graph_loss(one_edge(math.exp(-1)), np.array([-0.2, 0.0])) == pytest.approx(0.4)

    def test_brute_force(self, rng):
        n = 9
        g = build_subject_graph(rng.normal(size=(n, 3)), 0.6, 2)
        delta = rng.uniform(-1, 1, n)
        expected = 0.0
        for _layer in range(2):
            for i in range(n):
                for j in range(n):
                    if g.A_prime[i, j]:
                        expected += delta[i] * math.log(g.A[i, j])
        assert graph_loss(g.edges, delta) == pytest.approx(expected, rel=1e-12)

    def test_weight_gradient_sign(self, rng):
        g = build_subject_graph(rng.normal(size=(10, 2)), 0.5, 3)
        delta = rng.uniform(-1, 1, 10)
        src, _, _, _ = g.edges.directed()
        grad = graph_loss_weight_grad(g.edges, delta)
        np.testing.assert_array_equal(np.sign(grad), np.sign(delta[src]))

    def test_log_floor(self):
        underflowed = Edges(np.array([0]), np.array([1]), np.array([0.0]), np.array([1e6]))
        assert graph_loss(underflowed, np.array([1.0, 0.0])) == pytest.approx(2 * np.log(1e-12))


class TestTotal:
    def test_values(self):
        assert total_loss(0.5, 0.4, 0.0) == 0.5
        assert total_loss(0.5, 0.4, 1.0) == pytest.approx(0.9)
        assert total_loss(0.5, 0.4, 0.8) == pytest.approx(0.82)

    def test_affine(self):
        a, b = total_loss(0.3, -1.7, 0.2), total_loss(0.3, -1.7, 0.6)
        assert (b - a) / 0.4 == pytest.approx(-1.7)

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            total_loss(1.0, 1.0, -0.1)
