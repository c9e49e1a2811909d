import math

import numpy as np
import pytest

from ddgcn.dynamic_graph import Edges, build_subject_graph
from ddgcn.gcn import (
    Adam,
    GcnModel,
    SGD,
    gcn_backward,
    gcn_forward,
    init_model,
    load_checkpoint,
    normalize_adjacency,
    save_checkpoint,
    theta_gradient,
)
from ddgcn.kernels import softmax_rows
from ddgcn.loss import graph_loss

from oracles import analytic_gradients, central_difference, gradient_instance, max_relative_error, numeric_gradients


def identity_model(d, dropout=0.0):
    return GcnModel(W1=np.eye(d), W2=np.eye(d), tau=0.0, dropout_rate=dropout)


class TestNormalizeAdjacency:
    def test_pair(self):
        np.testing.assert_allclose(normalize_adjacency([[0.0, 1.0], [1.0, 0.0]]),
                                   np.full((2, 2), 0.5), rtol=1e-15)

    def test_no_edges(self):
        np.testing.assert_array_equal(normalize_adjacency(np.zeros((4, 4))), np.eye(4))

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            normalize_adjacency([[0.0, 1.0], [0.0, 0.0]])

    def test_largest_eigenvalue_is_one(self, rng):
        g = build_subject_graph(rng.normal(size=(20, 3)), 1.0, 3)
        A_hat = normalize_adjacency(g.A_prime)
        v = np.ones(20)
        for _ in range(2000):
            v = A_hat @ v
            v /= np.linalg.norm(v)
        assert v @ A_hat @ v == pytest.approx(1.0, abs=1e-6)
        eig = np.linalg.eigvalsh(A_hat)
        assert eig.min() >= -1 - 1e-6 and eig.max() <= 1 + 1e-6


class TestForward:
    def test_identity_propagation(self, rng):
        H0 = rng.uniform(0, 2, size=(5, 3))
        trace = gcn_forward(np.eye(5), H0, identity_model(3))
        np.testing.assert_allclose(trace.probs, softmax_rows(H0), rtol=1e-14)

    def test_softmax_values(self):
        p = softmax_rows(np.array([[0.0, 0.0], [math.log(3), 0.0]]))
        np.testing.assert_allclose(p, [[0.5, 0.5], [0.75, 0.25]], rtol=1e-14)

    def test_rows_stochastic(self, rng):
        model = init_model(4, 6, 2, 1.0, rng)
        trace = gcn_forward(np.eye(7), rng.normal(scale=1e3, size=(7, 4)), model)
        np.testing.assert_allclose(trace.probs.sum(axis=1), 1.0, atol=1e-9)

    def test_permutation_equivariance(self, rng):
        g = build_subject_graph(rng.normal(size=(10, 3)), 1.0, 3)
        A_hat = normalize_adjacency(g.A_prime)
        H0 = rng.normal(size=(10, 3))
        model = init_model(3, 5, 2, 1.0, rng)
        P = np.eye(10)[rng.permutation(10)]
        base = gcn_forward(A_hat, H0, model).probs
        perm = gcn_forward(P @ A_hat @ P.T, P @ H0, model).probs
        np.testing.assert_allclose(perm, P @ base, atol=1e-12)

    def test_dropout_only_in_training(self, rng):
        model = init_model(3, 50, 2, 1.0, rng, dropout_rate=0.5)
        H0 = rng.uniform(1, 2, size=(4, 3))
        evals = gcn_forward(np.eye(4), H0, model)
        np.testing.assert_array_equal(evals.dropout_mask, 1.0)
        train = gcn_forward(np.eye(4), H0, model, training=True, rng=3)
        kept = train.dropout_mask
        assert 0 < kept.mean() < 1
        np.testing.assert_allclose(train.H1, np.maximum(evals.Z1_pre, 0) * kept / 0.5)

    def test_dropout_seeded(self, rng):
        model = init_model(3, 20, 2, 1.0, rng, dropout_rate=0.3)
        H0 = rng.normal(size=(6, 3))
        a = gcn_forward(np.eye(6), H0, model, training=True, rng=11)
        b = gcn_forward(np.eye(6), H0, model, training=True, rng=11)
        assert a.logits.tobytes() == b.logits.tobytes()

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="shape"):
            gcn_forward(np.eye(3), np.ones((3, 4)), init_model(5, 2, 2, 1.0, rng))


class TestBackward:
    def test_zero_upstream(self, rng):
        inst = gradient_instance(1)
        trace = gcn_forward(inst["A_hat"], inst["H0"], inst["model"])
        dW1, dW2 = gcn_backward(trace, np.zeros_like(trace.logits), inst["model"])
        assert not dW1.any() and not dW2.any()

    def test_single_node_chain(self):
        # L = logits[0, 0] with A_hat = [1], h0 = 2, W1 = [[3]], W2 = [[5, 0]]
        model = GcnModel(W1=np.array([[3.0]]), W2=np.array([[5.0, 0.0]]), tau=0.0, dropout_rate=0.0)
        trace = gcn_forward(np.ones((1, 1)), np.array([[2.0]]), model)
        dW1, dW2 = gcn_backward(trace, np.array([[1.0, 0.0]]), model)
        # dL/dW2[0,0] = relu(h0 * W1) = 6, dL/dW1 = h0 * W2[0,0] = 10
        assert dW2.tolist() == [[6.0, 0.0]]
        assert dW1.tolist() == [[10.0]]

    def test_matches_finite_differences(self):
        inst = gradient_instance(5, lambda2=0.0)
        a1, a2, _ = analytic_gradients(inst)
        n1, n2, _ = numeric_gradients(inst)
        assert max_relative_error(a1, n1) < 1e-5
        assert max_relative_error(a2, n2) < 1e-5

    def test_dropout_scaling(self, rng):
        model = init_model(3, 8, 2, 1.0, rng, dropout_rate=0.4)
        H0 = rng.normal(size=(5, 3))
        trace = gcn_forward(np.eye(5), H0, model, training=True, rng=2)
        G = rng.normal(size=trace.logits.shape)

        def loss(W1):
            m = GcnModel(W1=W1, W2=model.W2, tau=0.0, dropout_rate=0.4)
            t = gcn_forward(np.eye(5), H0, m, training=True, rng=2)
            return float(np.sum(t.logits * G))

        dW1, _ = gcn_backward(trace, G, model)
        np.testing.assert_allclose(dW1, central_difference(loss, model.W1, 1e-6), atol=1e-6)

    def test_mismatched_trace(self, rng):
        inst = gradient_instance(2)
        trace = gcn_forward(inst["A_hat"], inst["H0"], inst["model"])
        other = init_model(5, 7, 2, 1.0, rng)
        with pytest.raises(ValueError):
            gcn_backward(trace, np.zeros_like(trace.logits), other)


class TestThetaGradient:
    def _single(self, dist_sq, theta):
        return Edges(np.array([0]), np.array([1]), np.array([math.exp(-theta * dist_sq)]),
                     np.array([dist_sq]))

    def test_zero_delta(self):
        assert theta_gradient(self._single(2.0, 1.0), np.zeros(2), 1.0) == 0.0

    def test_hand_chain(self):
        assert theta_gradient(self._single(2.0, 1.0), np.array([1.0, 0.0]), 1.0, layers=1) == -2.0

    def test_finite_difference(self, rng):
        g = build_subject_graph(rng.normal(size=(10, 3)), 0.7, 3)
        delta = rng.uniform(-1, 1, 10)
        tau = math.log(0.7)
        fd = central_difference(lambda t: graph_loss(g.edges.reweighted(math.exp(t[0])), delta),
                                np.array([tau]), 1e-6)[0]
        assert theta_gradient(g.edges, delta, 0.7) == pytest.approx(fd, rel=1e-6)


class TestOptimizers:
    def test_adam_first_step_is_lr_sized(self):
        opt = Adam(lr=0.1, weight_decay=0.0)
        out = opt.step({"W1": np.array([1.0, -1.0])}, {"W1": np.array([3.0, -0.01])})
        np.testing.assert_allclose(out["W1"], [0.9, -0.9], rtol=1e-6)

    def test_weight_decay_only_on_weights(self):
        opt = SGD(lr=1.0, weight_decay=0.5)
        out = opt.step({"W1": np.array([2.0]), "tau": 2.0}, {"W1": np.array([0.0]), "tau": 0.0})
        assert out["W1"].tolist() == [1.0]
        assert float(out["tau"]) == 2.0


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        model = init_model(7, 5, 2, 0.123456789, rng, dropout_rate=0.1)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        back = load_checkpoint(path)
        assert back.W1.tobytes() == model.W1.tobytes()
        assert back.W2.tobytes() == model.W2.tobytes()
        assert back.tau == model.tau and back.dropout_rate == model.dropout_rate

    def test_bad_header(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_text("hello\n")
        with pytest.raises(ValueError, match="header"):
            load_checkpoint(path)
