"""Cross-entropy, the accuracy reward and the edge-weighted graph loss."""
from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12
LOG_FLOOR = 1e-12


def _mask(mask, n):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ValueError(f"mask shape {mask.shape} does not match {n} nodes")
    if not mask.any():
        raise ValueError("mask selects no nodes")
    return mask


def cross_entropy(probs, labels, mask, reduction="mean"):
    """Masked cross-entropy and its gradient with respect to the logits.

    ``probs`` are softmax outputs; the returned gradient is
    ``(probs - onehot) / |mask|`` on masked rows (no division for
    ``reduction="sum"``) and zero elsewhere.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = probs.shape
    mask = _mask(mask, n)
    if reduction not in ("mean", "sum"):
        raise ValueError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    idx = np.nonzero(mask)[0]
    p_true = np.maximum(probs[idx, labels[idx]], PROB_FLOOR)
    norm = idx.size if reduction == "mean" else 1
    loss = float(-np.sum(np.log(p_true)) / norm)
    grad = np.zeros_like(probs)
    grad[idx] = probs[idx]
    grad[idx, labels[idx]] -= 1.0
    grad /= norm
    return loss, grad


@dataclass(frozen=True)
class RewardState:
    running_accuracy: float | None = None
    momentum: float = 0.9
    delta: np.ndarray | None = None


def compute_rewards(predictions, labels, mask, state):
    """Update the running accuracy and per-node rewards ``delta = E_a - a``.

    ``E_a`` is an exponential moving average of masked accuracy, seeded with
    the first call's accuracy. Unmasked nodes get ``delta = 0``.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    mask = _mask(mask, labels.shape[0])
    correct = (predictions == labels).astype(np.float64)
    acc = float(correct[mask].mean())
    if state.running_accuracy is None:
        ema = acc
    else:
        ema = state.momentum * state.running_accuracy + (1.0 - state.momentum) * acc
    delta = np.where(mask, ema - correct, 0.0)
    return RewardState(running_accuracy=ema, momentum=state.momentum, delta=delta)


def graph_loss(edges, delta, layers=2):
    """Sum of ``delta_src * log a`` over directed edge slots and layers."""
    src, _, weight, _ = edges.directed()
    delta = np.asarray(delta, dtype=np.float64)
    if src.size == 0:
        return 0.0
    logs = np.log(np.maximum(weight, LOG_FLOOR))
    return float(layers * np.sum(delta[src] * logs))


def graph_loss_weight_grad(edges, delta, layers=2):
    """d L_graph / d a for every directed slot, aligned with ``edges.directed()``."""
    src, _, weight, _ = edges.directed()
    delta = np.asarray(delta, dtype=np.float64)
    return layers * delta[src] / np.maximum(weight, LOG_FLOOR)


def total_loss(l_ce, l_graph, lambda2):
    if lambda2 < 0:
        raise ValueError(f"lambda2 must be >= 0, got {lambda2}")
    return l_ce + lambda2 * l_graph
