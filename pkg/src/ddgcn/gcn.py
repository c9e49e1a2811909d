"""Two-layer graph convolution with a hand-written backward pass."""
from dataclasses import dataclass, field

import numpy as np

from .kernels import matmul, relu, relu_grad_mask, softmax_rows

CHECKPOINT_HEADER = "# ddgcn-checkpoint v1"


@dataclass
class GcnModel:
    W1: np.ndarray
    W2: np.ndarray
    tau: float
    dropout_rate: float = 0.1

    @property
    def theta(self):
        return float(np.exp(self.tau))

    @property
    def input_dim(self):
        return self.W1.shape[0]

    @property
    def hidden_dim(self):
        return self.W1.shape[1]

    @property
    def class_count(self):
        return self.W2.shape[1]


@dataclass
class ForwardTrace:
    A_hat: np.ndarray
    H0: np.ndarray
    AH0: np.ndarray
    Z1_pre: np.ndarray
    H1: np.ndarray
    AH1: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    dropout_mask: np.ndarray
    dropout_rate: float = field(default=0.0)


def glorot_uniform(fan_in, fan_out, rng):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(input_dim, hidden_dim, class_count, theta, rng, dropout_rate=0.1):
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError(f"dropout_rate must lie in [0, 1), got {dropout_rate}")
    if not theta > 0:
        raise ValueError(f"theta must be > 0, got {theta}")
    W1 = glorot_uniform(input_dim, hidden_dim, rng)
    W2 = glorot_uniform(hidden_dim, class_count, rng)
    return GcnModel(W1=W1, W2=W2, tau=float(np.log(theta)), dropout_rate=dropout_rate)


def normalize_adjacency(A_prime):
    """``D^-1/2 (A' + I) D^-1/2`` with ``D`` the degree matrix of ``A' + I``."""
    A_prime = np.asarray(A_prime, dtype=np.float64)
    if A_prime.ndim != 2 or A_prime.shape[0] != A_prime.shape[1]:
        raise ValueError(f"adjacency must be square, got {A_prime.shape}")
    if not np.array_equal(A_prime, A_prime.T):
        raise ValueError("adjacency must be symmetric")
    A_tilde = A_prime + np.eye(A_prime.shape[0])
    inv_sqrt = 1.0 / np.sqrt(A_tilde.sum(axis=1))
    return A_tilde * inv_sqrt[:, None] * inv_sqrt[None, :]


def gcn_forward(A_hat, H0, model, training=False, rng=None):
    """Forward pass; inverted dropout after the first ReLU when ``training``.

    ``rng`` may be a seed or a ``numpy.random.Generator``; it is only drawn
    from when dropout is active.
    """
    A_hat = np.asarray(A_hat, dtype=np.float64)
    H0 = np.asarray(H0, dtype=np.float64)
    n = A_hat.shape[0]
    if A_hat.shape != (n, n) or H0.shape[0] != n:
        raise ValueError(f"A_hat {A_hat.shape} and H0 {H0.shape} disagree")
    if H0.shape[1] != model.W1.shape[0] or model.W1.shape[1] != model.W2.shape[0]:
        raise ValueError(
            f"shape mismatch: H0 {H0.shape}, W1 {model.W1.shape}, W2 {model.W2.shape}"
        )
    AH0 = matmul(A_hat, H0)
    Z1 = matmul(AH0, model.W1)
    H1 = relu(Z1)
    p = model.dropout_rate if training else 0.0
    if p > 0.0:
        rng = np.random.default_rng(rng)
        mask = (rng.random(H1.shape) >= p).astype(np.float64)
        H1 = H1 * mask / (1.0 - p)
    else:
        mask = np.ones_like(H1)
    AH1 = matmul(A_hat, H1)
    logits = matmul(AH1, model.W2)
    return ForwardTrace(
        A_hat=A_hat, H0=H0, AH0=AH0, Z1_pre=Z1, H1=H1, AH1=AH1,
        logits=logits, probs=softmax_rows(logits), dropout_mask=mask,
        dropout_rate=p,
    )


def gcn_backward(trace, grad_logits, model):
    """Gradients of a scalar loss w.r.t. ``W1`` and ``W2`` given dL/dlogits."""
    G = np.asarray(grad_logits, dtype=np.float64)
    if G.shape != trace.logits.shape:
        raise ValueError(f"gradient shape {G.shape} != logits shape {trace.logits.shape}")
    if trace.H1.shape[1] != model.W2.shape[0] or trace.H0.shape[1] != model.W1.shape[0]:
        raise ValueError("trace does not belong to this model")
    dW2 = matmul(trace.AH1.T, G)
    dH1 = matmul(trace.A_hat.T, matmul(G, model.W2.T))
    scale = 1.0 / (1.0 - trace.dropout_rate)
    dZ1 = dH1 * trace.dropout_mask * scale * relu_grad_mask(trace.Z1_pre)
    dW1 = matmul(trace.AH0.T, dZ1)
    return dW1, dW2


def theta_gradient(edges, delta, theta, layers=2):
    """d L_graph / d tau where ``theta = exp(tau)``.

    ``log a_ij = -theta * dist_sq`` so each directed edge slot sourced at node
    ``i`` contributes ``delta_i * (-dist_sq) * theta``; every layer shares the
    same graph, hence the ``layers`` factor.
    """
    src, _, _, dist_sq = edges.directed()
    delta = np.asarray(delta, dtype=np.float64)
    return float(layers * theta * np.sum(delta[src] * -dist_sq))


class Adam:
    """Adam with coupled L2 weight decay on the named parameters."""

    def __init__(self, lr=0.005, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=5e-4,
                 decay=("W1", "W2")):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay = set(decay)
        self.t = 0
        self._m = {}
        self._v = {}

    def step(self, params, grads):
        """Return updated copies of ``params`` (a dict of arrays/floats)."""
        self.t += 1
        out = {}
        for name, value in params.items():
            g = np.asarray(grads[name], dtype=np.float64)
            value = np.asarray(value, dtype=np.float64)
            if name in self.decay and self.weight_decay:
                g = g + self.weight_decay * value
            m = self.beta1 * self._m.get(name, 0.0) + (1 - self.beta1) * g
            v = self.beta2 * self._v.get(name, 0.0) + (1 - self.beta2) * g * g
            self._m[name], self._v[name] = m, v
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            out[name] = value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


class SGD:
    def __init__(self, lr=0.005, weight_decay=5e-4, decay=("W1", "W2")):
        self.lr = lr
        self.weight_decay = weight_decay
        self.decay = set(decay)

    def step(self, params, grads):
        out = {}
        for name, value in params.items():
            g = np.asarray(grads[name], dtype=np.float64)
            value = np.asarray(value, dtype=np.float64)
            if name in self.decay and self.weight_decay:
                g = g + self.weight_decay * value
            out[name] = value - self.lr * g
        return out


# ---------------------------------------------------------------------------
# checkpoints


def _fmt(x):
    return format(float(x), ".17g")


def save_checkpoint(model, path):
    lines = [CHECKPOINT_HEADER]
    lines.append(f"dims {model.input_dim} {model.hidden_dim} {model.class_count}")
    lines.append(f"dropout_rate {_fmt(model.dropout_rate)}")
    lines.append(f"tau {_fmt(model.tau)}")
    for name in ("W1", "W2"):
        arr = getattr(model, name)
        lines.append(f"{name} {arr.shape[0]} {arr.shape[1]}")
        lines.extend(" ".join(_fmt(v) for v in row) for row in arr)
    text = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ValueError(f"{path}: not a ddgcn checkpoint (bad header)")
    fields = {}
    arrays = {}
    pos = 1
    while pos < len(lines):
        parts = lines[pos].split()
        pos += 1
        if not parts:
            continue
        key = parts[0]
        if key in ("W1", "W2"):
            rows, cols = int(parts[1]), int(parts[2])
            block = lines[pos:pos + rows]
            pos += rows
            arr = np.array([[float(v) for v in row.split()] for row in block])
            arrays[key] = arr.reshape(rows, cols)
        else:
            fields[key] = parts[1:]
    dims = [int(v) for v in fields["dims"]]
    model = GcnModel(
        W1=arrays["W1"], W2=arrays["W2"], tau=float(fields["tau"][0]),
        dropout_rate=float(fields["dropout_rate"][0]),
    )
    if [model.input_dim, model.hidden_dim, model.class_count] != dims:
        raise ValueError(f"{path}: dims header {dims} disagrees with stored arrays")
    return model
