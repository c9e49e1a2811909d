"""Dense matrix primitives shared by the pipeline.

Every hot kernel has two implementations: a numba-compiled loop version and a
vectorised numpy version. The public functions dispatch on
:data:`ddgcn._backend.USE_NUMBA`; both variants stay importable so tests and
the benchmark can compare them directly.
"""
import numpy as np

from ._backend import USE_NUMBA, njit


class ConvergenceError(RuntimeError):
    """Power iteration hit ``max_iters``; ``estimate`` holds the last iterate."""

    def __init__(self, message, estimate, iterations):
        super().__init__(message)
        self.estimate = estimate
        self.iterations = iterations


def _as_matrix(m, name):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    return m


# ---------------------------------------------------------------------------
# matmul


def _matmul_loops(a, b):
    n, p = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for k in range(p):
            aik = a[i, k]
            if aik == 0.0:
                continue
            for j in range(m):
                out[i, j] += aik * b[k, j]
    return out


_matmul_numba = njit(_matmul_loops)


def _matmul_numpy(a, b):
    return a @ b


def matmul(a, b):
    """Matrix product ``a @ b`` with a fixed accumulation order."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if USE_NUMBA:
        return _matmul_numba(np.ascontiguousarray(a), np.ascontiguousarray(b))
    return _matmul_numpy(a, b)


# ---------------------------------------------------------------------------
# spectral radius


def _power_iteration_loops(m, max_iters, tol):
    n = m.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    lam_prev = np.nan
    lam = 0.0
    for it in range(1, max_iters + 1):
        w = np.zeros(n)
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += m[i, j] * v[j]
            w[i] = acc
        lam = 0.0
        norm_sq = 0.0
        for i in range(n):
            lam += v[i] * w[i]
            norm_sq += w[i] * w[i]
        if norm_sq == 0.0:
            return 0.0, True, it
        norm = np.sqrt(norm_sq)
        for i in range(n):
            v[i] = w[i] / norm
        if abs(lam - lam_prev) < tol * max(1.0, abs(lam)):
            return abs(lam), True, it
        lam_prev = lam
    return abs(lam), False, max_iters


_power_iteration_numba = njit(_power_iteration_loops)


def _power_iteration_numpy(m, max_iters, tol):
    n = m.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    lam_prev = np.nan
    lam = 0.0
    for it in range(1, max_iters + 1):
        w = m @ v
        lam = float(v @ w)
        norm = float(np.sqrt(w @ w))
        if norm == 0.0:
            return 0.0, True, it
        v = w / norm
        if abs(lam - lam_prev) < tol * max(1.0, abs(lam)):
            return abs(lam), True, it
        lam_prev = lam
    return abs(lam), False, max_iters


def spectral_radius(m, max_iters=1000, tol=1e-10):
    """Largest absolute eigenvalue of a symmetric nonnegative matrix.

    Power iteration from the all-ones vector, stopping when successive
    Rayleigh quotients agree to ``tol`` (scaled by ``max(1, |lambda|)``).
    Raises :class:`ConvergenceError` carrying the last estimate otherwise.
    """
    m = _as_matrix(m, "m")
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"spectral_radius needs a square matrix, got {m.shape}")
    if m.shape[0] == 0:
        return 0.0
    if USE_NUMBA:
        lam, ok, iters = _power_iteration_numba(np.ascontiguousarray(m), max_iters, tol)
    else:
        lam, ok, iters = _power_iteration_numpy(m, max_iters, tol)
    if not ok:
        raise ConvergenceError(
            f"power iteration did not converge in {iters} iterations", lam, iters
        )
    return float(lam)


# ---------------------------------------------------------------------------
# pairwise squared distances


def _pairwise_loops(h):
    n, d = h.shape
    sq = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(d):
            acc += h[i, t] * h[i, t]
        sq[i] = acc
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dot = 0.0
            for t in range(d):
                dot += h[i, t] * h[j, t]
            val = sq[i] + sq[j] - 2.0 * dot
            if val < 0.0:
                val = 0.0
            out[i, j] = val
            out[j, i] = val
    return out


_pairwise_numba = njit(_pairwise_loops)


def _pairwise_numpy(h):
    sq = np.einsum("ij,ij->i", h, h)
    out = sq[:, None] + sq[None, :] - 2.0 * (h @ h.T)
    out = 0.5 * (out + out.T)
    np.maximum(out, 0.0, out=out)
    np.fill_diagonal(out, 0.0)
    return out


def pairwise_sq_euclidean(h):
    """N x N squared Euclidean distances between the rows of ``h``."""
    h = _as_matrix(h, "h")
    if USE_NUMBA:
        return _pairwise_numba(np.ascontiguousarray(h))
    return _pairwise_numpy(h)


# ---------------------------------------------------------------------------
# k-nearest selection


def _knn_loops(scores, k):
    n = scores.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        order = np.argsort(-scores[i], kind="mergesort")
        c = 0
        for j in order:
            if j == i:
                continue
            out[i, c] = j
            c += 1
            if c == k:
                break
    return out


_knn_numba = njit(_knn_loops)


def _knn_numpy(scores, k):
    n = scores.shape[0]
    order = np.argsort(-scores, axis=1, kind="stable")
    keep = order != np.arange(n)[:, None]
    return order[keep].reshape(n, n - 1)[:, :k]


def top_k_neighbors(scores, k):
    """Indices of the ``k`` highest-scoring columns per row, self excluded.

    Ties go to the lower column index.
    """
    scores = _as_matrix(scores, "scores")
    n = scores.shape[0]
    if scores.shape[1] != n:
        raise ValueError(f"scores must be square, got {scores.shape}")
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < N={n}, got {k}")
    if USE_NUMBA:
        return _knn_numba(np.ascontiguousarray(scores), k)
    return _knn_numpy(scores, k)


# ---------------------------------------------------------------------------
# elementwise


def relu(m):
    return np.maximum(np.asarray(m, dtype=np.float64), 0.0)


def relu_grad_mask(m):
    """1.0 where ``m > 0`` else 0.0 (the derivative at 0 is taken as 0)."""
    return (np.asarray(m) > 0).astype(np.float64)


def softmax_rows(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
