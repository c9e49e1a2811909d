"""Feature scoring, the rank-one feature graph and its energy matrix.

Features are scored by a Fisher criterion and by mutual information with the
label, the two scores are blended into ``s``, and the feature graph
``S = s s^T`` is turned into an energy matrix ``C = (I - rS)^-1 - I`` with
``r = 0.9 / rho(S)``. Row sums of ``C`` rank the features.
"""
from dataclasses import dataclass

import numpy as np

from .kernels import spectral_radius

FISHER_EPS = 1e-12
DAMPING = 0.9


def _binary_classes(y):
    y = np.asarray(y)
    classes = np.unique(y)
    if classes.size != 2:
        raise ValueError(f"expected exactly 2 classes, found {classes.size}: {classes.tolist()}")
    return classes


def fisher_scores(X, y):
    """Per-feature Fisher criterion for a binary task.

    Uses population (1/n) variances and adds 1e-12 to the denominator so that
    zero-variance features score 0 instead of NaN.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"X {X.shape} and y {y.shape} disagree")
    c0, c1 = _binary_classes(y)
    a, b = X[y == c0], X[y == c1]
    gap = (a.mean(axis=0) - b.mean(axis=0)) ** 2
    return gap / (a.var(axis=0) + b.var(axis=0) + FISHER_EPS)


def discretize(X, bins=10):
    """Equal-width bin index of every entry, per column.

    Constant columns map to bin 0.
    """
    X = np.asarray(X, dtype=np.float64)
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    idx = np.floor((X - lo) / safe * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    idx[:, span == 0] = 0
    return idx


def mutual_information_scores(X, y, bins=10, normalize=False):
    """Mutual information (natural log) between each binned feature and ``y``.

    With ``normalize=True`` each score is divided by the joint entropy of
    (binned feature, label); the default is the plain formula.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("mutual information needs a non-empty 2-D dataset")
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    n, d = X.shape
    _, y_idx = np.unique(y, return_inverse=True)
    n_classes = int(y_idx.max()) + 1
    z = discretize(X, bins)

    scores = np.empty(d)
    for i in range(d):
        joint = np.zeros((bins, n_classes))
        np.add.at(joint, (z[:, i], y_idx), 1.0)
        joint /= n
        pz = joint.sum(axis=1, keepdims=True)
        py = joint.sum(axis=0, keepdims=True)
        nz = joint > 0
        mi = float(np.sum(joint[nz] * np.log(joint[nz] / (pz @ py)[nz])))
        mi = max(mi, 0.0)
        if normalize:
            h = -float(np.sum(joint[nz] * np.log(joint[nz])))
            mi = mi / h if h > 0 else 0.0
        scores[i] = mi
    return scores


def minmax(v):
    """Rescale to [0, 1]. A constant vector maps to ones (zeros if all zero)."""
    v = np.asarray(v, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi > lo:
        return (v - lo) / (hi - lo)
    return np.ones_like(v) if hi > 0 else np.zeros_like(v)


def combine_scores(w, m, alpha=0.5, rescale=True):
    """``s = alpha * w + (1 - alpha) * m`` after optional min-max rescaling."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    w = np.asarray(w, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if w.shape != m.shape:
        raise ValueError(f"score vectors differ in shape: {w.shape} vs {m.shape}")
    if rescale:
        w, m = minmax(w), minmax(m)
    return w * alpha + m * (1.0 - alpha)


def feature_adjacency(s):
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("feature scores must be nonnegative")
    return np.outer(s, s)


def energy_matrix(S, method="solve"):
    """Return ``(r, C)`` for the feature adjacency ``S``.

    ``method="solve"`` solves ``(I - rS) Z = I`` densely; ``method="rank_one"``
    assumes ``S = s s^T`` and uses ``C = 9 s s^T / |s|^2``, recovering ``s``
    from the diagonal.
    """
    S = np.asarray(S, dtype=np.float64)
    rho = spectral_radius(S)
    if rho <= 0.0:
        raise ValueError(
            "feature graph has spectral radius 0: no feature is informative "
            "(all combined scores are zero)"
        )
    r = DAMPING / rho
    d = S.shape[0]
    if method == "solve":
        eye = np.eye(d)
        C = np.linalg.solve(eye - r * S, eye) - eye
        C = np.maximum(0.5 * (C + C.T), 0.0)
    elif method == "rank_one":
        s = np.sqrt(np.clip(np.diag(S), 0.0, None))
        C = energy_matrix_rank_one(s)
        r = DAMPING / float(s @ s)
    else:
        raise ValueError(f"unknown method {method!r}")
    return r, C


def energy_matrix_rank_one(s):
    s = np.asarray(s, dtype=np.float64)
    norm_sq = float(s @ s)
    if norm_sq <= 0.0:
        raise ValueError("all feature scores are zero: no feature is informative")
    return (DAMPING / (1.0 - DAMPING)) * np.outer(s, s) / norm_sq


def relevance_scores(C):
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"C must be square, got {C.shape}")
    # row sums rather than a BLAS product: identical rows must give identical sums
    return C.sum(axis=1)


def select_top_k(c_tilde, k):
    """Indices of the ``k`` largest scores, descending, ties to lower index."""
    c_tilde = np.asarray(c_tilde, dtype=np.float64)
    d = c_tilde.shape[0]
    if not 1 <= k <= d:
        raise ValueError(f"k must satisfy 1 <= k <= {d}, got {k}")
    return np.argsort(-c_tilde, kind="stable")[:k]


@dataclass(frozen=True)
class FeatureGraphState:
    w: np.ndarray
    m: np.ndarray
    alpha: float
    s: np.ndarray
    S: np.ndarray
    rho: float
    r: float
    C: np.ndarray
    c_tilde: np.ndarray


def build_feature_graph(X, y, alpha=0.5, bins=10, rescale=True, normalize_mi=False,
                        method="rank_one"):
    """Run the whole scoring chain on ``(X, y)`` and keep every intermediate.

    ``S`` is rank one by construction, so the closed form is the default; it
    keeps equal scores bit-identical in ``c_tilde`` where the dense solve
    would perturb them by round-off.
    """
    w = fisher_scores(X, y)
    m = mutual_information_scores(X, y, bins=bins, normalize=normalize_mi)
    s = combine_scores(w, m, alpha, rescale=rescale)
    S = feature_adjacency(s)
    r, C = energy_matrix(S, method=method)
    return FeatureGraphState(
        w=w, m=m, alpha=alpha, s=s, S=S, rho=spectral_radius(S), r=r, C=C,
        c_tilde=relevance_scores(C),
    )
