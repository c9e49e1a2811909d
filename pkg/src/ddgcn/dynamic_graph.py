"""Subject graph construction from energy-weighted features.

``H = X (C + lambda1 * C_prev)`` re-weights the subject features, Gaussian
affinities ``exp(-theta * |h_i - h_j|^2)`` relate subjects, and a k-nearest
neighbour rule keeps the strongest links as an unweighted symmetric graph.
"""
from dataclasses import dataclass

import numpy as np

from .kernels import matmul, pairwise_sq_euclidean, top_k_neighbors


@dataclass(frozen=True)
class Edges:
    """Undirected retained edges ``i < j`` with their affinity and distance."""

    i: np.ndarray
    j: np.ndarray
    weight: np.ndarray
    dist_sq: np.ndarray

    def __len__(self):
        return int(self.i.shape[0])

    def __iter__(self):
        for a, b, w in zip(self.i.tolist(), self.j.tolist(), self.weight.tolist()):
            yield a, b, w

    def directed(self):
        """Both orientations of every edge as ``(src, dst, weight, dist_sq)``."""
        return (
            np.concatenate([self.i, self.j]),
            np.concatenate([self.j, self.i]),
            np.concatenate([self.weight, self.weight]),
            np.concatenate([self.dist_sq, self.dist_sq]),
        )

    def reweighted(self, theta):
        """Same topology, weights recomputed for a new kernel width."""
        return Edges(self.i, self.j, np.exp(-theta * self.dist_sq), self.dist_sq)


@dataclass(frozen=True)
class SubjectGraph:
    A: np.ndarray
    A_prime: np.ndarray
    edges: Edges
    theta: float
    k: int


def fuse_features(X, C, C_prev=None, lambda1=0.0):
    """Energy-weighted features ``X (C + lambda1 * C_prev)``.

    Without ``C_prev`` (or with ``lambda1 == 0``) this is exactly ``X C``.
    """
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if lambda1 < 0:
        raise ValueError(f"lambda1 must be >= 0, got {lambda1}")
    if C.ndim != 2 or C.shape[0] != C.shape[1] or X.shape[1] != C.shape[0]:
        raise ValueError(f"cannot fuse X {X.shape} with C {C.shape}")
    if C_prev is None or lambda1 == 0:
        return matmul(X, C)
    C_prev = np.asarray(C_prev, dtype=np.float64)
    if C_prev.shape != C.shape:
        raise ValueError(f"C_prev {C_prev.shape} does not match C {C.shape}")
    return matmul(X, C + lambda1 * C_prev)


def pairwise_affinity(H, theta, dist_sq=None):
    if not theta > 0:
        raise ValueError(f"theta must be > 0, got {theta}")
    if dist_sq is None:
        dist_sq = pairwise_sq_euclidean(H)
    A = np.exp(-theta * dist_sq)
    np.fill_diagonal(A, 1.0)
    return A


def median_heuristic(dist_sq):
    """``1 / median`` of the off-diagonal squared distances."""
    n = dist_sq.shape[0]
    off = dist_sq[~np.eye(n, dtype=bool)]
    med = float(np.median(off)) if off.size else 0.0
    return 1.0 / med if med > 0 else 1.0


def knn_sparsify(A, k, dist_sq=None):
    """Union-symmetrised k-nearest-neighbour graph of a similarity matrix.

    Each node keeps its ``k`` most similar other nodes (ties to the lower
    index); ``A'[i, j] = 1`` when either endpoint picked the other. Returns
    ``(A_prime, edges)`` where ``edges`` carries ``A[i, j]`` for every retained
    pair ``i < j``.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of nodes N={n}")
    nbrs = top_k_neighbors(A, k)
    A_prime = np.zeros((n, n))
    rows = np.repeat(np.arange(n), k)
    A_prime[rows, nbrs.ravel()] = 1.0
    A_prime = np.maximum(A_prime, A_prime.T)
    iu, ju = np.nonzero(np.triu(A_prime, 1))
    if dist_sq is None:
        dist = np.full(iu.shape, np.nan)
    else:
        dist = np.asarray(dist_sq, dtype=np.float64)[iu, ju]
    return A_prime, Edges(iu, ju, A[iu, ju], dist)


def build_subject_graph(H, theta, k, dist_sq=None):
    """Affinities plus KNN graph for fused features ``H``.

    Neighbours are ranked on ``-dist_sq``, which orders pairs exactly like the
    affinities but does not collapse into ties when ``exp`` underflows.
    """
    if dist_sq is None:
        dist_sq = pairwise_sq_euclidean(H)
    A = pairwise_affinity(H, theta, dist_sq)
    A_prime, _ = knn_sparsify(-dist_sq, k)
    iu, ju = np.nonzero(np.triu(A_prime, 1))
    edges = Edges(iu, ju, A[iu, ju], dist_sq[iu, ju])
    return SubjectGraph(A=A, A_prime=A_prime, edges=edges, theta=float(theta), k=int(k))
