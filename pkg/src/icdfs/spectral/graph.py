"""k-nearest-neighbour graphs, Laplacian Score and spectral embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackNoConvergence, eigsh
from scipy.spatial.distance import cdist

from ..cohort import BinaryMatrix
from ..errors import ConvergenceFailure, EmptyGraph, TooFewNodes
from ..selection import SelectionResult, rank_descending

DENSE_EIGEN_LIMIT = 500


@dataclass
class KnnGraph:
    n: int
    adjacency: sp.csr_matrix  # symmetric 0/1, no self loops
    k: int
    axis: str = "samples"

    @property
    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()


def as_dense(X, dtype=np.float64) -> np.ndarray:
    if isinstance(X, BinaryMatrix):
        return X.toarray(dtype)
    if sp.issparse(X):
        return X.toarray().astype(dtype, copy=False)
    return np.asarray(X, dtype=dtype)


def _is_integral(A):
    return np.array_equal(A, np.round(A))


def pairwise_sq_distances(A, rows=None):
    """Squared Euclidean distances from ``A[rows]`` to all rows of ``A``.

    Integer-valued data goes through the Gram identity, which is exact in
    float64 for counts this small; other data uses explicit differences.
    """
    rows = np.arange(len(A)) if rows is None else rows
    if _is_integral(A):
        sq = (A * A).sum(axis=1)
        d = sq[rows, None] + sq[None, :] - 2.0 * (A[rows] @ A.T)
        return np.maximum(d, 0.0)
    return cdist(A[rows], A, "sqeuclidean")


def knn_graph(X, k: int = 5, axis: str = "samples", block: int = 512) -> KnnGraph:
    """Binary k-NN graph with mutual-or symmetrization.

    Each node links to its ``k`` nearest other nodes (Euclidean), ties broken
    by lower index; an edge exists if either endpoint lists the other.
    ``axis="features"`` builds the graph over columns instead of rows.
    """
    if axis not in ("samples", "features"):
        raise ValueError("axis must be 'samples' or 'features'")
    A = as_dense(X)
    if axis == "features":
        A = np.ascontiguousarray(A.T)
    n = A.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k + 1:
        raise TooFewNodes(f"{n} nodes cannot have {k} neighbours each")

    rows_out, cols_out = [], []
    idx = np.arange(n)
    for s in range(0, n, block):
        rows = idx[s:s + block]
        d = pairwise_sq_distances(A, rows)
        d[np.arange(len(rows)), rows] = np.inf
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        rows_out.append(np.repeat(rows, k))
        cols_out.append(order.ravel())
    r = np.concatenate(rows_out)
    c = np.concatenate(cols_out)
    W = sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
    W = ((W + W.T) > 0).astype(np.float64).tocsr()
    W.setdiag(0)
    W.eliminate_zeros()
    W.sort_indices()
    return KnnGraph(n=n, adjacency=W, k=k, axis=axis)


def subsample_rows(n_rows, max_rows, seed):
    """Seed-deterministic sorted subset of at most ``max_rows`` row indices."""
    if max_rows is None or n_rows <= max_rows:
        return np.arange(n_rows)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_rows, size=max_rows, replace=False))


# ---------------------------------------------------------------------------
# Laplacian Score
# ---------------------------------------------------------------------------


def laplacian_scores(X, graph: KnnGraph):
    """Raw scores ``L_r`` (NaN for features constant over the graph nodes)."""
    if graph.axis != "samples":
        raise ValueError("Laplacian Score needs a graph over samples")
    F = as_dense(X)
    if F.shape[0] != graph.n:
        raise ValueError(f"graph has {graph.n} nodes but X has {F.shape[0]} rows")
    S = graph.adjacency
    d = graph.degrees
    total = d.sum()
    if total == 0:
        raise EmptyGraph("graph has no edges")
    mu = (d @ F) / total
    Ft = F - mu
    den = d @ (Ft * Ft)
    num = den - np.einsum("ij,ij->j", Ft, S @ Ft)
    const = F.max(axis=0) == F.min(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        L = num / den
    L[const] = np.nan
    return L


def laplacian_score(X, graph: KnnGraph | None = None, n_best: int | None = None, k: int = 5,
                    max_samples: int | None = None, seed: int = 0) -> SelectionResult:
    """Rank features by ``1 - L_r`` (higher = better locality preservation).

    Constant features get importance ``-inf`` and rank last.
    """
    n_rows = X.shape[0]
    rows = None
    if graph is None:
        rows = subsample_rows(n_rows, max_samples, seed)
        Xs = X.take_rows(rows) if isinstance(X, BinaryMatrix) else as_dense(X)[rows]
        graph = knn_graph(Xs, k=k)
        X = Xs
    L = laplacian_scores(X, graph)
    importance = np.where(np.isnan(L), -np.inf, 1.0 - L)
    order = rank_descending(importance)
    n_best = len(order) if n_best is None else min(n_best, len(order))
    return SelectionResult(
        method="ls",
        selected=order[:n_best],
        scores=importance,
        params={"k": graph.k, "n_best": n_best, "graph_axis": "samples", "edge_weight": "binary",
                "max_samples": max_samples},
        diagnostics={
            "laplacian_score": L,
            "n_constant": int(np.isnan(L).sum()),
            "n_graph_nodes": graph.n,
            "subsampled": graph.n < n_rows,
        },
        seed=seed,
    )


# ---------------------------------------------------------------------------
# spectral embedding
# ---------------------------------------------------------------------------


def _orient(Y):
    """Deterministic sign: the largest-magnitude entry of each column is positive."""
    idx = np.argmax(np.abs(Y), axis=0)
    signs = np.sign(Y[idx, np.arange(Y.shape[1])])
    signs[signs == 0] = 1.0
    return Y * signs


def spectral_embedding(graph: KnnGraph, K: int, seed: int = 0):
    """Solve ``L y = lambda D y`` and return the K eigenpairs after the trivial one.

    Eigenvalues ascend; the single smallest (constant-vector) pair is dropped.
    Vectors are D-orthonormal. Returns ``(eigenvalues, Y)`` with ``Y`` of
    shape ``(n, K)``.
    """
    n = graph.n
    if not 1 <= K < n:
        raise ValueError(f"need 1 <= K < n, got K={K}, n={n}")
    W = graph.adjacency
    d = graph.degrees
    if (d == 0).any():
        raise EmptyGraph("isolated node in graph")
    if n <= DENSE_EIGEN_LIMIT:
        Wd = W.toarray()
        Lap = np.diag(d) - Wd
        vals, vecs = scipy.linalg.eigh(Lap, np.diag(d), subset_by_index=[0, K])
    else:
        dinv = 1.0 / np.sqrt(d)
        Dm = sp.diags(dinv)
        M = (Dm @ W @ Dm).tocsr()
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            mu, V = eigsh(M, k=K + 1, which="LA", v0=v0, tol=0, maxiter=100 * n)
        except ArpackNoConvergence as exc:
            raise ConvergenceFailure(f"eigsh did not converge: {exc}") from None
        order = np.argsort(-mu, kind="stable")
        vals = 1.0 - mu[order]
        vecs = V[:, order] * dinv[:, None]
        # renormalise to D-orthonormality
        vecs /= np.sqrt(np.einsum("ij,i,ij->j", vecs, d, vecs))
    vals = np.asarray(vals[1:K + 1], dtype=float)
    vecs = _orient(np.asarray(vecs[:, 1:K + 1]))
    return vals, vecs


def n_components(graph: KnnGraph) -> int:
    return int(connected_components(graph.adjacency, directed=False)[0])
