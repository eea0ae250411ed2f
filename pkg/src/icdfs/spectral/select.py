"""Multi-cluster feature selection and principal feature analysis."""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from ..cohort import BinaryMatrix
from ..selection import SelectionResult, rank_descending
from .graph import as_dense, knn_graph, n_components, spectral_embedding, subsample_rows
from .lars import lars_path
from .pca import incremental_pca


def mcfs(X, n_best: int, k: int = 5, K: int = 5, max_samples: int | None = None,
         seed: int = 0) -> SelectionResult:
    """Multi-cluster feature selection.

    Embeds the samples with the ``K`` leading non-trivial eigenvectors of the
    k-NN graph Laplacian, regresses each eigenvector on the features with
    lasso-LARS (``max_nonzero = n_best``), and scores feature ``j`` by
    ``max_k |a_kj|``. Zero-score features fill the tail in index order, so
    exactly ``min(n_best, n_features)`` indices come back.
    """
    n_rows = X.shape[0]
    rows = subsample_rows(n_rows, max_samples, seed)
    Xs = X.take_rows(rows) if isinstance(X, BinaryMatrix) else as_dense(X)[rows]
    F = as_dense(Xs)
    graph = knn_graph(F, k=k)
    K = min(K, graph.n - 1)
    eigvals, Y = spectral_embedding(graph, K, seed=seed)

    coefs = np.zeros((K, F.shape[1]))
    collinear, degenerate = [], set()
    for i in range(K):
        path = lars_path(F, Y[:, i], max_nonzero=n_best)
        coefs[i] = path.coef
        collinear.extend(path.diagnostics["collinear"])
        degenerate.update(path.diagnostics["skipped_degenerate"])
    scores = np.abs(coefs).max(axis=0)
    order = rank_descending(scores)
    n_sel = min(n_best, F.shape[1])
    ties = sorted({(c["feature"], tuple(c["with"])) for c in collinear})
    return SelectionResult(
        method="mcfs",
        selected=order[:n_sel],
        scores=scores,
        params={"n_best": n_best, "k": k, "K": K, "graph_axis": "samples",
                "edge_weight": "binary", "max_samples": max_samples},
        diagnostics={
            "eigenvalues": eigvals,
            "n_graph_components": n_components(graph),
            "n_graph_nodes": graph.n,
            "subsampled": graph.n < n_rows,
            "ties": [{"feature": f, "with": list(w)} for f, w in ties],
            "skipped_degenerate": sorted(degenerate),
            "n_nonzero": int((scores > 0).sum()),
        },
        seed=seed,
    )


def _kmeans(points, n_clusters, seed, n_init=10):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        km = KMeans(n_clusters=n_clusters, init="k-means++", n_init=n_init, random_state=seed)
        km.fit(points)
    return km.labels_, km.cluster_centers_


def pfa(X, n_best: int, n_components: int | None = None, batch_rows: int | None = None,
        seed: int = 0, n_init: int = 10) -> SelectionResult:
    """Principal feature analysis.

    Rows of the incremental-PCA loading matrix represent features; k-means
    (``k = n_best``) groups them and the member nearest each centroid is
    kept. Clusters are reported largest first. When k-means leaves fewer
    non-empty clusters than ``n_best`` (identical feature rows), the largest
    clusters are split by taking further members farthest from their centroid.
    """
    n_rows, n_features = X.shape
    if not 1 <= n_best <= n_features:
        raise ValueError(f"n_best must be in [1, {n_features}]")
    q = n_components if n_components is not None else max(1, n_features // 2)
    q = min(q, n_rows, n_features)
    batch_rows = batch_rows if batch_rows is not None else 2 * n_features
    fit = incremental_pca(X.data if isinstance(X, BinaryMatrix) else X, q, batch_rows)
    A = fit.components  # (n_features, q)

    labels, centers = _kmeans(A, n_best, seed, n_init)
    dist = np.linalg.norm(A - centers[labels], axis=1)
    clusters = []
    for c in range(n_best):
        members = np.flatnonzero(labels == c)
        if members.size:
            # nearest to centroid, ties by lower index
            rep = members[np.lexsort((members, dist[members]))[0]]
            clusters.append((c, members, int(rep)))
    clusters.sort(key=lambda t: (-len(t[1]), t[2]))
    selected = [rep for _, _, rep in clusters]
    n_empty = n_best - len(clusters)
    split_extra = 0
    if len(selected) < n_best:
        chosen = set(selected)
        extra = []
        for _, members, _ in clusters:
            rest = [m for m in members[np.lexsort((members, -dist[members]))] if m not in chosen]
            extra.extend(rest)
        need = n_best - len(selected)
        selected += [int(m) for m in extra[:need]]
        split_extra = min(need, len(extra))

    scores = -dist
    return SelectionResult(
        method="pfa",
        selected=selected,
        scores=scores,
        params={"n_best": n_best, "n_components": q, "batch_rows": batch_rows,
                "kmeans_init": "k-means++", "kmeans_restarts": n_init, "standardize": False},
        diagnostics={
            "cluster_sizes": [int(len(m)) for _, m, _ in clusters],
            "empty_clusters": n_empty,
            "split_fill": split_extra,
            "explained_variance_ratio": float(fit.explained_variance_ratio.sum()),
            "n_batches": fit.n_batches,
        },
        seed=seed,
    )
