"""Row-batched incremental PCA.

Each batch is folded into the running factorisation by an SVD of

    [ diag(s) @ V ;  B - mean(B) ;  sqrt(n_seen * n_b / n_total) * (mean_seen - mean(B)) ]

which keeps the exact mean-centred spectrum when nothing is truncated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import BatchTooSmall


@dataclass
class PcaFit:
    components: np.ndarray       # (n_features, n_components), orthonormal columns
    singular_values: np.ndarray
    mean: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    n_samples: int
    n_batches: int

    def transform(self, X):
        X = X.toarray() if sp.issparse(X) else np.asarray(X, dtype=float)
        return (X - self.mean) @ self.components

    def inverse_transform(self, Z):
        return Z @ self.components.T + self.mean


def _svd_flip(Vt):
    """Sign convention: largest-magnitude loading of each component positive."""
    idx = np.argmax(np.abs(Vt), axis=1)
    signs = np.sign(Vt[np.arange(Vt.shape[0]), idx])
    signs[signs == 0] = 1.0
    return signs


def batch_bounds(n_rows, batch_rows, n_components):
    """Row ranges; a short tail batch is merged into its predecessor."""
    bounds = [(s, min(s + batch_rows, n_rows)) for s in range(0, n_rows, batch_rows)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < n_components:
        last = bounds.pop()
        bounds[-1] = (bounds[-1][0], last[1])
    return bounds


def incremental_pca(X, n_components: int, batch_rows: int) -> PcaFit:
    """Fit PCA over successive row batches of ``X`` (dense or sparse).

    Raises ``BatchTooSmall`` when ``batch_rows < n_components``.
    """
    if sp.issparse(X):
        X = sp.csr_matrix(X)
    elif hasattr(X, "data") and sp.issparse(getattr(X, "data")):
        X = X.data
    n, d = X.shape
    if not 1 <= n_components <= min(n, d):
        raise ValueError(f"n_components must be in [1, {min(n, d)}], got {n_components}")
    if batch_rows < n_components:
        raise BatchTooSmall(f"batch_rows={batch_rows} < n_components={n_components}")

    mean = np.zeros(d)
    var_sum = np.zeros(d)  # running sum of squared deviations
    n_seen = 0
    s = V = None
    bounds = batch_bounds(n, batch_rows, n_components)
    for lo, hi in bounds:
        B = X[lo:hi]
        B = B.toarray().astype(float) if sp.issparse(B) else np.asarray(B, dtype=float)
        nb = B.shape[0]
        bmean = B.mean(axis=0)
        Bc = B - bmean
        total = n_seen + nb
        delta = bmean - mean
        var_sum = var_sum + (Bc * Bc).sum(axis=0) + delta ** 2 * n_seen * nb / total
        if s is None:
            M = Bc
        else:
            corr = np.sqrt(n_seen * nb / total) * (mean - bmean)
            M = np.vstack([s[:, None] * V, Bc, corr[None, :]])
        _, S, Vt = np.linalg.svd(M, full_matrices=False)
        Vt = Vt * _svd_flip(Vt)[:, None]
        s, V = S[:n_components], Vt[:n_components]
        mean = mean + delta * nb / total
        n_seen = total

    ev = s ** 2 / max(n_seen - 1, 1)
    total_var = var_sum.sum() / max(n_seen - 1, 1)
    ratio = ev / total_var if total_var > 0 else np.zeros_like(ev)
    return PcaFit(
        components=V.T.copy(),
        singular_values=s,
        mean=mean,
        explained_variance=ev,
        explained_variance_ratio=ratio,
        n_samples=n_seen,
        n_batches=len(bounds),
    )
