"""Graph- and decomposition-based selectors: Laplacian Score, MCFS, PFA."""

from .graph import KnnGraph, knn_graph, laplacian_score, laplacian_scores, spectral_embedding
from .lars import LarsPath, lars_lasso, lars_path
from .pca import PcaFit, incremental_pca
from .select import mcfs, pfa

__all__ = [
    "KnnGraph",
    "LarsPath",
    "PcaFit",
    "incremental_pca",
    "knn_graph",
    "laplacian_score",
    "laplacian_scores",
    "lars_lasso",
    "lars_path",
    "mcfs",
    "pfa",
    "spectral_embedding",
]
