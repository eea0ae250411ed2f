"""Uniform entry point over the six selector variants."""

from __future__ import annotations

import zlib

import numpy as np

from .cohort import BinaryMatrix
from .icd_tree import IcdTree
from .neural import AefsConfig, CaeConfig, aefs_train, cae_train
from .selection import SelectionResult
from .spectral import laplacian_score, mcfs, pfa

METHODS = ("ls", "mcfs", "pfa", "aefs", "cae", "cae-weighted")

_OPTIONS = {
    "ls": {"k", "max_samples"},
    "mcfs": {"k", "K", "max_samples"},
    "pfa": {"n_components", "batch_rows", "n_init"},
    "aefs": {"alpha", "beta", "hidden_units", "epochs", "batch_size", "learning_rate", "dtype"},
    "cae": {"epochs", "batch_size", "learning_rate", "dtype", "t_start", "t_end", "curve_path"},
}
_OPTIONS["cae-weighted"] = _OPTIONS["cae"]


class UnknownMethod(ValueError):
    def __init__(self, method):
        super().__init__(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
        self.method = method


def named_seed(seed: int, name: str) -> int:
    """Independent, reproducible seed for the substream ``name`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return int(ss.generate_state(1)[0])


def method_options(method: str) -> set:
    if method not in METHODS:
        raise UnknownMethod(method)
    return set(_OPTIONS[method])


def run_selection(method: str, X_train: BinaryMatrix, n_best: int = 100, seed: int = 0,
                  tree: IcdTree | None = None, **options) -> SelectionResult:
    """Run one selector on the training matrix and attach codes and fingerprint.

    ``options`` not understood by ``method`` raise ``TypeError``.
    ``cae-weighted`` needs ``tree`` for the per-column depth weights.
    """
    allowed = method_options(method)
    extra = set(options) - allowed
    if extra:
        raise TypeError(f"{method} does not accept {sorted(extra)}")
    if method == "ls":
        res = laplacian_score(X_train, n_best=n_best, seed=seed, **options)
    elif method == "mcfs":
        res = mcfs(X_train, n_best, seed=seed, **options)
    elif method == "pfa":
        res = pfa(X_train, n_best, seed=seed, **options)
    elif method == "aefs":
        res = aefs_train(X_train, AefsConfig(n_best=n_best, seed=seed, **options))
    else:
        curve = options.pop("curve_path", None)
        weights = None
        if method == "cae-weighted":
            if tree is None:
                raise ValueError("cae-weighted needs an ICD tree for depth weights")
            weights = tree.feature_weights(X_train.feature_index)
        res, _ = cae_train(X_train, weights, CaeConfig(n_best=n_best, seed=seed, **options),
                           curve_path=curve)
    return res.with_context(feature_codes=X_train.feature_index,
                            fingerprint=X_train.fingerprint(), seed=seed)
