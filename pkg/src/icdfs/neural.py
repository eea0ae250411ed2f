"""Autoencoder-based selectors: concrete autoencoder (CAE) and AEFS.

CAE
    A concrete selector layer holds one logit row per output neuron. During
    training each row is relaxed with Gumbel-softmax noise at temperature
    ``T``; neuron ``i`` outputs ``x . m_i``. A leaky-ReLU decoder (64, 64)
    with sigmoid outputs reconstructs every input column under (optionally
    per-column weighted) BCE. ``T`` decays exponentially per epoch from
    ``t_start`` to ``t_end``. After training each neuron picks
    ``argmax(logits_i)``; repeated picks are merged.

AEFS
    One sigmoid hidden layer, squared-error reconstruction, a row-wise group
    penalty on the encoder weights and weight decay on both layers. Adam
    handles the smooth terms; each step is followed by a group
    soft-threshold of the encoder rows. A feature's score is the 2-norm of
    its encoder row.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from .cohort import BinaryMatrix
from .errors import DimensionMismatch, NonFiniteLoss
from .nn_core import Adam, MlpModel, bce_from_logits, dense_rows, iter_batches
from .selection import SelectionResult, rank_descending


def _as_matrix(X):
    if isinstance(X, BinaryMatrix):
        return X.data
    return X


# ---------------------------------------------------------------------------
# concrete selector
# ---------------------------------------------------------------------------


def softmax_rows(z):
    e = z - z.max(axis=-1, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=-1, keepdims=True)
    return e


def gumbel_noise(rng, shape, dtype=np.float64):
    """i.i.d. Gumbel(0, 1) draws, sampled directly in ``dtype`` (float32 or float64)."""
    dtype = np.dtype(dtype)
    u = rng.random(shape, dtype=dtype if dtype in (np.float32, np.float64) else np.float64)
    # keep away from 0 so -log(-log(u)) is finite
    np.maximum(u, np.finfo(u.dtype).tiny, out=u)
    np.log(u, out=u)
    np.negative(u, out=u)
    np.log(u, out=u)
    np.negative(u, out=u)
    return u.astype(dtype, copy=False)


def gumbel_softmax_sample(logits, temperature: float, rng=None, noise=None):
    """``softmax((logits + g) / T)`` with ``g`` i.i.d. Gumbel(0, 1).

    Works on a single row or a matrix of rows. Pass ``noise`` to fix ``g``
    (zeros gives the noise-free relaxation).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = np.asarray(logits, dtype=float)
    if noise is None:
        noise = gumbel_noise(np.random.default_rng(rng), logits.shape)
    return softmax_rows((logits + noise) / temperature)


def temperature_schedule(epochs: int, t_start: float = 20.0, t_end: float = 0.01) -> np.ndarray:
    """Per-epoch temperatures ``t_start * (t_end / t_start) ** (e / (epochs - 1))``."""
    if epochs <= 0:
        return np.zeros(0)
    if epochs == 1:
        return np.array([t_end], dtype=float)
    e = np.arange(epochs) / (epochs - 1)
    T = t_start * (t_end / t_start) ** e
    T[0], T[-1] = t_start, t_end
    return T


@dataclass
class ConcreteSelectorLayer:
    logits: np.ndarray  # (n_best, n_features)
    temperature: float = 20.0

    @classmethod
    def init(cls, n_best, n_features, rng, scale=0.01, dtype=np.float64):
        return cls(rng.uniform(-scale, scale, size=(n_best, n_features)).astype(dtype))

    def sample(self, rng=None, noise=None):
        if noise is None:
            noise = gumbel_noise(rng, self.logits.shape, self.logits.dtype)
        return softmax_rows((self.logits + noise) / self.temperature)

    def probabilities(self):
        """Noise-free relaxed selection at the current temperature."""
        return softmax_rows(self.logits / self.temperature)

    def mean_max_probability(self) -> float:
        return float(self.probabilities().max(axis=1).mean())

    def argmax(self) -> np.ndarray:
        return np.argmax(self.logits, axis=1)

    @staticmethod
    def backward(x, M, grad_u, temperature):
        """Gradient wrt logits given ``u = x @ M.T`` and ``dL/du``."""
        gM = grad_u.T @ x
        gz = M * (gM - (gM * M).sum(axis=1, keepdims=True))
        return gz / temperature


@dataclass
class CaeConfig:
    n_best: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 500
    hidden: tuple = (64, 64)
    t_start: float = 20.0
    t_end: float = 0.01
    leaky_slope: float = 0.1
    logit_init: float = 0.01
    feature_weights: np.ndarray | None = None
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if min(self.n_best, self.batch_size) < 1 or self.epochs < 0:
            raise ValueError("n_best, batch_size must be >= 1 and epochs >= 0")
        if self.learning_rate <= 0 or self.t_start <= 0 or self.t_end <= 0:
            raise ValueError("learning rate and temperatures must be positive")
        if self.t_end > self.t_start:
            raise ValueError("temperature must decrease (t_end <= t_start)")
        if self.feature_weights is not None:
            w = np.asarray(self.feature_weights, dtype=float)
            if w.ndim != 1 or (w <= 0).any():
                raise ValueError("feature_weights must be a positive vector")
            self.feature_weights = w

    def describe(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["weighted"] = self.feature_weights is not None
        d.pop("feature_weights")
        return d


@dataclass
class ConcreteAutoencoder:
    selector: ConcreteSelectorLayer
    decoder: MlpModel

    @classmethod
    def init(cls, n_features, cfg: CaeConfig, rng):
        dtype = np.dtype(cfg.dtype)
        sel = ConcreteSelectorLayer.init(cfg.n_best, n_features, rng, cfg.logit_init, dtype)
        dec = MlpModel.build([cfg.n_best, *cfg.hidden, n_features], "leaky_relu", "sigmoid",
                             dropout=0.0, rng=rng, leaky_slope=cfg.leaky_slope, dtype=dtype)
        return cls(sel, dec)

    def params(self):
        return [self.selector.logits, *self.decoder.params()]

    def loss_and_grad(self, x, noise, weights=None):
        """Batch loss and gradients (logits first, then decoder params) for fixed noise."""
        T = self.selector.temperature
        M = softmax_rows((self.selector.logits + noise) / T)
        u = x @ M.T
        cache = self.decoder.forward(u, "eval")
        loss, dz = bce_from_logits(cache.pre[-1], x, weights)
        dec_grads, gu = self.decoder.backward(cache, grad_logits=dz)
        g_logits = ConcreteSelectorLayer.backward(x, M, gu, T)
        return loss, [g_logits, *dec_grads]

    def reconstruct(self, x):
        """Reconstruction through the hard (argmax) selection."""
        idx = self.selector.argmax()
        return self.decoder.predict(np.asarray(x)[:, idx])


def cae_train(X_train, feature_weights=None, cfg: CaeConfig | None = None,
              curve_path=None) -> tuple[SelectionResult, dict]:
    """Train a concrete autoencoder and read off the selected features.

    ``feature_weights`` (e.g. ``tree.feature_weights(codes)``) multiply each
    output column's BCE term; ``None`` is the plain variant. Returns the
    selection and training diagnostics (per-epoch loss, temperature,
    mean-max probability, merged duplicates).
    """
    cfg = cfg or CaeConfig()
    if feature_weights is not None:
        cfg = CaeConfig(**{**cfg.__dict__, "feature_weights": feature_weights})
    X = _as_matrix(X_train)
    n, d = X.shape
    w = cfg.feature_weights
    if w is not None and w.shape[0] != d:
        raise DimensionMismatch(f"{w.shape[0]} feature weights for {d} columns")
    dtype = np.dtype(cfg.dtype)
    w = None if w is None else w.astype(dtype)

    s_init, s_shuffle, s_gumbel = np.random.SeedSequence(cfg.seed).spawn(3)
    model = ConcreteAutoencoder.init(d, cfg, np.random.default_rng(s_init))
    shuffle_rng = np.random.default_rng(s_shuffle)
    gumbel_rng = np.random.default_rng(s_gumbel)
    opt = Adam(model.params(), cfg.learning_rate)
    temps = temperature_schedule(cfg.epochs, cfg.t_start, cfg.t_end)

    history = {"epoch": [], "loss": [], "temperature": [], "mean_max_probability": []}
    for epoch, T in enumerate(temps):
        model.selector.temperature = float(T)
        total = 0.0
        for idx in iter_batches(n, cfg.batch_size, shuffle_rng):
            xb = dense_rows(X, idx, dtype)
            noise = gumbel_noise(gumbel_rng, model.selector.logits.shape, dtype)
            loss, grads = model.loss_and_grad(xb, noise, w)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"CAE loss not finite at epoch {epoch}",
                                    {"epoch": epoch, "history": history})
            opt.step(grads)
            total += loss * len(idx)
        history["epoch"].append(epoch)
        history["loss"].append(total / n)
        history["temperature"].append(float(T))
        history["mean_max_probability"].append(model.selector.mean_max_probability())

    picks = model.selector.argmax()
    probs = softmax_rows(model.selector.logits / (temps[-1] if len(temps) else cfg.t_start))
    scores = probs.max(axis=0)
    unique = np.unique(picks)
    selected = unique[rank_descending(scores[unique])]
    merged = int(len(picks) - len(unique))
    diagnostics = {
        **history,
        "neuron_picks": picks,
        "duplicates_merged": merged,
        "identical_columns": identical_columns(X, selected),
        "n_selected": int(len(selected)),
    }
    if curve_path is not None:
        write_training_curve(curve_path, history)
    result = SelectionResult(
        method="cae-weighted" if cfg.feature_weights is not None else "cae",
        selected=selected,
        scores=scores,
        params={**cfg.describe(), "weight_normalization": "none"},
        diagnostics=diagnostics,
        seed=cfg.seed,
    )
    result._model = model  # kept for callers that want the trained network
    return result, diagnostics


def identical_columns(X, selected) -> list:
    """Pairs ``[kept, other]`` of selected features with identical training columns.

    ``kept`` is the earlier (higher-ranked) feature of the pair.
    """
    cols = X[:, np.asarray(selected, dtype=int)]
    cols = cols.toarray() if hasattr(cols, "toarray") else np.asarray(cols)
    first, pairs = {}, []
    for pos, j in enumerate(selected):
        key = np.ascontiguousarray(cols[:, pos]).tobytes()
        if key in first:
            pairs.append([int(first[key]), int(j)])
        else:
            first[key] = j
    return pairs


def write_training_curve(path, history: dict):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["epoch", "loss", "temperature", "mean_max_probability"])
        for row in zip(history["epoch"], history["loss"], history["temperature"],
                       history["mean_max_probability"]):
            wr.writerow([row[0], repr(float(row[1])), repr(float(row[2])), repr(float(row[3]))])


# ---------------------------------------------------------------------------
# AEFS
# ---------------------------------------------------------------------------


@dataclass
class AefsConfig:
    n_best: int = 100
    alpha: float = 1e-3
    beta: float = 0.1
    hidden_units: int | None = None  # defaults to n_best
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if min(self.n_best, self.batch_size) < 1 or self.epochs < 0:
            raise ValueError("n_best, batch_size must be >= 1 and epochs >= 0")


@dataclass
class AefsModel:
    W1: np.ndarray  # (n_features, hidden)
    b1: np.ndarray
    W2: np.ndarray  # (hidden, n_features)
    b2: np.ndarray

    @classmethod
    def init(cls, n_features, hidden, rng, dtype=np.float64):
        enc = MlpModel.build([n_features, hidden, n_features], "sigmoid", "sigmoid", rng=rng,
                             dtype=dtype)
        l1, l2 = enc.layers
        return cls(l1.weight, l1.bias, l2.weight, l2.bias)

    def params(self):
        return [self.W1, self.b1, self.W2, self.b2]

    def row_norms(self):
        return np.sqrt((self.W1 * self.W1).sum(axis=1))

    def reconstruct(self, x):
        h = expit(x @ self.W1 + self.b1)
        return expit(h @ self.W2 + self.b2)

    def loss_and_grad(self, x, alpha, beta, group_grad=True):
        """``(1/2m)||X - Xhat||^2 + alpha * sum_i ||W1_i|| + beta/2 (||W1||^2 + ||W2||^2)``.

        With ``group_grad=False`` the returned gradient omits the row-norm
        (sub)gradient; the trainer handles that term with a proximal step.
        """
        m = x.shape[0]
        h = expit(x @ self.W1 + self.b1)
        y = expit(h @ self.W2 + self.b2)
        diff = y - x
        norms = self.row_norms()
        loss = (0.5 * float((diff * diff).sum()) / m
                + alpha * float(norms.sum())
                + 0.5 * beta * float((self.W1 ** 2).sum() + (self.W2 ** 2).sum()))
        dz2 = diff / m * y * (1.0 - y)
        gW2 = h.T @ dz2 + beta * self.W2
        gb2 = dz2.sum(axis=0)
        dz1 = (dz2 @ self.W2.T) * h * (1.0 - h)
        gW1 = x.T @ dz1 + beta * self.W1
        if group_grad:
            safe = np.where(norms > 0, norms, 1.0)
            gW1 += alpha * np.where(norms[:, None] > 0, self.W1 / safe[:, None], 0.0)
        gb1 = dz1.sum(axis=0)
        return loss, [gW1, gb1, gW2, gb2]

    def prox_group(self, threshold):
        """Row-wise group soft-threshold: ``W1_i *= max(0, 1 - threshold / ||W1_i||)``."""
        norms = self.row_norms()
        with np.errstate(divide="ignore", invalid="ignore"):
            shrink = np.where(norms > threshold, 1.0 - threshold / norms, 0.0)
        self.W1 *= shrink[:, None].astype(self.W1.dtype)


def aefs_train(X_train, cfg: AefsConfig | None = None) -> SelectionResult:
    """Train the AEFS autoencoder and rank features by encoder row norm."""
    cfg = cfg or AefsConfig()
    X = _as_matrix(X_train)
    n, d = X.shape
    hidden = cfg.hidden_units or cfg.n_best
    dtype = np.dtype(cfg.dtype)
    s_init, s_shuffle = np.random.SeedSequence(cfg.seed).spawn(2)
    model = AefsModel.init(d, hidden, np.random.default_rng(s_init), dtype)
    rng = np.random.default_rng(s_shuffle)
    opt = Adam(model.params(), cfg.learning_rate)
    losses = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in iter_batches(n, cfg.batch_size, rng):
            xb = dense_rows(X, idx, dtype)
            loss, grads = model.loss_and_grad(xb, cfg.alpha, cfg.beta, group_grad=False)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"AEFS loss not finite at epoch {epoch}",
                                    {"epoch": epoch, "loss": losses})
            opt.step(grads)
            model.prox_group(cfg.learning_rate * cfg.alpha)
            total += loss * len(idx)
        losses.append(total / n)
    scores = model.row_norms().astype(float)
    order = rank_descending(scores)
    result = SelectionResult(
        method="aefs",
        selected=order[:min(cfg.n_best, d)],
        scores=scores,
        params={**asdict(cfg), "hidden_units": hidden, "hidden_activation": "sigmoid",
                "output_activation": "sigmoid", "reconstruction": "squared_error",
                "group_penalty": "proximal"},
        diagnostics={"loss": losses},
        seed=cfg.seed,
    )
    result._model = model
    return result
