"""Small feed-forward networks with hand-written gradients and Adam.

Only what the selectors and evaluators need: dense layers with leaky-ReLU,
sigmoid or linear activations, inverted dropout on hidden layers, and three
losses (BCE, per-output weighted BCE, squared error). Weight matrices are
stored ``(n_in, n_out)`` so a forward pass is ``x @ W + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import DimensionMismatch, NonFiniteLoss

ACTIVATIONS = ("leaky_relu", "sigmoid", "linear")
LOSSES = ("bce", "weighted_bce", "squared_error")
PROB_EPS = 1e-7
CHECKPOINT_FORMAT = "icdfs-mlp/1"


def leaky_relu(z, slope):
    return np.where(z > 0, z, slope * z)


def glorot_uniform(rng, n_in, n_out, dtype=np.float64):
    a = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-a, a, size=(n_in, n_out)).astype(dtype)


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "linear"
    dropout: float = 0.0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise DimensionMismatch(
                f"weight {self.weight.shape} and bias {self.bias.shape} do not match"
            )
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must be in [0, 1]")


@dataclass
class Cache:
    inputs: list = field(default_factory=list)   # input to each layer
    pre: list = field(default_factory=list)      # pre-activations
    masks: list = field(default_factory=list)    # scaled dropout masks (or None)
    output: np.ndarray | None = None


class MlpModel:
    """Stack of dense layers.

    Dropout on a layer applies to that layer's *output* and only in train
    mode (inverted: kept units are scaled by ``1 / (1 - rate)``), so eval mode
    is a plain deterministic pass.
    """

    def __init__(self, layers: Sequence[Layer], leaky_slope: float = 0.1):
        layers = list(layers)
        if not layers:
            raise ValueError("model needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise DimensionMismatch(
                    f"layer widths do not chain: {a.weight.shape} -> {b.weight.shape}"
                )
        self.layers = layers
        self.leaky_slope = float(leaky_slope)

    @classmethod
    def build(
        cls,
        sizes: Sequence[int],
        hidden_activation="leaky_relu",
        output_activation="sigmoid",
        dropout=0.0,
        rng=None,
        leaky_slope=0.1,
        dtype=np.float64,
    ) -> "MlpModel":
        """Glorot-uniform weights, zero biases; ``dropout`` on every hidden layer."""
        rng = np.random.default_rng(rng)
        layers = []
        n = len(sizes) - 1
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == n - 1
            layers.append(Layer(
                weight=glorot_uniform(rng, a, b, dtype),
                bias=np.zeros(b, dtype=dtype),
                activation=output_activation if last else hidden_activation,
                dropout=0.0 if last else dropout,
            ))
        return cls(layers, leaky_slope)

    @property
    def n_in(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation, l.dropout) for l in self.layers],
            self.leaky_slope,
        )

    # -- passes ------------------------------------------------------------
    def _act(self, z, kind):
        if kind == "leaky_relu":
            return leaky_relu(z, self.leaky_slope)
        if kind == "sigmoid":
            return expit(z)
        return z

    def forward(self, x, mode: str = "eval", rng=None) -> Cache:
        if mode not in ("train", "eval"):
            raise ValueError("mode must be 'train' or 'eval'")
        if sp.issparse(x):
            x = x.toarray()
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionMismatch(f"batch shape {x.shape} but model expects width {self.n_in}")
        cache = Cache()
        h = x
        for layer in self.layers:
            cache.inputs.append(h)
            z = h @ layer.weight + layer.bias
            cache.pre.append(z)
            h = self._act(z, layer.activation)
            mask = None
            if mode == "train" and layer.dropout > 0.0:
                if rng is None:
                    raise ValueError("train-mode dropout needs an rng")
                keep = 1.0 - layer.dropout
                if keep <= 0.0:
                    mask = np.zeros_like(h)
                else:
                    mask = (rng.random(h.shape) < keep).astype(h.dtype) / keep
                h = h * mask
            cache.masks.append(mask)
        cache.output = h
        return cache

    def predict(self, x) -> np.ndarray:
        return self.forward(x, "eval").output

    def backward(self, cache: Cache, grad_output=None, grad_logits=None):
        """Backpropagate; returns (grads aligned with ``params()``, grad wrt input).

        Give either the gradient wrt the network output, or (for a sigmoid
        output fused with cross-entropy) the gradient wrt the last
        pre-activation.
        """
        grads: list = [None] * (2 * len(self.layers))
        g = None
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            z = cache.pre[i]
            if i == len(self.layers) - 1 and grad_logits is not None:
                dz = grad_logits
            else:
                gh = grad_output if g is None else g
                if cache.masks[i] is not None:
                    gh = gh * cache.masks[i]
                if layer.activation == "leaky_relu":
                    dz = gh * np.where(z > 0, 1.0, self.leaky_slope).astype(gh.dtype)
                elif layer.activation == "sigmoid":
                    s = expit(z)
                    dz = gh * s * (1.0 - s)
                else:
                    dz = gh
            grads[2 * i] = cache.inputs[i].T @ dz
            grads[2 * i + 1] = dz.sum(axis=0)
            g = dz @ layer.weight.T
        return grads, g

    # -- checkpoints --------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "leaky_slope": self.leaky_slope,
            "dtype": str(self.dtype),
            "layers": [
                {
                    "shape": list(l.weight.shape),
                    "activation": l.activation,
                    "dropout": l.dropout,
                    "weight": l.weight.tolist(),
                    "bias": l.bias.tolist(),
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {d.get('format')!r}")
        dtype = np.dtype(d.get("dtype", "float64"))
        layers = []
        for spec in d["layers"]:
            w = np.asarray(spec["weight"], dtype=dtype).reshape(spec["shape"])
            layers.append(Layer(w, np.asarray(spec["bias"], dtype=dtype),
                                spec["activation"], spec["dropout"]))
        return cls(layers, d["leaky_slope"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MlpModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def bce_from_logits(z, targets, weights=None, eps=PROB_EPS):
    """Clamped (weighted) BCE, summed over outputs and averaged over rows.

    Returns ``(loss, dloss/dz)``. Probabilities are clamped to
    ``[eps, 1 - eps]`` before the log; the gradient is exact for the clamped
    loss, i.e. zero wherever the clamp is active.
    """
    p = expit(z)
    pc = np.clip(p, eps, 1.0 - eps)
    t = targets
    elem = -(t * np.log(pc) + (1.0 - t) * np.log1p(-pc))
    n = z.shape[0]
    active = (p > eps) & (p < 1.0 - eps)
    dz = (p - t) * active
    if weights is not None:
        elem = elem * weights
        dz = dz * weights
    return float(elem.sum()) / n, dz / n


def squared_error(y, targets):
    """``(1 / 2n) * ||y - t||^2`` and its gradient wrt ``y``."""
    n = y.shape[0]
    diff = y - targets
    return 0.5 * float((diff * diff).sum()) / n, diff / n


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss: str = "bce"
    per_output_weights: np.ndarray | None = None
    l2: float = 0.0
    shuffle: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.per_output_weights is not None:
            w = np.asarray(self.per_output_weights, dtype=float)
            if w.ndim != 1 or (w <= 0).any():
                raise ValueError("per_output_weights must be a positive vector")
            self.per_output_weights = w
        if self.loss == "weighted_bce" and self.per_output_weights is None:
            raise ValueError("weighted_bce needs per_output_weights")


def loss_and_grad(model: MlpModel, batch, targets, cfg: TrainConfig, mode="train", rng=None):
    """Loss of ``model`` on one batch and its exact gradient for the sampled dropout mask."""
    cache = model.forward(batch, mode, rng)
    targets = np.asarray(targets.toarray() if sp.issparse(targets) else targets,
                         dtype=cache.output.dtype)
    if targets.ndim == 1:
        targets = targets[:, None]
    if targets.shape != cache.output.shape:
        raise DimensionMismatch(f"targets {targets.shape} vs outputs {cache.output.shape}")
    if cfg.loss == "squared_error":
        loss, g = squared_error(cache.output, targets)
        grads, _ = model.backward(cache, grad_output=g)
    else:
        if model.layers[-1].activation != "sigmoid":
            raise ValueError("BCE losses need a sigmoid output layer")
        w = None
        if cfg.loss == "weighted_bce":
            w = cfg.per_output_weights
            if w.shape[0] != model.n_out:
                raise DimensionMismatch("per_output_weights length != output width")
            w = w.astype(cache.output.dtype)
        loss, dz = bce_from_logits(cache.pre[-1], targets, w)
        grads, _ = model.backward(cache, grad_logits=dz)
    if cfg.l2:
        for i, layer in enumerate(model.layers):
            loss += 0.5 * cfg.l2 * float((layer.weight ** 2).sum())
            grads[2 * i] = grads[2 * i] + cfg.l2 * layer.weight
    return loss, grads


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction; updates the given arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self._buf = [np.empty_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        step = self.lr * np.sqrt(c2) / c1
        eps = self.eps * np.sqrt(c2)
        for p, g, m, v, buf in zip(self.params, grads, self.m, self.v, self._buf):
            g = np.asarray(g, dtype=p.dtype)
            m *= b1
            np.multiply(g, 1.0 - b1, out=buf)
            m += buf
            v *= b2
            np.multiply(g, g, out=buf)
            buf *= 1.0 - b2
            v += buf
            np.sqrt(v, out=buf)
            buf += eps
            np.divide(m, buf, out=buf)
            buf *= step
            p -= buf


def iter_batches(n, batch_size, rng=None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def dense_rows(X, idx, dtype):
    part = X[idx]
    if sp.issparse(part):
        part = part.toarray()
    return np.asarray(part, dtype=dtype)


def train(model: MlpModel, X, Y, cfg: TrainConfig, callback: Callable | None = None):
    """Mini-batch Adam training (in place). Returns ``(model, loss_history)``.

    Shuffling and dropout draw from independent streams derived from
    ``cfg.seed``. ``loss_history[e]`` is the row-weighted mean batch loss of
    epoch ``e``.
    """
    n = X.shape[0]
    if Y.shape[0] != n:
        raise DimensionMismatch("X and Y row counts differ")
    s_shuffle, s_dropout = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(s_shuffle)
    drop_rng = np.random.default_rng(s_dropout)
    opt = Adam(model.params(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    history = []
    dtype = model.dtype
    for epoch in range(cfg.epochs):
        total = 0.0
        for b, idx in enumerate(iter_batches(n, cfg.batch_size, shuffle_rng if cfg.shuffle else None)):
            xb = dense_rows(X, idx, dtype)
            yb = dense_rows(Y, idx, dtype)
            loss, grads = loss_and_grad(model, xb, yb, cfg, "train", drop_rng)
            if not np.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}, batch {b}",
                    {"epoch": epoch, "batch": b, "loss": loss, "history": history},
                )
            opt.step(grads)
            total += loss * len(idx)
        history.append(total / n if n else 0.0)
        if callback is not None:
            callback(epoch, history[-1], model)
    return model, history


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def relative_error(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(loss_fn: Callable[[], float], params, grads, n_probes=20, rng=None, step=1e-4):
    """Max relative error between ``grads`` and central differences of ``loss_fn``.

    ``loss_fn`` must re-evaluate the loss from the (in-place perturbed)
    ``params``. Probes are drawn uniformly over all parameter entries.
    Relative error is ``|a - n| / max(|a|, |n|, 1e-6)``.
    """
    rng = np.random.default_rng(rng)
    sizes = np.array([p.size for p in params])
    total = sizes.sum()
    picks = rng.choice(total, size=min(n_probes, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        p = params[k]
        idx = np.unravel_index(flat - offsets[k], p.shape)
        orig = p[idx]
        p[idx] = orig + step
        lp = loss_fn()
        p[idx] = orig - step
        lm = loss_fn()
        p[idx] = orig
        numeric = (lp - lm) / (2 * step)
        worst = max(worst, relative_error(float(grads[k][idx]), numeric))
    return worst


def gradient_check(model: MlpModel, X, Y, cfg: TrainConfig, n_probes=20, rng=None, step=1e-4):
    """Analytic vs finite-difference gradients of ``loss_and_grad`` (dropout off)."""
    _, grads = loss_and_grad(model, X, Y, cfg, mode="eval")
    params = model.params()
    return check_gradients(lambda: loss_and_grad(model, X, Y, cfg, mode="eval")[0],
                           params, grads, n_probes, rng, step)
