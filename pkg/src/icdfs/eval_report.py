"""Evaluate a feature selection and write report tables.

Two protocols are supported:

* reconstruction: an MLP maps the selected columns back to every column;
  per-column test accuracy is compared with the train-mode baseline by a
  paired t-test across columns.
* outcome: a single sigmoid unit on the selected columns, trained on the
  minority-upsampled train split, predicts the binary label on the test split.
"""

from __future__ import annotations

import csv
import json
import math
from collections import namedtuple
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy import stats

from .cohort import BinaryMatrix
from .errors import SingleClassTrain
from .nn_core import PROB_EPS, MlpModel, TrainConfig
from .nn_core import train as fit_model
from .selection import SelectionResult, _jsonable, atomic_write_text

TTest = namedtuple("TTest", ["statistic", "pvalue", "zero_variance"])


@dataclass
class EvalConfig:
    hidden: tuple = (64, 64)
    dropout: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    leaky_slope: float = 0.1
    threshold: float = 0.5
    outcome_epochs: int = 100
    outcome_l2: float = 1e-4
    seed: int = 0
    upsample_seed: int | None = None  # derived from ``seed`` when unset
    dtype: str = "float64"


@dataclass
class ReconReport:
    per_feature_accuracy: np.ndarray
    mean_accuracy: float
    bce: float
    baseline_per_feature_accuracy: np.ndarray
    baseline_mean_accuracy: float
    baseline_bce: float
    t_statistic: float
    p_value: float
    zero_variance: bool = False
    n_selected: int = 0
    method: str | None = None
    seed: int | None = None
    fingerprint: str | None = None
    history: list = field(default_factory=list)

    @property
    def significant(self) -> bool:
        return self.p_value < 0.05

    def to_dict(self) -> dict:
        return _jsonable({
            "method": self.method,
            "seed": self.seed,
            "fingerprint": self.fingerprint,
            "n_selected": self.n_selected,
            "mean_accuracy": self.mean_accuracy,
            "bce": self.bce,
            "baseline_mean_accuracy": self.baseline_mean_accuracy,
            "baseline_bce": self.baseline_bce,
            "t_statistic": self.t_statistic,
            "p_value": self.p_value,
            "zero_variance": self.zero_variance,
            "per_feature_accuracy": self.per_feature_accuracy,
            "baseline_per_feature_accuracy": self.baseline_per_feature_accuracy,
            "training_loss": self.history,
        })


@dataclass
class OutcomeReport:
    accuracy: float
    f1: float
    recall: float
    precision: float
    tp: int
    fp: int
    tn: int
    fn: int
    majority_rate: float = float("nan")
    n_train_upsampled: int = 0
    method: str | None = None
    seed: int | None = None
    fingerprint: str | None = None

    def to_dict(self) -> dict:
        return _jsonable({k: getattr(self, k) for k in (
            "method", "seed", "fingerprint", "accuracy", "f1", "recall", "precision",
            "tp", "fp", "tn", "fn", "majority_rate", "n_train_upsampled")})


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _dense(X):
    if isinstance(X, BinaryMatrix):
        X = X.data
    if sp.issparse(X):
        return X.toarray().astype(np.float64)
    return np.asarray(X, dtype=np.float64)


def _indices(selection):
    if isinstance(selection, SelectionResult):
        return np.asarray(selection.selected, dtype=int)
    return np.asarray(selection, dtype=int).ravel()


def _meta(selection, matrix):
    method = seed = fp = None
    if isinstance(selection, SelectionResult):
        method, seed, fp = selection.method, selection.seed, selection.fingerprint
    if fp is None and isinstance(matrix, BinaryMatrix):
        fp = matrix.fingerprint()
    return method, seed, fp


def mean_bce(p, t, eps=PROB_EPS) -> float:
    """Mean per-element binary cross-entropy with clamped probabilities."""
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    t = np.asarray(t, dtype=np.float64)
    return float(-(t * np.log(p) + (1.0 - t) * np.log1p(-p)).mean())


def classification_metrics(y_true, y_pred) -> dict:
    """Confusion counts, accuracy, precision, recall and F1 (0/0 taken as 0)."""
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    tp = int((y_true & y_pred).sum())
    fp = int((~y_true & y_pred).sum())
    tn = int((~y_true & ~y_pred).sum())
    fn = int((y_true & ~y_pred).sum())
    n = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"accuracy": (tp + tn) / n if n else 0.0, "precision": precision,
            "recall": recall, "f1": f1, "tp": tp, "fp": fp, "tn": tn, "fn": fn}


# ---------------------------------------------------------------------------
# reconstruction protocol
# ---------------------------------------------------------------------------


def mode_baseline(train, test) -> np.ndarray:
    """Per-column accuracy on ``test`` of predicting the train majority value.

    A column with exactly half ones in train predicts 0.
    """
    tr, te = _dense(train), _dense(test)
    if tr.shape[0] == 0:
        raise ValueError("train split is empty")
    mode = (tr.mean(axis=0) > 0.5).astype(np.float64)
    return (te == mode).mean(axis=0)


def paired_t_test(acc_a, acc_b) -> TTest:
    """Two-sided paired t-test across features.

    When every difference is identical the statistic is undefined; the
    result is ``p = 1`` for all-zero differences and ``p = 0`` otherwise,
    with ``zero_variance`` set.
    """
    a = np.asarray(acc_a, dtype=np.float64)
    b = np.asarray(acc_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("paired_t_test needs two equal-length vectors of length >= 2")
    d = a - b
    n = d.size
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0 or np.all(d == d[0]):
        if mean == 0:
            return TTest(0.0, 1.0, True)
        return TTest(math.copysign(math.inf, mean), 0.0, True)
    t = float(mean / (sd / math.sqrt(n)))
    p = float(2.0 * stats.t.sf(abs(t), n - 1))
    return TTest(t, min(p, 1.0), False)


def reconstruct_eval(selection, train, test, cfg: EvalConfig | None = None) -> ReconReport:
    """Train selected-columns -> all-columns MLP on ``train``; score on ``test``."""
    cfg = cfg or EvalConfig()
    idx = _indices(selection)
    Xtr, Xte = _dense(train), _dense(test)
    n_features = Xtr.shape[1]
    if idx.size == 0 or idx.min() < 0 or idx.max() >= n_features:
        raise ValueError("selection indices out of range")
    dtype = np.dtype(cfg.dtype)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    model = MlpModel.build([idx.size, *cfg.hidden, n_features], "leaky_relu", "sigmoid",
                           dropout=cfg.dropout, rng=rng, leaky_slope=cfg.leaky_slope, dtype=dtype)
    tc = TrainConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                     epochs=cfg.epochs, seed=cfg.seed, loss="bce")
    model, history = fit_model(model, Xtr[:, idx].astype(dtype), Xtr.astype(dtype), tc)
    prob = model.predict(Xte[:, idx].astype(dtype)).astype(np.float64)
    acc = ((prob >= cfg.threshold) == (Xte > 0.5)).mean(axis=0)

    base = mode_baseline(Xtr, Xte)
    base_bce = mean_bce(np.broadcast_to(Xtr.mean(axis=0), Xte.shape), Xte)
    tt = paired_t_test(acc, base)
    method, seed, fp = _meta(selection, train)
    return ReconReport(
        per_feature_accuracy=acc,
        mean_accuracy=float(acc.mean()),
        bce=mean_bce(prob, Xte),
        baseline_per_feature_accuracy=base,
        baseline_mean_accuracy=float(base.mean()),
        baseline_bce=base_bce,
        t_statistic=float(tt.statistic),
        p_value=float(tt.pvalue),
        zero_variance=tt.zero_variance,
        n_selected=int(idx.size),
        method=method,
        seed=seed,
        fingerprint=fp,
        history=[float(h) for h in history],
    )


# ---------------------------------------------------------------------------
# outcome protocol
# ---------------------------------------------------------------------------


def upsample_minority(X, labels, seed=0, return_indices=False):
    """Append minority rows drawn with replacement until both classes tie.

    Returns ``(X_balanced, labels_balanced)``; the original rows come first.
    """
    y = np.asarray(labels).astype(int).ravel()
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise SingleClassTrain(f"training labels contain a single class {classes.tolist()}")
    minority = int(classes[np.argmin(counts)])
    need = int(counts.max() - counts.min())
    pool = np.flatnonzero(y == minority)
    rng = np.random.default_rng(seed)
    extra = rng.choice(pool, size=need, replace=True) if need else np.zeros(0, dtype=int)
    rows = np.concatenate([np.arange(y.size), extra]).astype(int)
    if isinstance(X, BinaryMatrix):
        Xb = X.take_rows(rows)
    elif sp.issparse(X):
        Xb = sp.csr_matrix(X)[rows]
    else:
        Xb = np.asarray(X)[rows]
    out = (Xb, y[rows])
    return (*out, rows) if return_indices else out


def outcome_eval(selection, train, test, labels, cfg: EvalConfig | None = None) -> OutcomeReport:
    """Logistic model on the selected columns predicting the label.

    ``labels`` is ``(train_labels, test_labels)``.
    """
    cfg = cfg or EvalConfig()
    y_tr, y_te = (np.asarray(v).astype(int).ravel() for v in labels)
    idx = _indices(selection)
    Xtr, Xte = _dense(train)[:, idx], _dense(test)[:, idx]
    s_up, s_init, s_train = np.random.SeedSequence(cfg.seed).spawn(3)
    up_seed = cfg.upsample_seed
    if up_seed is None:
        up_seed = int(s_up.generate_state(1)[0])
    Xb, yb = upsample_minority(Xtr, y_tr, up_seed)
    model = MlpModel.build([idx.size, 1], output_activation="sigmoid",
                           rng=np.random.default_rng(s_init))
    tc = TrainConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                     epochs=cfg.outcome_epochs, seed=int(s_train.generate_state(1)[0]),
                     loss="bce", l2=cfg.outcome_l2)
    fit_model(model, Xb, yb[:, None].astype(np.float64), tc)
    pred = model.predict(Xte)[:, 0] >= cfg.threshold
    m = classification_metrics(y_te, pred)
    majority = max(y_te.mean(), 1 - y_te.mean()) if y_te.size else float("nan")
    method, seed, fp = _meta(selection, train)
    return OutcomeReport(**m, majority_rate=float(majority), n_train_upsampled=int(yb.size),
                         method=method, seed=seed, fingerprint=fp)


# ---------------------------------------------------------------------------
# descriptive outputs
# ---------------------------------------------------------------------------


def accuracy_histogram(per_feature_accuracy, n_bins: int = 20):
    """Equal-width counts on [0, 1]; the last bin includes 1.0."""
    a = np.asarray(per_feature_accuracy, dtype=np.float64)
    if a.size and (a.min() < 0 or a.max() > 1):
        raise ValueError("accuracies must lie in [0, 1]")
    counts, edges = np.histogram(a, bins=n_bins, range=(0.0, 1.0))
    return edges, counts


def prevalence_report(matrix: BinaryMatrix, top_k: int = 20):
    """The ``top_k`` most frequent columns as ``(code, percent)``."""
    if matrix.n_rows == 0:
        raise ValueError("matrix is empty")
    pct = 100.0 * matrix.column_means()
    order = np.lexsort((np.arange(pct.size), -pct))[:top_k]
    codes = matrix.feature_index
    return [(codes[j], float(pct[j])) for j in order]


def depth_sum(selection, tree, feature_codes=None) -> int:
    """Sum of tree depths over the selected codes."""
    if isinstance(selection, SelectionResult):
        codes = selection.selected_codes
        if codes is None:
            if feature_codes is None:
                raise ValueError("selection carries no feature codes; pass feature_codes")
            codes = [feature_codes[i] for i in selection.selected]
    else:
        codes = list(selection)
        if feature_codes is not None and codes and not isinstance(codes[0], str):
            codes = [feature_codes[int(i)] for i in codes]
    return int(sum(tree.depth(c) for c in codes))


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(_fmt(v) for v in r))
    return "\n".join(lines) + "\n"


def table1_csv(reports) -> str:
    """Reconstruction table: one row per report."""
    return _csv_text(
        ["method", "n_selected", "mean_accuracy", "bce", "baseline_mean_accuracy", "t_statistic",
         "p_value", "significant", "zero_variance", "seed", "fingerprint"],
        [(r.method, r.n_selected, r.mean_accuracy, r.bce, r.baseline_mean_accuracy,
          r.t_statistic, r.p_value, r.significant, r.zero_variance, r.seed, r.fingerprint)
         for r in reports])


def table2_csv(reports) -> str:
    """Outcome table: one row per report."""
    return _csv_text(
        ["method", "accuracy", "f1", "recall", "precision", "tp", "fp", "tn", "fn", "seed",
         "fingerprint"],
        [(r.method, r.accuracy, r.f1, r.recall, r.precision, r.tp, r.fp, r.tn, r.fn, r.seed,
          r.fingerprint) for r in reports])


def histogram_csv(edges, counts, method=None) -> str:
    return _csv_text(["method", "bin_lo", "bin_hi", "count"],
                     [(method, edges[i], edges[i + 1], int(c)) for i, c in enumerate(counts)])


def prevalence_csv(rows) -> str:
    return _csv_text(["rank", "code", "percent"], [(i + 1, c, p) for i, (c, p) in enumerate(rows)])


def depth_csv(rows) -> str:
    """``rows`` are ``(method, n_selected, depth_sum)``."""
    return _csv_text(["method", "n_selected", "depth_sum"], rows)


def write_text(path, text: str):
    atomic_write_text(Path(path), text)


def report_json(recon: ReconReport | None, outcome: OutcomeReport | None, extra=None) -> str:
    doc = {"format": "icdfs-report/1",
           "reconstruction": recon.to_dict() if recon else None,
           "outcome": outcome.to_dict() if outcome else None,
           **(extra or {})}
    return json.dumps(_jsonable(doc), sort_keys=True, indent=1) + "\n"
