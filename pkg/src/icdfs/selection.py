"""Selector output shared by every method, with a stable JSON form."""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT = "icdfs-selection/1"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


@dataclass
class SelectionResult:
    """Ordered feature choice of one selector run.

    ``selected`` holds unique column indices, most important first.
    ``scores`` has one entry per input column (``-inf`` marks columns a
    method can never pick; these serialize as ``null``).
    """

    method: str
    selected: list
    scores: np.ndarray
    params: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    seed: int | None = None
    feature_codes: list | None = None
    fingerprint: str | None = None
    manifest_hash: str | None = None

    def __post_init__(self):
        self.selected = [int(i) for i in self.selected]
        if len(set(self.selected)) != len(self.selected):
            raise ValueError("selected indices must be unique")
        self.scores = np.asarray(self.scores, dtype=float)
        if any(i < 0 or i >= len(self.scores) for i in self.selected):
            raise ValueError("selected index out of range")

    @property
    def n_features(self) -> int:
        return len(self.scores)

    @property
    def selected_codes(self) -> list | None:
        if self.feature_codes is None:
            return None
        return [self.feature_codes[i] for i in self.selected]

    def with_context(self, feature_codes=None, fingerprint=None, seed=None) -> "SelectionResult":
        if feature_codes is not None:
            self.feature_codes = list(feature_codes)
        if fingerprint is not None:
            self.fingerprint = fingerprint
        if seed is not None:
            self.seed = seed
        return self

    def to_dict(self) -> dict:
        return _jsonable({
            "format": FORMAT,
            "method": self.method,
            "parameters": self.params,
            "selected": self.selected,
            "selected_codes": self.selected_codes,
            "scores": self.scores,
            "diagnostics": self.diagnostics,
            "seed": self.seed,
            "input_fingerprint": self.fingerprint,
            "feature_codes": self.feature_codes,
            "manifest_hash": self.manifest_hash,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionResult":
        if d.get("format") != FORMAT:
            raise ValueError(f"not a selection file (format={d.get('format')!r})")
        scores = np.array([-np.inf if s is None else s for s in d["scores"]], dtype=float)
        return cls(
            method=d["method"],
            selected=d["selected"],
            scores=scores,
            params=d.get("parameters", {}),
            diagnostics=d.get("diagnostics", {}),
            seed=d.get("seed"),
            feature_codes=d.get("feature_codes"),
            fingerprint=d.get("input_fingerprint"),
            manifest_hash=d.get("manifest_hash"),
        )

    def save(self, path):
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path) -> "SelectionResult":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def rank_descending(values) -> np.ndarray:
    """Indices by descending value, ties broken by lower index."""
    values = np.asarray(values, dtype=float)
    return np.lexsort((np.arange(len(values)), -values))


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
