"""Admission ingestion, 90-day aggregation, labeling and one-hot encoding.

Pipeline::

    records = load_admissions("admissions.csv", tree)
    windows = aggregate_windows(records)
    windows = attach_labels(windows, load_deaths("deaths.csv"))
    X = one_hot_encode(windows, tree)
    parts = split(X, labels_of(windows), SplitSpec(0.67, seed=1),
                  groups=[w.patient_id for w in windows])
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateSplit, InconsistentDates, MalformedRow, UnknownCode
from .icd_tree import IcdTree

log = logging.getLogger(__name__)

MAX_CODES_PER_ADMISSION = 25
ADMISSIONS_HEADER = ["patient_id", "admit_date", "discharge_date", "codes"]
DEATHS_HEADER = ["patient_id", "death_date"]


@dataclass(frozen=True)
class AdmissionRecord:
    patient_id: str
    admit_date: dt.date
    discharge_date: dt.date
    codes: tuple[str, ...]


@dataclass(frozen=True)
class AggregatedRecord:
    patient_id: str
    window_start: dt.date
    window_end: dt.date
    code_set: frozenset
    last_discharge: dt.date
    label: int | None = None


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.67
    seed: int = 0
    unit: str = "record"  # or "patient"

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DegenerateSplit(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.unit not in ("record", "patient"):
            raise ValueError(f"unit must be 'record' or 'patient', got {self.unit!r}")


# ---------------------------------------------------------------------------
# sparse binary design matrix
# ---------------------------------------------------------------------------


class BinaryMatrix:
    """Records x features 0/1 matrix in CSR form with a code per column."""

    def __init__(self, data, feature_index: Sequence[str]):
        data = sp.csr_matrix(data, dtype=np.uint8)
        data.sum_duplicates()
        data.eliminate_zeros()
        data.sort_indices()
        if data.nnz and data.data.max() > 1:
            raise ValueError("BinaryMatrix entries must be 0/1")
        if data.shape[1] != len(feature_index):
            raise ValueError(
                f"{data.shape[1]} columns but {len(feature_index)} feature codes"
            )
        self.data = data
        self.feature_index = list(feature_index)

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]

    def row(self, i) -> np.ndarray:
        """Column positions set in row ``i``."""
        s, e = self.data.indptr[i], self.data.indptr[i + 1]
        return self.data.indices[s:e]

    def column_of(self, code: str) -> int:
        try:
            return self.feature_index.index(code)
        except ValueError:
            raise UnknownCode(f"code {code!r} is not a column") from None

    def take_rows(self, rows) -> "BinaryMatrix":
        return BinaryMatrix(self.data[np.asarray(rows, dtype=np.intp)], self.feature_index)

    def take_cols(self, cols) -> "BinaryMatrix":
        cols = np.asarray(cols, dtype=np.intp)
        return BinaryMatrix(self.data[:, cols], [self.feature_index[j] for j in cols])

    def toarray(self, dtype=np.float64) -> np.ndarray:
        return self.data.toarray().astype(dtype, copy=False)

    def column_means(self) -> np.ndarray:
        if self.n_rows == 0:
            return np.zeros(self.n_cols)
        return np.asarray(self.data.sum(axis=0), dtype=float).ravel() / self.n_rows

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.shape, dtype=np.int64).tobytes())
        h.update(self.data.indptr.astype(np.int64).tobytes())
        h.update(self.data.indices.astype(np.int64).tobytes())
        h.update("\x1f".join(self.feature_index).encode())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, BinaryMatrix):
            return NotImplemented
        return (
            self.feature_index == other.feature_index
            and self.shape == other.shape
            and (self.data != other.data).nnz == 0
        )

    def __repr__(self):
        return f"BinaryMatrix({self.n_rows}x{self.n_cols}, nnz={self.data.nnz})"

    # -- text export ------------------------------------------------------------
    def save(self, path):
        """Header line of codes, then one line per row of ``col:1`` pairs."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(self.feature_index) + "\n")
            for i in range(self.n_rows):
                fh.write(" ".join(f"{j}:1" for j in self.row(i)) + "\n")

    @classmethod
    def load(cls, path) -> "BinaryMatrix":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            codes = header.split(",") if header else []
            indptr = [0]
            indices: list[int] = []
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if line:
                    for tok in line.split():
                        col, _, val = tok.partition(":")
                        if val != "1" or not col.isdigit():
                            raise MalformedRow(f"{path}:{lineno}: bad entry {tok!r}")
                        j = int(col)
                        if j >= len(codes):
                            raise MalformedRow(f"{path}:{lineno}: column {j} out of range")
                        indices.append(j)
                indptr.append(len(indices))
        n = len(indptr) - 1
        data = sp.csr_matrix(
            (np.ones(len(indices), dtype=np.uint8), np.asarray(indices, dtype=np.int32), indptr),
            shape=(n, len(codes)),
        )
        return cls(data, codes)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def _parse_date(text, where):
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise MalformedRow(f"{where}: bad date {text!r}") from None


def _open_csv(source):
    if hasattr(source, "read"):
        return source, False
    return open(source, newline="", encoding="utf-8"), True


def load_admissions(
    source,
    tree: IcdTree | None = None,
    strict: bool = False,
    exclude_codes: Iterable[str] = (),
    stats: dict | None = None,
) -> list[AdmissionRecord]:
    """Read the admissions CSV.

    Unknown codes raise ``UnknownCode`` in strict mode and are dropped with a
    warning otherwise; rows left without any valid code are dropped and
    counted. ``exclude_codes`` removes every patient that carries one of the
    listed codes (or a descendant of one) anywhere in their history.
    Output is sorted by (patient_id, admit_date, discharge_date).
    """
    fh, close = _open_csv(source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ADMISSIONS_HEADER:
            raise MalformedRow(f"bad admissions header {header!r}")
        records = []
        n_unknown = n_dropped = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise MalformedRow(f"line {lineno}: expected 4 fields, got {len(row)}")
            pid, a, d, codes_text = (c.strip() for c in row)
            if not pid:
                raise MalformedRow(f"line {lineno}: empty patient_id")
            admit = _parse_date(a, f"line {lineno}")
            discharge = _parse_date(d, f"line {lineno}")
            if discharge < admit:
                raise MalformedRow(f"line {lineno}: discharge before admission")
            raw = [c.strip() for c in codes_text.split(";") if c.strip()]
            if len(raw) > MAX_CODES_PER_ADMISSION:
                raise MalformedRow(
                    f"line {lineno}: {len(raw)} codes exceeds {MAX_CODES_PER_ADMISSION}"
                )
            codes = []
            for c in raw:
                if tree is not None and c not in tree:
                    if strict:
                        raise UnknownCode(f"line {lineno}: unknown code {c!r}")
                    n_unknown += 1
                    continue
                if c not in codes:
                    codes.append(c)
            if not codes:
                n_dropped += 1
                continue
            records.append(AdmissionRecord(pid, admit, discharge, tuple(codes)))
    finally:
        if close:
            fh.close()

    exclude = set(exclude_codes)
    n_excluded = 0
    if exclude:
        flagged = set()
        for r in records:
            for c in r.codes:
                chain = [c] + (tree.ancestors(c) if tree is not None else [])
                if exclude.intersection(chain):
                    flagged.add(r.patient_id)
                    break
        before = len(records)
        records = [r for r in records if r.patient_id not in flagged]
        n_excluded = before - len(records)

    if n_unknown:
        log.warning("dropped %d unknown code occurrences", n_unknown)
    if n_dropped:
        log.warning("dropped %d admissions with no valid codes", n_dropped)
    if stats is not None:
        stats.update(unknown_codes=n_unknown, dropped_rows=n_dropped, excluded_rows=n_excluded)
    records.sort(key=lambda r: (r.patient_id, r.admit_date, r.discharge_date))
    return records


def load_deaths(source) -> dict[str, dt.date]:
    fh, close = _open_csv(source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != DEATHS_HEADER:
            raise MalformedRow(f"bad deaths header {header!r}")
        deaths = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise MalformedRow(f"line {lineno}: expected 2 fields")
            pid = row[0].strip()
            if pid in deaths:
                raise MalformedRow(f"line {lineno}: duplicate death record for {pid!r}")
            deaths[pid] = _parse_date(row[1], f"line {lineno}")
        return deaths
    finally:
        if close:
            fh.close()


def write_admissions(path, records: Iterable[AdmissionRecord]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ADMISSIONS_HEADER)
        for r in records:
            w.writerow([r.patient_id, r.admit_date.isoformat(), r.discharge_date.isoformat(),
                        ";".join(r.codes)])


def write_deaths(path, deaths: dict):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DEATHS_HEADER)
        for pid, day in deaths.items():
            w.writerow([pid, day.isoformat()])


# ---------------------------------------------------------------------------
# aggregation and labels
# ---------------------------------------------------------------------------


def aggregate_windows(records: Sequence[AdmissionRecord], window_days: int = 90) -> list[AggregatedRecord]:
    """Greedy half-open windows ``[t, t + window_days)`` per patient.

    The earliest unassigned admission anchors a window; every admission whose
    admit date falls inside it is merged (code union, latest discharge).
    Patients appear in order of first occurrence in ``records``.
    """
    if window_days < 1:
        raise ValueError("window_days must be >= 1")
    by_patient: dict[str, list[AdmissionRecord]] = {}
    for r in records:
        by_patient.setdefault(r.patient_id, []).append(r)

    span = dt.timedelta(days=window_days)
    out = []
    for pid, recs in by_patient.items():
        recs = sorted(recs, key=lambda r: (r.admit_date, r.discharge_date))
        i = 0
        while i < len(recs):
            start = recs[i].admit_date
            codes = set()
            last_adm = start
            last_dis = recs[i].discharge_date
            while i < len(recs) and recs[i].admit_date < start + span:
                codes.update(recs[i].codes)
                last_adm = recs[i].admit_date
                last_dis = max(last_dis, recs[i].discharge_date)
                i += 1
            out.append(AggregatedRecord(pid, start, last_adm, frozenset(codes), last_dis))
    return out


def attach_labels(
    aggregated: Sequence[AggregatedRecord], deaths: dict, horizon_days: int = 90
) -> list[AggregatedRecord]:
    """label = 1 iff the death falls 0..horizon_days after the window's last discharge."""
    out = []
    for rec in aggregated:
        death = deaths.get(rec.patient_id)
        label = 0
        if death is not None:
            if death < rec.window_start:
                raise InconsistentDates(
                    f"patient {rec.patient_id}: death {death} before window start {rec.window_start}"
                )
            gap = (death - rec.last_discharge).days
            label = int(0 <= gap <= horizon_days)
        out.append(replace(rec, label=label))
    return out


def labels_of(aggregated: Sequence[AggregatedRecord]) -> np.ndarray:
    return np.array([-1 if r.label is None else r.label for r in aggregated], dtype=np.int8)


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------


def one_hot_encode(
    aggregated: Sequence[AggregatedRecord], tree: IcdTree, columns: Sequence[str] | None = None
) -> BinaryMatrix:
    """Ancestor-closed one-hot encoding.

    Columns default to the lexicographically sorted union of every code and
    its ancestors. Passing ``columns`` fixes the feature index instead (codes
    outside it raise ``UnknownCode``).
    """
    closure: dict[str, tuple[str, ...]] = {}

    def close(code):
        if code not in closure:
            closure[code] = (code, *tree.ancestors(code))
        return closure[code]

    row_sets = []
    for rec in aggregated:
        s = set()
        for c in rec.code_set:
            s.update(close(c))
        row_sets.append(s)

    if columns is None:
        columns = sorted(set().union(*row_sets)) if row_sets else []
    col_of = {c: j for j, c in enumerate(columns)}

    indptr = [0]
    indices: list[int] = []
    for s in row_sets:
        try:
            cols = sorted(col_of[c] for c in s)
        except KeyError as exc:
            raise UnknownCode(f"code {exc.args[0]!r} is not in the column index") from None
        indices.extend(cols)
        indptr.append(len(indices))
    data = sp.csr_matrix(
        (np.ones(len(indices), dtype=np.uint8), np.asarray(indices, dtype=np.int32), indptr),
        shape=(len(row_sets), len(columns)),
    )
    return BinaryMatrix(data, columns)


# ---------------------------------------------------------------------------
# train/test split
# ---------------------------------------------------------------------------


@dataclass
class SplitData:
    train: BinaryMatrix
    test: BinaryMatrix
    train_labels: np.ndarray | None
    test_labels: np.ndarray | None
    train_rows: np.ndarray
    test_rows: np.ndarray
    spec: SplitSpec = field(default_factory=SplitSpec)


def split_indices(n_rows: int, spec: SplitSpec, groups: Sequence | None = None):
    """Deterministic (train_rows, test_rows), both sorted ascending."""
    rng = np.random.default_rng(spec.seed)
    if spec.unit == "record":
        n_train = int(round(spec.train_fraction * n_rows))
        perm = rng.permutation(n_rows)
        train = np.sort(perm[:n_train])
        test = np.sort(perm[n_train:])
    else:
        if groups is None or len(groups) != n_rows:
            raise ValueError("patient-level split needs one group id per row")
        uniq = sorted(set(groups))
        perm = rng.permutation(len(uniq))
        n_train = int(round(spec.train_fraction * len(uniq)))
        train_groups = {uniq[i] for i in perm[:n_train]}
        mask = np.array([g in train_groups for g in groups], dtype=bool)
        train = np.flatnonzero(mask)
        test = np.flatnonzero(~mask)
    if len(train) == 0 or len(test) == 0:
        raise DegenerateSplit(f"split leaves {len(train)} train / {len(test)} test rows")
    return train, test


def split(matrix: BinaryMatrix, labels, spec: SplitSpec, groups=None) -> SplitData:
    train, test = split_indices(matrix.n_rows, spec, groups)
    lab = None if labels is None else np.asarray(labels)
    return SplitData(
        train=matrix.take_rows(train),
        test=matrix.take_rows(test),
        train_labels=None if lab is None else lab[train],
        test_labels=None if lab is None else lab[test],
        train_rows=train,
        test_rows=test,
        spec=spec,
    )


# ---------------------------------------------------------------------------
# on-disk dataset (matrix + sidecar metadata)
# ---------------------------------------------------------------------------


@dataclass
class EncodedDataset:
    matrix: BinaryMatrix
    labels: np.ndarray
    patient_ids: list[str]
    window_starts: list[str]
    train_rows: np.ndarray
    test_rows: np.ndarray
    spec: SplitSpec
    extra: dict = field(default_factory=dict)

    def split(self) -> SplitData:
        return SplitData(
            train=self.matrix.take_rows(self.train_rows),
            test=self.matrix.take_rows(self.test_rows),
            train_labels=self.labels[self.train_rows],
            test_labels=self.labels[self.test_rows],
            train_rows=self.train_rows,
            test_rows=self.test_rows,
            spec=self.spec,
        )

    def metadata(self) -> dict:
        return {
            "format": "icdfs-matrix/1",
            "n_rows": self.matrix.n_rows,
            "n_cols": self.matrix.n_cols,
            "fingerprint": self.matrix.fingerprint(),
            "split": {
                "train_fraction": self.spec.train_fraction,
                "seed": self.spec.seed,
                "unit": self.spec.unit,
                "train_rows": [int(i) for i in self.train_rows],
                "test_rows": [int(i) for i in self.test_rows],
            },
            "rows": [
                {"patient_id": p, "window_start": w, "label": int(y)}
                for p, w, y in zip(self.patient_ids, self.window_starts, self.labels)
            ],
            **self.extra,
        }

    def save(self, matrix_path, meta_path=None):
        matrix_path = Path(matrix_path)
        meta_path = Path(meta_path) if meta_path else metadata_path_for(matrix_path)
        self.matrix.save(matrix_path)
        meta_path.write_text(json.dumps(self.metadata(), indent=1, sort_keys=True) + "\n",
                             encoding="utf-8")
        return matrix_path, meta_path

    @classmethod
    def load(cls, matrix_path, meta_path=None) -> "EncodedDataset":
        matrix_path = Path(matrix_path)
        meta_path = Path(meta_path) if meta_path else metadata_path_for(matrix_path)
        matrix = BinaryMatrix.load(matrix_path)
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("n_rows") != matrix.n_rows or meta.get("n_cols") != matrix.n_cols:
            raise MalformedRow(f"{meta_path} does not describe {matrix_path}")
        s = meta["split"]
        rows = meta["rows"]
        known = {"format", "n_rows", "n_cols", "fingerprint", "split", "rows"}
        return cls(
            matrix=matrix,
            labels=np.array([r["label"] for r in rows], dtype=np.int8),
            patient_ids=[r["patient_id"] for r in rows],
            window_starts=[r["window_start"] for r in rows],
            train_rows=np.asarray(s["train_rows"], dtype=np.intp),
            test_rows=np.asarray(s["test_rows"], dtype=np.intp),
            spec=SplitSpec(s["train_fraction"], s["seed"], s["unit"]),
            extra={k: v for k, v in meta.items() if k not in known},
        )


def metadata_path_for(matrix_path) -> Path:
    p = Path(matrix_path)
    return p.with_name(p.stem + ".meta.json")


def encode_cohort(
    records: Sequence[AdmissionRecord],
    deaths: dict,
    tree: IcdTree,
    spec: SplitSpec,
    window_days: int = 90,
    horizon_days: int = 90,
) -> EncodedDataset:
    windows = attach_labels(aggregate_windows(records, window_days), deaths, horizon_days)
    matrix = one_hot_encode(windows, tree)
    pids = [w.patient_id for w in windows]
    train, test = split_indices(matrix.n_rows, spec, pids)
    return EncodedDataset(
        matrix=matrix,
        labels=labels_of(windows),
        patient_ids=pids,
        window_starts=[w.window_start.isoformat() for w in windows],
        train_rows=train,
        test_rows=test,
        spec=spec,
        extra={"window_days": window_days, "horizon_days": horizon_days},
    )
