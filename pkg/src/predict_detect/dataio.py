"""Datasets, CSV ingestion, min-max scaling and the synthetic two-Gaussian generator."""
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

LEGITIMATE = 0
MALICIOUS = 1
CLASS_NAMES = {LEGITIMATE: "Legitimate", MALICIOUS: "Malicious"}


class DataError(ValueError):
    """Raised for malformed input data, with the offending location in the message."""


@dataclass
class Dataset:
    """Feature matrix plus optional binary labels (0 = Legitimate, 1 = Malicious)."""

    X: np.ndarray
    y: np.ndarray | None = None
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            raise DataError(f"expected a 2-D feature matrix, got shape {self.X.shape}")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (self.X.shape[0],):
                raise DataError("label vector length does not match number of samples")
            if not np.isin(self.y, (LEGITIMATE, MALICIOUS)).all():
                raise DataError("labels must be 0 (Legitimate) or 1 (Malicious)")
        if not self.feature_names:
            self.feature_names = [f"f{j + 1}" for j in range(self.dim)]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def class_counts(self) -> dict[int, int]:
        if self.y is None:
            return {}
        return {c: int(np.sum(self.y == c)) for c in (LEGITIMATE, MALICIOUS)}

    def __len__(self):
        return self.X.shape[0]

    def subset(self, idx) -> "Dataset":
        y = None if self.y is None else self.y[idx]
        return Dataset(self.X[idx], y, list(self.feature_names))


def load_csv(path, label_column="label", label_map=None) -> Dataset:
    """Read a headered CSV into a :class:`Dataset` with raw (unscaled) values.

    ``label_map`` maps raw label strings to 0/1. Without it, numeric labels
    ``0``/``1`` are taken as-is and any other pair of values is mapped in
    sorted order (first -> 0).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row expected") from None
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header")
        label_pos = header.index(label_column)
        names = [h for j, h in enumerate(header) if j != label_pos]
        rows, raw_labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            values = []
            for j, cell in enumerate(row):
                if j == label_pos:
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: column {header[j]!r}: non-numeric value {cell!r}"
                    ) from None
            rows.append(values)
            raw_labels.append(row[label_pos].strip())
    if not rows:
        raise DataError(f"{path}: no data rows")

    distinct = sorted(set(raw_labels))
    if label_map is None:
        if set(distinct) <= {"0", "1"}:
            label_map = {"0": LEGITIMATE, "1": MALICIOUS}
        elif len(distinct) == 2:
            label_map = {distinct[0]: LEGITIMATE, distinct[1]: MALICIOUS}
        else:
            label_map = {}
    if len(distinct) > 2:
        raise DataError(f"{path}: column {label_column!r} has {len(distinct)} distinct "
                        f"labels {distinct[:5]}, expected 2")
    y = []
    for lineno, lab in enumerate(raw_labels, start=2):
        if lab not in label_map:
            raise DataError(f"{path}:{lineno}: column {label_column!r}: unmapped label {lab!r}")
        y.append(int(label_map[lab]))
    return Dataset(np.array(rows), np.array(y), names)


def save_csv(path, data: Dataset, label_column="label"):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(data.feature_names) + [label_column])
        ys = data.y if data.y is not None else [""] * len(data)
        for row, lab in zip(data.X, ys):
            w.writerow([repr(float(v)) for v in row] + [lab])


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Per-feature rescale to [0, 1]; constant features map to 0.0.

    Unlike sklearn's MinMaxScaler, the learned ``data_min_``/``data_max_``
    record round-trips through a small CSV so stream samples can be mapped
    with the identical transform.
    """

    def fit(self, X, y=None):
        X = check_array(X)
        self.data_min_ = X.min(axis=0)
        self.data_max_ = X.max(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "data_min_")
        X = check_array(X)
        span = self.data_max_ - self.data_min_
        const = span == 0
        out = (X - self.data_min_) / np.where(const, 1.0, span)
        out[:, const] = 0.0
        return out

    def save(self, path, feature_names=None):
        check_is_fitted(self, "data_min_")
        names = feature_names or [f"f{j + 1}" for j in range(self.n_features_in_)]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["feature", "min", "max"])
            for name, lo, hi in zip(names, self.data_min_, self.data_max_):
                w.writerow([name, repr(float(lo)), repr(float(hi))])

    @classmethod
    def load(cls, path):
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        norm = cls()
        norm.data_min_ = np.array([float(r["min"]) for r in rows])
        norm.data_max_ = np.array([float(r["max"]) for r in rows])
        norm.n_features_in_ = len(rows)
        return norm


def normalize(data: Dataset) -> tuple[Dataset, MinMaxNormalizer]:
    if len(data) == 0:
        raise DataError("cannot normalize an empty dataset")
    norm = MinMaxNormalizer().fit(data.X)
    return Dataset(norm.transform(data.X), data.y, list(data.feature_names)), norm


def generate_synthetic(n_per_class=250, dim=10, rng_seed=0, legit_mean=0.75,
                       malicious_mean=0.25, sigma=0.05) -> Dataset:
    """Two isotropic Gaussian classes, clipped to [0, 1].

    Rows are ordered Legitimate block first, then Malicious; callers that
    need a shuffled order do it themselves.
    """
    if n_per_class < 1 or dim < 1:
        raise ValueError("n_per_class and dim must be >= 1")
    rng = np.random.default_rng(rng_seed)
    legit = rng.normal(legit_mean, sigma, size=(n_per_class, dim))
    mal = rng.normal(malicious_mean, sigma, size=(n_per_class, dim))
    X = np.clip(np.vstack([legit, mal]), 0.0, 1.0)
    y = np.r_[np.full(n_per_class, LEGITIMATE), np.full(n_per_class, MALICIOUS)]
    return Dataset(X, y)
