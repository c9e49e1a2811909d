"""Feature-table ingestion, standardisation, fold assignment and synthetic data.

CSV schema: UTF-8, comma separated, one header row. One column holds the
subject id, one holds the class label (any two distinct strings), every other
column is a numeric feature. Labels are encoded by sorted distinct value, so
``{"AD", "NC"}`` becomes ``AD -> 0, NC -> 1``.
"""
import csv
import os
from dataclasses import dataclass

import numpy as np

MISSING = {"", "na", "nan", "null", "none"}
STD_FLOOR = 1e-8


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list
    subject_ids: list
    class_names: list
    dropped_count: int = 0

    def __post_init__(self):
        n, d = self.X.shape
        if self.y.shape != (n,):
            raise DataError(f"labels shape {self.y.shape} does not match {n} rows")
        if len(self.feature_names) != d or len(self.subject_ids) != n:
            raise DataError("names/ids do not match the feature matrix")

    @property
    def n_subjects(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    def subset_features(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            X=self.X[:, idx], y=self.y,
            feature_names=[self.feature_names[i] for i in idx],
            subject_ids=self.subject_ids, class_names=self.class_names,
            dropped_count=self.dropped_count,
        )


def load_column_map(path):
    """Read ``source_header = canonical_name`` lines (``#`` comments allowed)."""
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected 'source = target'")
            src, dst = (part.strip() for part in line.split("=", 1))
            mapping[src] = dst
    return mapping


def load_csv(path, label_column="label", id_column="id", column_map=None):
    """Load a feature table; rows with any missing value are dropped.

    Raises ``FileNotFoundError`` for a missing file and :class:`DataError` for
    every content problem, naming the offending row or column.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"input file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty (no header row)") from None
        rows = [row for row in reader if row]

    header = [h.strip() for h in header]
    if column_map:
        header = [column_map.get(h, h) for h in header]
    if label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} not found in header")
    label_pos = header.index(label_column)
    id_pos = header.index(id_column) if id_column in header else None
    feat_pos = [i for i in range(len(header)) if i not in (label_pos, id_pos)]
    if not feat_pos:
        raise DataError(f"{path}: no feature columns")

    for lineno, row in enumerate(rows, 2):
        if len(row) != len(header):
            raise DataError(
                f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}"
            )

    for j in feat_pos:
        cells = [row[j].strip() for row in rows if row[j].strip().lower() not in MISSING]
        if cells and not any(_is_float(c) for c in cells):
            raise DataError(f"{path}: feature column {header[j]!r} is not numeric")

    X_rows, labels, ids = [], [], []
    dropped = 0
    for lineno, row in enumerate(rows, 2):
        label = row[label_pos].strip()
        vals = [row[j].strip() for j in feat_pos]
        if label.lower() in MISSING or any(v.lower() in MISSING for v in vals):
            dropped += 1
            continue
        parsed = []
        for j, v in zip(feat_pos, vals):
            try:
                parsed.append(float(v))
            except ValueError:
                raise DataError(
                    f"{path}: row {lineno}, column {header[j]!r}: cannot parse {v!r} as a number"
                ) from None
        X_rows.append(parsed)
        labels.append(label)
        ids.append(row[id_pos].strip() if id_pos is not None else str(lineno - 2))

    class_names = sorted(set(labels))
    if len(class_names) != 2:
        raise DataError(
            f"{path}: label column {label_column!r} must hold exactly 2 classes "
            f"after filtering, found {class_names}"
        )
    codes = {name: i for i, name in enumerate(class_names)}
    return Dataset(
        X=np.array(X_rows, dtype=np.float64).reshape(len(X_rows), len(feat_pos)),
        y=np.array([codes[lab] for lab in labels], dtype=np.int64),
        feature_names=[header[j] for j in feat_pos],
        subject_ids=ids,
        class_names=class_names,
        dropped_count=dropped,
    )


def _is_float(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def format_float(x):
    return format(float(x), ".17g")


def dataset_rows(dataset, label_column="label", id_column="id"):
    yield [id_column, label_column, *dataset.feature_names]
    for sid, label, row in zip(dataset.subject_ids, dataset.y, dataset.X):
        yield [sid, dataset.class_names[label], *(format_float(v) for v in row)]


def save_csv(dataset, path, label_column="label", id_column="id"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(
            dataset_rows(dataset, label_column, id_column)
        )


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


def standardize(X, train_mask):
    """Z-score every row with the training rows' mean and population std."""
    X = np.asarray(X, dtype=np.float64)
    train = X[np.asarray(train_mask, dtype=bool)]
    if train.shape[0] == 0:
        raise DataError("standardize needs at least one training row")
    params = Standardization(train.mean(axis=0), np.maximum(train.std(axis=0), STD_FLOOR))
    return params.apply(X), params


def stratified_folds(y, folds=5, seed=0):
    """Fold id per subject; classes are shuffled then dealt round-robin.

    Fold sizes differ by at most one and each fold's class counts are within
    one of each other fold's.
    """
    y = np.asarray(y)
    if folds < 2:
        raise DataError(f"need at least 2 folds, got {folds}")
    if y.shape[0] < folds:
        raise DataError(f"{y.shape[0]} subjects cannot fill {folds} folds")
    rng = np.random.default_rng(seed)
    order = []
    for cls in np.unique(y):
        idx = np.nonzero(y == cls)[0]
        if idx.size < folds:
            raise DataError(
                f"class {cls} has {idx.size} subjects, fewer than {folds} folds"
            )
        order.append(rng.permutation(idx))
    order = np.concatenate(order)
    assignment = np.empty(y.shape[0], dtype=np.int64)
    assignment[order] = np.arange(order.size) % folds
    return assignment


def synthesize(n_per_class=100, d_total=100, d_informative=10, gap=3.0, seed=0):
    """Two Gaussian classes; the first ``d_informative`` columns carry signal.

    Informative columns have means -gap/2 (class 0, ``control``) and +gap/2
    (class 1, ``disease``), unit variance; the rest are N(0, 1) noise.
    Rows are shuffled with the same seed.
    """
    if not 0 <= d_informative <= d_total:
        raise DataError(f"d_informative={d_informative} must lie in [0, d_total={d_total}]")
    if gap < 0:
        raise DataError(f"gap must be >= 0, got {gap}")
    rng = np.random.default_rng(seed)
    n = 2 * n_per_class
    y = np.repeat([0, 1], n_per_class)
    X = rng.standard_normal((n, d_total))
    X[:, :d_informative] += np.where(y == 1, gap / 2.0, -gap / 2.0)[:, None]
    perm = rng.permutation(n)
    X, y = X[perm], y[perm]
    width = max(3, len(str(d_total - 1)))
    return Dataset(
        X=X, y=y.astype(np.int64),
        feature_names=[f"f{i:0{width}d}" for i in range(d_total)],
        subject_ids=[f"S{i:04d}" for i in range(n)],
        class_names=["control", "disease"],
    )
