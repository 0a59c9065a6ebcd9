"""Tabular data ingestion, encoding, standardization and splitting."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"

TRAIN_FRACTION = 0.70
VAL_FRACTION = 0.15

AMRIEH_DROPPED = ("Topic", "NationalITy", "PlaceofBirth", "SectionID", "GradeID")
AMRIEH_COLUMNS = (
    "gender", "NationalITy", "PlaceofBirth", "StageID", "GradeID", "SectionID",
    "Topic", "Semester", "Relation", "raisedhands", "VisITedResources",
    "AnnouncementsView", "Discussion", "ParentAnsweringSurvey",
    "ParentschoolSatisfaction", "StudentAbsenceDays", "Class",
)
# The public file uses H/M/L; long forms are accepted as well.
AMRIEH_TARGET_MAP = {"H": 1, "High": 1, "L": 0, "Low": 0}
AMRIEH_REMOVED_LABELS = {"M", "Medium"}


class DataError(ValueError):
    """Raised for malformed tables or datasets violating their invariants."""


@dataclass
class RawTable:
    column_names: list[str]
    column_kinds: list[str]
    rows: list[list]

    def __post_init__(self):
        if len(self.column_kinds) != len(self.column_names):
            raise DataError("column_kinds and column_names differ in length")
        width = len(self.column_names)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise DataError(f"row {i} has {len(row)} cells, expected {width}")

    def column(self, name: str) -> list:
        try:
            j = self.column_names.index(name)
        except ValueError:
            raise DataError(f"unknown column {name!r}") from None
        return [row[j] for row in self.rows]

    def kind(self, name: str) -> str:
        return self.column_kinds[self.column_names.index(name)]


@dataclass
class Dataset:
    """Encoded feature matrix with binary labels.

    ``features`` is standardized once it has gone through :func:`prepare`;
    the preprocessing recipes return the encoded but unscaled matrix.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str]
    positive_class_name: str = "1"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        n, K = self.features.shape
        if K < 1 or n < 2:
            raise DataError(f"dataset too small: n={n}, K={K}")
        if self.labels.shape != (n,):
            raise DataError("labels length does not match feature rows")
        if not set(np.unique(self.labels)) <= {0, 1}:
            raise DataError("labels must be binary 0/1")
        if len(np.unique(self.labels)) < 2:
            raise DataError("both classes must be present")
        if len(self.feature_names) != K:
            raise DataError("feature_names length does not match feature columns")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def K(self) -> int:
        return self.features.shape[1]


@dataclass
class DataSplits:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    seed: int

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train_idx), len(self.val_idx), len(self.test_idx)


@dataclass
class Scaler:
    """Per-column mean and scale fitted on a subset of rows."""

    mean: np.ndarray
    scale: np.ndarray

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=float) - self.mean) / self.scale


def _is_number(cell: str) -> bool:
    try:
        value = float(cell)
    except ValueError:
        return False
    return math.isfinite(value)


def load_csv(path) -> RawTable:
    """Read a comma-delimited UTF-8 file with a header row.

    A column whose every cell parses as a finite number is numeric (cells are
    converted to ``float``); everything else stays categorical text.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        records = list(csv.reader(fh))
    records = [r for r in records if r]
    if not records:
        raise DataError(f"{path}: empty file")
    header, body = [h.strip() for h in records[0]], records[1:]
    if not body:
        raise DataError(f"{path}: header but no data rows")
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(
                f"{path}:{i}: ragged row with {len(row)} cells under a "
                f"{len(header)}-column header"
            )
        for name, cell in zip(header, row):
            if cell.strip() == "":
                raise DataError(f"{path}:{i}: missing value in column {name!r}")

    kinds = []
    for j in range(len(header)):
        cells = [row[j].strip() for row in body]
        kinds.append(NUMERIC if all(_is_number(c) for c in cells) else CATEGORICAL)
    rows = [
        [float(c) if kind == NUMERIC else c.strip() for c, kind in zip(row, kinds)]
        for row in body
    ]
    return RawTable(header, kinds, rows)


def one_hot(values: list[str], name: str) -> tuple[np.ndarray, list[str]]:
    """Indicator columns for every level except the alphabetically first."""
    levels = sorted(set(values))
    kept = levels[1:]
    cols = np.array([[1.0 if v == lvl else 0.0 for lvl in kept] for v in values])
    cols = cols.reshape(len(values), len(kept))
    return cols, [f"{name}_{lvl}" for lvl in kept]


def _encode(table: RawTable, predictors: list[str], keep: np.ndarray):
    blocks, names = [], []
    for name in predictors:
        values = [v for v, k in zip(table.column(name), keep) if k]
        if table.kind(name) == NUMERIC:
            blocks.append(np.asarray(values, dtype=float)[:, None])
            names.append(name)
        else:
            cols, cols_names = one_hot([str(v) for v in values], name)
            blocks.append(cols)
            names.extend(cols_names)
    n = int(keep.sum())
    features = np.hstack(blocks) if blocks else np.empty((n, 0))
    return features, names


def preprocess_amrieh(table: RawTable) -> Dataset:
    """Apply the student-performance (xAPI) recipe.

    Drops the five location/curriculum columns, removes the middle class,
    maps high to 1 and low to 0, and one-hot encodes the remaining
    categoricals with the first level dropped. On the public 480-row file
    this yields 269 rows and 12 features.
    """
    missing = [c for c in AMRIEH_COLUMNS if c not in table.column_names]
    if missing:
        raise DataError(f"table does not carry the xAPI schema; missing {missing}")
    target = [str(v) for v in table.column("Class")]
    unexpected = set(target) - set(AMRIEH_TARGET_MAP) - AMRIEH_REMOVED_LABELS
    if unexpected:
        raise DataError(f"unexpected target labels {sorted(unexpected)}")
    keep = np.array([t not in AMRIEH_REMOVED_LABELS for t in target])
    if not keep.any():
        raise DataError("no instances remain after removing the middle class")
    labels = np.array([AMRIEH_TARGET_MAP[t] for t, k in zip(target, keep) if k])
    predictors = [
        c for c in table.column_names if c != "Class" and c not in AMRIEH_DROPPED
    ]
    features, names = _encode(table, predictors, keep)
    return Dataset(features, labels, names, positive_class_name="High")


def preprocess_generic(
    table: RawTable,
    target_column: str,
    positive_label: str,
    drop_columns=(),
    exclude_labels=(),
) -> Dataset:
    """One-hot (drop-first) categoricals, pass numerics, binarize the target.

    Rows whose target is in ``exclude_labels`` are removed first; the
    remaining target must have exactly two distinct values, one of which is
    ``positive_label``.
    """
    if target_column not in table.column_names:
        raise DataError(f"target column {target_column!r} not in table")
    for c in drop_columns:
        if c not in table.column_names:
            raise DataError(f"cannot drop unknown column {c!r}")
    target = [_label_text(v) for v in table.column(target_column)]
    excluded = {str(v) for v in exclude_labels}
    keep = np.array([t not in excluded for t in target])
    kept_target = [t for t, k in zip(target, keep) if k]
    levels = sorted(set(kept_target))
    if len(levels) != 2:
        raise DataError(
            f"target {target_column!r} is not binary after filtering: {levels}"
        )
    positive_label = _label_text(positive_label)
    if positive_label not in levels:
        raise DataError(f"positive label {positive_label!r} not among {levels}")
    labels = np.array([int(t == positive_label) for t in kept_target])
    predictors = [
        c for c in table.column_names
        if c != target_column and c not in set(drop_columns)
    ]
    if not predictors:
        raise DataError("no predictor columns left")
    features, names = _encode(table, predictors, keep)
    if features.shape[1] == 0 or np.all(features == features[0]):
        raise DataError("feature matrix is constant")
    return Dataset(features, labels, names, positive_class_name=positive_label)


def _label_text(value) -> str:
    # numeric targets come back as floats; 1.0 and "1" must match
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def make_splits(n: int, seed: int) -> DataSplits:
    """Shuffle ``0..n-1`` under ``seed`` into 70/15/15 train/val/test parts.

    Train and validation sizes are floored; test takes the remainder.
    """
    if n < 10:
        raise DataError(f"n={n} is too small to populate three splits (need >= 10)")
    n_train = math.floor(TRAIN_FRACTION * n)
    n_val = math.floor(VAL_FRACTION * n)
    if n - n_train - n_val < 1 or n_val < 1:
        raise DataError(f"n={n} leaves an empty split")
    order = np.random.default_rng(seed).permutation(n)
    return DataSplits(
        train_idx=np.sort(order[:n_train]),
        val_idx=np.sort(order[n_train:n_train + n_val]),
        test_idx=np.sort(order[n_train + n_val:]),
        seed=seed,
    )


def standardize(features: np.ndarray, fit_idx) -> tuple[np.ndarray, Scaler]:
    """Center and scale every column using statistics of the ``fit_idx`` rows.

    Population standard deviation is used. Constant columns are divided by 1.
    """
    features = np.asarray(features, dtype=float)
    fit_idx = np.asarray(fit_idx, dtype=int)
    if fit_idx.size == 0:
        raise DataError("cannot fit standardization on an empty index set")
    fit = features[fit_idx]
    mean = fit.mean(axis=0)
    std = fit.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    scaler = Scaler(mean=mean, scale=scale)
    return scaler.transform(features), scaler


def synthetic_blobs(n: int, K: int, separation: float, seed: int) -> Dataset:
    """Two balanced isotropic Gaussian classes offset along a random unit direction."""
    if n < 2 or n % 2:
        raise DataError(f"n must be a positive even count, got {n}")
    if K < 2:
        raise DataError(f"K must be >= 2, got {K}")
    if separation < 0:
        raise DataError("separation must be nonnegative")
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(K)
    direction /= np.linalg.norm(direction)
    labels = np.repeat([0, 1], n // 2)
    features = rng.standard_normal((n, K)) + np.outer(labels, separation * direction)
    order = rng.permutation(n)
    return Dataset(
        features[order], labels[order], [f"x{j}" for j in range(K)],
        positive_class_name="1",
    )


@dataclass
class PreparedData:
    """A standardized dataset together with the split and scaler that produced it."""

    dataset: Dataset
    splits: DataSplits
    scaler: Scaler
    source: dict = field(default_factory=dict)

    def manifest(self) -> dict:
        return {
            "feature_names": list(self.dataset.feature_names),
            "positive_class_name": self.dataset.positive_class_name,
            "n": self.dataset.n,
            "K": self.dataset.K,
            "standardization": {
                "mean": [float(v) for v in self.scaler.mean],
                "scale": [float(v) for v in self.scaler.scale],
            },
            "splits": {
                "seed": self.splits.seed,
                "train": [int(i) for i in self.splits.train_idx],
                "val": [int(i) for i in self.splits.val_idx],
                "test": [int(i) for i in self.splits.test_idx],
            },
            "source": self.source,
        }

    def write_manifest(self, path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2) + "\n")


def prepare(dataset: Dataset, seed: int, source: dict | None = None) -> PreparedData:
    """Split ``dataset`` and standardize it with statistics from the training rows."""
    splits = make_splits(dataset.n, seed)
    scaled, scaler = standardize(dataset.features, splits.train_idx)
    standardized = Dataset(
        scaled, dataset.labels.copy(), list(dataset.feature_names),
        dataset.positive_class_name,
    )
    return PreparedData(standardized, splits, scaler, dict(source or {}))
