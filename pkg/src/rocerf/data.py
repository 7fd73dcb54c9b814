"""Tabular binary-classification data: loading, preprocessing, splitting.

Labels are always stored as ``+1`` / ``-1``. Randomness comes from numpy's
PCG64 generator (``numpy.random.default_rng``) seeded explicitly, so every
split and synthetic draw is reproducible from its seed.
"""

from __future__ import annotations

import configparser
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateLabels,
    DegenerateSplit,
    EmptyTrainingSet,
    MissingFile,
    SchemaMismatch,
)

logger = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
LABEL = "label"
_KINDS = (NUMERIC, CATEGORICAL, LABEL)
_MISSING = {"", "na", "nan", "?", "n/a", "null"}

STD_FLOOR = 1e-8


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Column:
    name: str
    kind: str


@dataclass(frozen=True)
class Schema:
    """Ordered column descriptors plus the label column and its positive value."""

    columns: tuple[Column, ...]
    label: str
    positive_label: str

    @property
    def feature_columns(self) -> tuple[Column, ...]:
        return tuple(c for c in self.columns if c.kind != LABEL)

    def to_dict(self) -> dict:
        return {
            "columns": [[c.name, c.kind] for c in self.columns],
            "label": self.label,
            "positive_label": self.positive_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        return cls(
            columns=tuple(Column(n, k) for n, k in d["columns"]),
            label=d["label"],
            positive_label=str(d["positive_label"]),
        )


def load_schema(path: str | Path) -> Schema:
    """Read a schema file.

    The file is INI-style::

        [label]
        column = credit_risk
        positive = good

        [columns]
        duration = numeric
        purpose = categorical
        credit_risk = label
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep column-name case
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise SchemaMismatch(f"unreadable schema file {path}: {exc}") from exc
    if "columns" not in parser or "label" not in parser:
        raise SchemaMismatch(f"schema file {path} needs [columns] and [label] sections")
    cols = []
    for name, kind in parser["columns"].items():
        kind = kind.strip().lower()
        if kind not in _KINDS:
            raise SchemaMismatch(f"unknown column kind {kind!r}", column=name)
        cols.append(Column(name, kind))
    label = parser["label"].get("column")
    positive = parser["label"].get("positive")
    if label is None or positive is None:
        raise SchemaMismatch("[label] section needs 'column' and 'positive'")
    if not any(c.name == label for c in cols):
        cols.append(Column(label, LABEL))
    cols = [Column(c.name, LABEL) if c.name == label else c for c in cols]
    if sum(c.kind == LABEL for c in cols) != 1:
        raise SchemaMismatch("exactly one label column is required")
    return Schema(tuple(cols), label, positive.strip())


@dataclass(frozen=True)
class RawDataset:
    """Unstandardized rows: numeric columns as floats, categoricals as strings."""

    columns: dict[str, np.ndarray]
    labels: np.ndarray
    schema: Schema
    dropped_rows: int = 0

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    def take(self, idx: np.ndarray) -> "RawDataset":
        return RawDataset(
            {k: v[idx] for k, v in self.columns.items()},
            self.labels[idx],
            self.schema,
        )


@dataclass(frozen=True)
class Dataset:
    """Standardized feature matrix with labels in {-1, +1}."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise SchemaMismatch(f"features {X.shape} and labels {y.shape} disagree")
        if not np.all((y == 1) | (y == -1)):
            raise DegenerateLabels("labels must be -1 or +1")
        if not np.all(np.isfinite(X)):
            raise SchemaMismatch("features contain NaN or Inf")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise SchemaMismatch(f"{len(names)} feature names for {X.shape[1]} columns")
        object.__setattr__(self, "features", _readonly(X))
        object.__setattr__(self, "labels", _readonly(y))
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def has_both_classes(self) -> bool:
        return bool(np.any(self.labels == 1) and np.any(self.labels == -1))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], self.feature_names)

    def without(self, removed) -> "Dataset":
        keep = np.ones(self.n, dtype=bool)
        keep[np.asarray(list(removed), dtype=np.int64)] = False
        return self.subset(np.flatnonzero(keep))

    def to_csv(self, path: str | Path) -> None:
        from .io import atomic_write_text

        lines = [",".join(list(self.feature_names) + ["label"])]
        for row, lab in zip(self.features, self.labels):
            lines.append(",".join(repr(float(v)) for v in row) + f",{int(lab)}")
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "Dataset":
        path = Path(path)
        if not path.is_file():
            raise MissingFile(path)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[-1] != "label":
                raise SchemaMismatch(f"{path}: last header column must be 'label'")
            rows = list(reader)
        try:
            arr = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
        except ValueError as exc:
            raise SchemaMismatch(f"{path}: non-numeric cell ({exc})") from exc
        arr = arr.reshape(len(rows), len(header))
        return cls(arr[:, :-1], arr[:, -1].astype(np.int64), tuple(header[:-1]))


def load_csv(
    path: str | Path,
    schema: Schema,
    label_column: str | None = None,
    positive_label: str | None = None,
) -> RawDataset:
    """Load a headered CSV according to ``schema``.

    Rows with a missing value in any used column are dropped; the count is
    logged and kept on the result as ``dropped_rows``.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    label_column = label_column or schema.label
    positive_label = str(positive_label if positive_label is not None else schema.positive_label)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaMismatch(f"{path} is empty")
        header = [h.strip() for h in header]
        pos = {}
        for col in schema.columns:
            if col.name not in header:
                raise SchemaMismatch(f"column absent from {path.name}", column=col.name)
            pos[col.name] = header.index(col.name)
        if label_column not in pos:
            raise SchemaMismatch("label column not in schema", column=label_column)

        data: dict[str, list] = {c.name: [] for c in schema.feature_columns}
        labels: list[int] = []
        dropped = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaMismatch(f"expected {len(header)} cells, got {len(row)}", row=lineno)
            cells = {name: row[j].strip() for name, j in pos.items()}
            if any(v.lower() in _MISSING for v in cells.values()):
                dropped += 1
                continue
            for col in schema.feature_columns:
                v = cells[col.name]
                if col.kind == NUMERIC:
                    try:
                        fv = float(v)
                    except ValueError:
                        raise SchemaMismatch(
                            f"non-numeric value {v!r}", row=lineno, column=col.name
                        ) from None
                    if not math.isfinite(fv):
                        raise SchemaMismatch(f"non-finite value {v!r}", row=lineno, column=col.name)
                    data[col.name].append(fv)
                else:
                    data[col.name].append(v)
            labels.append(cells[label_column])

    distinct = sorted(set(labels))
    if len(distinct) != 2:
        raise DegenerateLabels(
            f"label column {label_column!r} must have exactly two values, found {distinct}"
        )
    if positive_label not in distinct:
        raise DegenerateLabels(f"positive label {positive_label!r} not among {distinct}")
    if dropped:
        logger.info("dropped %d rows with missing values from %s", dropped, path)

    columns = {}
    for col in schema.feature_columns:
        dtype = np.float64 if col.kind == NUMERIC else object
        columns[col.name] = _readonly(np.array(data[col.name], dtype=dtype))
    y = np.where(np.array(labels, dtype=object) == positive_label, 1, -1).astype(np.int64)
    return RawDataset(columns, _readonly(y), schema, dropped)


@dataclass(frozen=True)
class Preprocessor:
    """Z-scores numeric columns and one-hot encodes categoricals.

    Fitted on training rows only. Categories unseen at fit time encode as an
    all-zeros block.
    """

    schema: Schema
    numeric_means: dict[str, float]
    numeric_stddevs: dict[str, float]
    categorical_maps: dict[str, tuple[str, ...]]

    @property
    def feature_names(self) -> tuple[str, ...]:
        names = []
        for col in self.schema.feature_columns:
            if col.kind == NUMERIC:
                names.append(col.name)
            else:
                names.extend(f"{col.name}={cat}" for cat in self.categorical_maps[col.name])
        return tuple(names)

    def transform(self, raw: RawDataset) -> Dataset:
        blocks = []
        for col in self.schema.feature_columns:
            values = raw.columns[col.name]
            if col.kind == NUMERIC:
                z = (values - self.numeric_means[col.name]) / self.numeric_stddevs[col.name]
                blocks.append(z[:, None])
            else:
                cats = self.categorical_maps[col.name]
                index = {c: j for j, c in enumerate(cats)}
                block = np.zeros((raw.n, len(cats)))
                for i, v in enumerate(values):
                    j = index.get(v)
                    if j is not None:
                        block[i, j] = 1.0
                blocks.append(block)
        X = np.hstack(blocks) if blocks else np.zeros((raw.n, 0))
        return Dataset(X, raw.labels, self.feature_names)

    def inverse_numeric(self, features: np.ndarray) -> dict[str, np.ndarray]:
        """Recover raw numeric columns from standardized features."""
        features = np.atleast_2d(features)
        out, j = {}, 0
        for col in self.schema.feature_columns:
            if col.kind == NUMERIC:
                out[col.name] = (
                    features[:, j] * self.numeric_stddevs[col.name] + self.numeric_means[col.name]
                )
                j += 1
            else:
                j += len(self.categorical_maps[col.name])
        return out

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "numeric_means": self.numeric_means,
            "numeric_stddevs": self.numeric_stddevs,
            "categorical_maps": {k: list(v) for k, v in self.categorical_maps.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Preprocessor":
        return cls(
            Schema.from_dict(d["schema"]),
            {k: float(v) for k, v in d["numeric_means"].items()},
            {k: float(v) for k, v in d["numeric_stddevs"].items()},
            {k: tuple(v) for k, v in d["categorical_maps"].items()},
        )


def fit_preprocessor(train_raw: RawDataset) -> Preprocessor:
    if train_raw.n == 0:
        raise EmptyTrainingSet("cannot fit a preprocessor on zero rows")
    means, stds, cats = {}, {}, {}
    for col in train_raw.schema.feature_columns:
        v = train_raw.columns[col.name]
        if col.kind == NUMERIC:
            means[col.name] = float(np.mean(v))
            stds[col.name] = max(float(np.std(v)), STD_FLOOR)
        else:
            cats[col.name] = tuple(sorted(set(v.tolist())))
    return Preprocessor(train_raw.schema, means, stds, cats)


def fit_apply_preprocess(
    train_raw: RawDataset, others: Sequence[RawDataset] = ()
) -> tuple[Preprocessor, list[Dataset]]:
    """Fit on ``train_raw`` and transform it plus every dataset in ``others``.

    Returns the preprocessor and ``[train, *others]`` standardized.
    """
    pre = fit_preprocessor(train_raw)
    return pre, [pre.transform(train_raw)] + [pre.transform(o) for o in others]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(not (0.0 < f < 1.0) for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise DegenerateSplit(f"split fractions must lie in (0,1) and sum to 1, got {fr}")


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_val = int(math.floor(n * spec.val_fraction + 1e-9))
    n_test = int(math.floor(n * spec.test_fraction + 1e-9))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) <= 0:
        raise DegenerateSplit(
            f"n={n} with fractions {spec.train_fraction, spec.val_fraction, spec.test_fraction} "
            f"gives sizes {(n_train, n_val, n_test)}"
        )
    perm = np.random.default_rng(spec.seed).permutation(n)
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def split(dataset, spec: SplitSpec = SplitSpec()):
    """Shuffle and partition rows into train/val/test.

    Works on both :class:`Dataset` and :class:`RawDataset` (the latter so
    preprocessing can be fitted on training rows only).
    """
    tr, va, te = split_indices(dataset.n, spec)
    take = dataset.subset if isinstance(dataset, Dataset) else dataset.take
    train = take(tr)
    y = train.labels
    if not (np.any(y == 1) and np.any(y == -1)):
        raise DegenerateSplit("training split contains a single class")
    return train, take(va), take(te)


def make_synthetic_gaussians(
    n_per_class: int, d: int, separation: float, seed: int
) -> Dataset:
    """Two isotropic unit Gaussians centred at +-separation/2 along the first axis.

    Rows alternate between the classes (+1 first).
    """
    if n_per_class < 1 or d < 1 or separation < 0:
        raise ValueError("need n_per_class >= 1, d >= 1, separation >= 0")
    rng = np.random.default_rng(seed)
    shift = np.zeros(d)
    shift[0] = separation / 2.0
    pos = rng.standard_normal((n_per_class, d)) + shift
    neg = rng.standard_normal((n_per_class, d)) - shift
    X = np.empty((2 * n_per_class, d))
    X[0::2], X[1::2] = pos, neg
    y = np.empty(2 * n_per_class, dtype=np.int64)
    y[0::2], y[1::2] = 1, -1
    return Dataset(X, y)
