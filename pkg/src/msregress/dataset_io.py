"""Tabular dataset loading, scaling, splitting and interaction expansion."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised when a dataset file or array fails validation."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    outcome: np.ndarray
    feature_names: tuple[str, ...]
    outcome_name: str = "y"

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.outcome, dtype=float)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError(f"outcome length {y.shape} does not match {X.shape[0]} rows")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError("dataset needs at least one row and one feature")
        if len(self.feature_names) != X.shape[1]:
            raise DataError("feature_names length does not match column count")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise DataError("feature_names must be unique")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataError("dataset contains non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.outcome[rows], self.feature_names, self.outcome_name)


@dataclass(frozen=True)
class ScalingParams:
    """Column-wise centering and scaling learned from a training set.

    ``kept_names`` lists the retained columns in output order; ``dropped`` the
    constant columns that were removed.
    """

    kept_names: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    dropped: tuple[str, ...] = field(default=())

    def transform(self, ds: Dataset) -> Dataset:
        index = {name: j for j, name in enumerate(ds.feature_names)}
        missing = [name for name in self.kept_names if name not in index]
        if missing:
            raise DataError(f"columns missing for scaling: {missing}")
        cols = [index[name] for name in self.kept_names]
        Z = (ds.features[:, cols] - self.mean) / self.sd
        return Dataset(Z, ds.outcome, self.kept_names, ds.outcome_name)

    def inverse(self, ds: Dataset) -> Dataset:
        if tuple(ds.feature_names) != self.kept_names:
            raise DataError("dataset columns do not match scaling parameters")
        return Dataset(ds.features * self.sd + self.mean, ds.outcome, self.kept_names, ds.outcome_name)

    def to_dict(self) -> dict:
        return {
            "kept_names": list(self.kept_names),
            "mean": self.mean.tolist(),
            "sd": self.sd.tolist(),
            "dropped": list(self.dropped),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingParams":
        return cls(
            tuple(d["kept_names"]),
            np.asarray(d["mean"], dtype=float),
            np.asarray(d["sd"], dtype=float),
            tuple(d.get("dropped", ())),
        )

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_json(cls, path) -> "ScalingParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def load_csv(path, outcome_column: str) -> Dataset:
    """Read a headed numeric CSV, splitting off ``outcome_column`` as the outcome.

    Every cell must parse as a finite float; the error message names the
    first offending (1-based data) row and column.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if outcome_column not in header:
            raise DataError(f"outcome column {outcome_column!r} not in header {header}")
        rows = []
        for lineno, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise DataError(f"row {lineno}: expected {len(header)} cells, got {len(record)}")
            values = []
            for name, cell in zip(header, record):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"row {lineno}, column {name!r}: cannot parse {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"row {lineno}, column {name!r}: non-finite value {cell!r}")
                values.append(v)
            rows.append(values)
    if not rows:
        raise DataError(f"{path} has no data rows")
    table = np.asarray(rows, dtype=float)
    j = header.index(outcome_column)
    keep = [i for i in range(len(header)) if i != j]
    return Dataset(table[:, keep], table[:, j], tuple(header[i] for i in keep), outcome_column)


def write_csv(ds: Dataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*ds.feature_names, ds.outcome_name])
        for row, yi in zip(ds.features, ds.outcome):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(yi))])


def fit_scaling(ds: Dataset) -> ScalingParams:
    X = ds.features
    sd = X.std(axis=0, ddof=1) if ds.n > 1 else np.zeros(ds.p)
    const = ~(sd > 0)
    if const.all():
        raise DataError("all feature columns are constant")
    dropped = tuple(name for name, c in zip(ds.feature_names, const) if c)
    if dropped:
        logger.warning("dropping constant columns: %s", ", ".join(dropped))
    keep = ~const
    return ScalingParams(
        tuple(name for name, k in zip(ds.feature_names, keep) if k),
        X[:, keep].mean(axis=0),
        sd[keep],
        dropped,
    )


def standardize(ds: Dataset) -> tuple[Dataset, ScalingParams]:
    """Center and scale every feature to mean 0, sd 1 (n-1 denominator)."""
    params = fit_scaling(ds)
    return params.transform(ds), params


def train_test_split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    train_idx, test_idx = split_indices(ds.n, train_fraction, seed)
    return ds.subset(train_idx), ds.subset(test_idx)


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(round(n * train_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def interaction_names(names) -> tuple[str, ...]:
    names = list(names)
    pairs = [f"{names[j]}:{names[k]}" for j in range(len(names)) for k in range(j + 1, len(names))]
    return tuple(names + pairs)


def interaction_matrix(X: np.ndarray) -> np.ndarray:
    """Original columns followed by all pairwise products x_j * x_k, j < k."""
    X = np.asarray(X, dtype=float)
    j, k = np.triu_indices(X.shape[1], k=1)
    return np.hstack([X, X[:, j] * X[:, k]])


def expand_interactions(ds: Dataset) -> Dataset:
    return Dataset(interaction_matrix(ds.features), ds.outcome,
                   interaction_names(ds.feature_names), ds.outcome_name)
