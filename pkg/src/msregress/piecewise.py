"""Morse-Smale regression: one model per partition of the training data."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset_io import Dataset
from .knn_graph import build_knn, default_k
from .learners import model_from_dict
from .morse_smale import PartitionPolicy, Partitioning, assign_new, morse_smale, partition_at

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class PartitionFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class MsParams:
    k: int | None = None
    policy: PartitionPolicy = field(default_factory=PartitionPolicy)

    def resolved_k(self, n: int) -> int:
        return min(self.k or default_k(n), n - 1)

    def to_dict(self) -> dict:
        return {"k": self.k, "policy": self.policy.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "MsParams":
        return cls(d.get("k"), PartitionPolicy(**d.get("policy", {})))


def partition_seed(seed: int, label: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(label)]).generate_state(1)[0])


def fit_partitioning(X, y, ms_params: MsParams) -> Partitioning:
    """KNN graph, Morse-Smale complex and level selection for the training set."""
    X = np.asarray(X, dtype=float)
    n = len(y)
    if ms_params.policy.kind == "count" and ms_params.policy.n_partitions == 1 or n < 3:
        return Partitioning(np.zeros(n, dtype=np.int64), 0)
    graph = build_knn(X, ms_params.resolved_k(n))
    hierarchy = morse_smale(graph, y)
    return partition_at(hierarchy, ms_params.policy, X)


@dataclass
class MsrModel:
    """Fitted piecewise model.

    ``models[c]`` is the fitted model for partition ``c`` or ``None`` when
    the partition was too small and rows routed there use ``global_model``.
    """

    train_features: np.ndarray
    partitioning: Partitioning
    models: list
    global_model: object
    learner_name: str
    ms_params: MsParams
    seed: int

    @property
    def n_partitions(self) -> int:
        return self.partitioning.n_partitions

    def route(self, X) -> np.ndarray:
        return assign_new(self.partitioning, self.train_features, X)

    def predict(self, X) -> np.ndarray:
        return predict_msr(self, X)

    def to_dict(self) -> dict:
        return {
            "type": "msr",
            "learner": self.learner_name,
            "seed": self.seed,
            "ms_params": self.ms_params.to_dict(),
            "level": self.partitioning.level,
            "labels": self.partitioning.labels.tolist(),
            "train_features": self.train_features.tolist(),
            "models": [None if m is None else m.to_dict() for m in self.models],
            "global_model": None if self.models and self.models[0] is self.global_model and self.n_partitions == 1
            else self.global_model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "MsrModel":
        models = [None if m is None else model_from_dict(m) for m in d["models"]]
        glob = models[0] if d["global_model"] is None else model_from_dict(d["global_model"])
        part = Partitioning(np.asarray(d["labels"], dtype=np.int64), d["level"])
        return cls(np.asarray(d["train_features"], float), part, models, glob, d["learner"],
                   MsParams.from_dict(d["ms_params"]), d["seed"])


def fit_msr(train: Dataset, learner, ms_params: MsParams | None = None, seed: int = 0,
            partitioning: Partitioning | None = None, global_model=None) -> MsrModel:
    """Partition the training set and fit ``learner`` on every partition.

    A precomputed ``partitioning`` (e.g. shared across learners in a trial)
    skips the Morse-Smale step, and a precomputed ``global_model`` must be
    ``learner`` fit on all of ``train`` with ``seed``.  Partitions with fewer
    rows than ``learner.min_size`` fall back to the global model.
    """
    ms_params = ms_params or MsParams()
    X, y = train.features, train.outcome
    if partitioning is None:
        partitioning = fit_partitioning(X, y, ms_params)
    if len(partitioning.labels) != len(y):
        raise ValueError("partitioning does not match the training rows")
    m = partitioning.n_partitions
    if global_model is None:
        global_model = learner.fit(X, y, seed)
    if m == 1:
        return MsrModel(X, partitioning, [global_model], global_model, learner.name, ms_params, seed)
    models = []
    for c in range(m):
        rows = np.flatnonzero(partitioning.labels == c)
        if len(rows) < learner.min_size:
            logger.info("partition %d has %d rows (< %d); using global model", c, len(rows), learner.min_size)
            models.append(None)
            continue
        try:
            models.append(learner.fit(X[rows], y[rows], partition_seed(seed, c)))
        except Exception as exc:
            raise PartitionFitError(f"{learner.name} failed on partition {c} ({len(rows)} rows): {exc}") from exc
    return MsrModel(X, partitioning, models, global_model, learner.name, ms_params, seed)


def predict_msr(model: MsrModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.train_features.shape[1]:
        raise ValueError(f"expected {model.train_features.shape[1]} columns, got shape {X.shape}")
    if model.n_partitions == 1:
        return model.models[0].predict(X)
    labels = model.route(X)
    out = np.empty(X.shape[0])
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        fitted = model.models[c] if model.models[c] is not None else model.global_model
        out[rows] = fitted.predict(X[rows])
    return out


def _summary_axes(X):
    """Top-two principal axes of the (standardized) training features."""
    Xc = X - X.mean(axis=0)
    _, _, Vt = np.linalg.svd(Xc, full_matrices=False)
    axes = Vt[:2].T
    if axes.shape[1] < 2:
        axes = np.column_stack([axes, np.zeros(len(axes))])
    return X.mean(axis=0), axes


def partition_report(model: MsrModel, train: Dataset, learner=None) -> dict:
    """Per-partition sizes, outcome summaries and learner interpretability payloads.

    ``learner`` supplies the payload; without it only the summary fields
    are produced.
    """
    X, y = train.features, train.outcome
    labels = model.partitioning.labels
    if len(labels) != len(y):
        raise ValueError("report dataset does not match the training rows of the model")
    center, axes = _summary_axes(X)
    blocks = []
    for c in range(model.n_partitions):
        rows = np.flatnonzero(labels == c)
        yc = y[rows]
        top, bottom = rows[np.argmax(yc)], rows[np.argmin(yc)]
        fitted = model.models[c]
        if fitted is None:
            payload = {"type": "fallback"}
        elif learner is None:
            payload = {"type": "none"}
        else:
            payload = learner.payload(fitted, X[rows], yc, train.feature_names, partition_seed(model.seed, c))
            payload = payload or {"type": "none"}
        blocks.append({
            "partition": c,
            "size": int(len(rows)),
            "outcome_stats": {"mean": float(yc.mean()), "min": float(yc.min()), "max": float(yc.max())},
            "extrema_2d": {
                "max": ((X[top] - center) @ axes).tolist(),
                "min": ((X[bottom] - center) @ axes).tolist(),
                "centroid": ((X[rows].mean(axis=0) - center) @ axes).tolist(),
            },
            "payload_type": payload["type"],
            "payload": payload,
        })
    return {
        "schema_version": SCHEMA_VERSION,
        "learner": model.learner_name,
        "n_train": int(len(y)),
        "n_partitions": model.n_partitions,
        "partitions": blocks,
    }
