"""Uniform fit/predict adapters over the individual regressors.

Every learner exposes ``fit(X, y, seed) -> fitted`` where the fitted object
has ``predict(X)`` and ``to_dict()``, plus ``payload(fitted, X, y, names,
seed)`` returning an interpretability record (or ``None``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from . import elm as elm_mod
from . import linear_learners as lin
from . import tree_learners as trees
from .dataset_io import interaction_names


@runtime_checkable
class Regressor(Protocol):
    name: str

    @property
    def min_size(self) -> int: ...

    def fit(self, X, y, seed: int): ...

    def payload(self, fitted, X, y, names, seed: int) -> dict | None: ...


@dataclass(frozen=True)
class ConstantModel:
    value: float

    def predict(self, X) -> np.ndarray:
        return np.full(np.shape(X)[0], self.value)

    def to_dict(self) -> dict:
        return {"type": "mean", "value": self.value}


def _params(learner) -> dict:
    d = asdict(learner)
    d.pop("name", None)
    return d


def _coef_payload(fitted, names):
    names = interaction_names(names) if getattr(fitted, "interactions", False) else tuple(names)
    coef = np.asarray(fitted.coefficients)
    return {"type": "coefficients", "intercept": float(fitted.intercept),
            "coefficients": {n: float(c) for n, c in zip(names, coef)}}


@dataclass(frozen=True)
class MeanLearner:
    name: str = "mean"
    min_size: int = 1

    def fit(self, X, y, seed: int = 0):
        return ConstantModel(float(np.mean(y)))

    def payload(self, fitted, X, y, names, seed=0):
        return {"type": "constant", "value": fitted.value}


@dataclass(frozen=True)
class ElasticNetLearner:
    alpha: float = 0.5
    n_folds: int = 10
    name: str = "enet"
    min_size: int = 30

    def fit(self, X, y, seed: int = 0):
        return lin.fit_elastic_net(X, y, alpha=self.alpha, n_folds=self.n_folds, seed=seed)

    def payload(self, fitted, X, y, names, seed=0):
        return _coef_payload(fitted, names)


@dataclass(frozen=True)
class HomotopyLassoLearner:
    interactions: bool = True
    n_folds: int = 10
    name: str = "lasso_homotopy"
    min_size: int = 30

    def fit(self, X, y, seed: int = 0):
        return lin.fit_lasso_homotopy(X, y, n_folds=self.n_folds, seed=seed, with_interactions=self.interactions)

    def payload(self, fitted, X, y, names, seed=0):
        return _coef_payload(fitted, names)


@dataclass(frozen=True)
class BoostedLearner:
    m_stop: int = 500
    nu: float = 0.1
    interactions: bool = True
    name: str = "boost"
    min_size: int = 30

    def fit(self, X, y, seed: int = 0):
        return lin.fit_boosted_linear(X, y, m_stop=self.m_stop, nu=self.nu, with_interactions=self.interactions)

    def payload(self, fitted, X, y, names, seed=0):
        return _coef_payload(fitted, names)


@dataclass(frozen=True)
class CtreeLearner:
    alpha: float = 0.05
    min_node: int = 7
    name: str = "ctree"
    min_size: int = 50

    def fit(self, X, y, seed: int = 0):
        return trees.fit_ctree(X, y, alpha=self.alpha, min_node=self.min_node)

    def payload(self, fitted, X, y, names, seed=0):
        splits = fitted.splits()
        for s in splits:
            s["feature"] = names[s["feature"]]
        return {"type": "splits", "splits": splits, "n_leaves": fitted.n_leaves}


@dataclass(frozen=True)
class ForestLearner:
    n_trees: int = 500
    min_node: int = 5
    mtry: int | None = None
    name: str = "forest"
    min_size: int = 50

    def fit(self, X, y, seed: int = 0):
        return trees.fit_random_forest(X, y, n_trees=self.n_trees, mtry=self.mtry, min_node=self.min_node,
                                       seed=seed)

    def payload(self, fitted, X, y, names, seed=0):
        rep = trees.permutation_importance(fitted, X, y, seed=seed, feature_names=names)
        return {"type": "importance", "importance": rep.to_rows()}


@dataclass(frozen=True)
class ElmLearner:
    hidden: int | None = None
    activation: str = "sigmoid"
    name: str = "elm"

    @property
    def min_size(self) -> int:
        return max(50, self.hidden or 0)

    def fit(self, X, y, seed: int = 0):
        hidden = self.hidden
        if hidden is not None:
            hidden = min(hidden, len(y))
        return elm_mod.fit_elm(X, y, hidden=hidden, activation=self.activation, seed=seed)

    def payload(self, fitted, X, y, names, seed=0):
        return None


LEARNERS = {
    "mean": MeanLearner,
    "enet": ElasticNetLearner,
    "lasso_homotopy": HomotopyLassoLearner,
    "boost": BoostedLearner,
    "ctree": CtreeLearner,
    "forest": ForestLearner,
    "elm": ElmLearner,
}


def make_learner(name: str, **params):
    try:
        cls = LEARNERS[name]
    except KeyError:
        raise ValueError(f"unknown learner {name!r}; choose from {sorted(LEARNERS)}") from None
    return cls(**params)


def learner_params(learner) -> dict:
    return _params(learner)


def model_from_dict(d: dict):
    kind = d["type"]
    if kind == "mean":
        return ConstantModel(d["value"])
    if kind in ("elastic_net", "lasso_path", "boosted"):
        return lin.linear_from_dict(d)
    if kind in ("tree", "forest"):
        return trees.tree_from_dict(d)
    if kind == "elm":
        return elm_mod.ElmModel.from_dict(d)
    raise ValueError(f"unknown model type {kind!r}")
