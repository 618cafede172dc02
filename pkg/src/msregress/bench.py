"""Benchmark harness: bare and Morse-Smale learners scored by test MSE."""

from __future__ import annotations

import csv
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset_io import Dataset, fit_scaling, train_test_split
from .learners import make_learner
from .morse_smale import PartitionPolicy
from .piecewise import MsParams, fit_msr, fit_partitioning
from .tweedie_sim import SimConfig, simulate_dataset

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEGENERATE_FACTOR = 3.0

# algorithm name -> (learner name, Morse-Smale wrapped)
ALGORITHMS = {
    "MEAN": ("mean", False),
    "MSR": ("enet", True),
    "TR": ("ctree", False),
    "MSTR": ("ctree", True),
    "RF": ("forest", False),
    "MSRF": ("forest", True),
    "ELM": ("elm", False),
    "MSELM": ("elm", True),
    "BR": ("boost", False),
    "MSBR": ("boost", True),
    "LH": ("lasso_homotopy", False),
    "MSLH": ("lasso_homotopy", True),
}
PAPER_ALGORITHMS = ("MSR", "TR", "MSTR", "RF", "MSRF", "ELM", "MSELM", "BR", "MSBR", "LH", "MSLH", "MEAN")


def mse(predictions, truth) -> float:
    predictions = np.asarray(predictions, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predictions.shape != truth.shape or predictions.ndim != 1 or len(truth) == 0:
        raise ValueError(f"length mismatch: {predictions.shape} vs {truth.shape}")
    d = predictions - truth
    return float(d @ d / len(d))


@dataclass(frozen=True)
class BenchSettings:
    """Learner and partition settings shared by every trial."""

    train_fraction: float = 0.7
    learner_params: dict = field(default_factory=dict)
    ms_params: MsParams = field(default_factory=MsParams)

    def learner(self, name: str):
        return make_learner(name, **self.learner_params.get(name, {}))

    def to_dict(self) -> dict:
        return {"train_fraction": self.train_fraction,
                "learner_params": {k: dict(v) for k, v in sorted(self.learner_params.items())},
                "ms_params": self.ms_params.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "BenchSettings":
        return cls(d.get("train_fraction", 0.7), d.get("learner_params", {}),
                   MsParams.from_dict(d.get("ms_params", {})))


@dataclass
class TrialResult:
    cell: str
    seed: int
    n_train: int
    mse: dict
    seconds: dict
    n_partitions: int | None = None
    partition_sizes: list | None = None
    failures: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_algorithms(algorithms):
    unknown = [a for a in algorithms if a not in ALGORITHMS]
    if unknown:
        raise ValueError(f"unknown algorithm(s) {unknown}; valid names: {', '.join(PAPER_ALGORITHMS)}")


def run_trial(source, algorithms=PAPER_ALGORITHMS, seed: int = 0, settings: BenchSettings | None = None,
              cell: str | None = None) -> TrialResult:
    """Fit every algorithm on one 70/30 split and score it on the test rows.

    ``source`` is a ``SimConfig`` (simulated afresh with ``seed``) or a
    ``Dataset``.  The split, feature scaling, CV seed and Morse-Smale
    partitioning are shared by all algorithms.  A failing algorithm is
    recorded in ``failures`` and does not stop the others.
    """
    _check_algorithms(algorithms)
    settings = settings or BenchSettings()
    if isinstance(source, SimConfig):
        cell = cell or source.cell
        ds = simulate_dataset(replace(source, seed=seed))
    elif isinstance(source, Dataset):
        cell = cell or "dataset"
        ds = source
    else:
        raise TypeError(f"expected SimConfig or Dataset, got {type(source).__name__}")
    train, test = train_test_split(ds, settings.train_fraction, seed)
    scaling = fit_scaling(train)
    train, test = scaling.transform(train), scaling.transform(test)

    result = TrialResult(cell, int(seed), train.n, {}, {})
    bare: dict = {}
    bare_seconds: dict = {}
    partitioning = None
    part_seconds = 0.0

    def bare_fit(name):
        if name not in bare:
            t0 = time.perf_counter()
            bare[name] = settings.learner(name).fit(train.features, train.outcome, seed)
            bare_seconds[name] = time.perf_counter() - t0
        return bare[name]

    ms_params = settings.ms_params
    ms_params = replace(ms_params, policy=replace(ms_params.policy, seed=int(seed)))
    for algo in algorithms:
        learner_name, wrapped = ALGORITHMS[algo]
        try:
            if wrapped:
                if partitioning is None:
                    t0 = time.perf_counter()
                    partitioning = fit_partitioning(train.features, train.outcome, ms_params)
                    part_seconds = time.perf_counter() - t0
                    result.n_partitions = partitioning.n_partitions
                    result.partition_sizes = partitioning.sizes.tolist()
                glob = bare_fit(learner_name)
                t0 = time.perf_counter()
                model = fit_msr(train, settings.learner(learner_name), ms_params, seed, partitioning, glob)
                result.seconds[algo] = time.perf_counter() - t0 + part_seconds + bare_seconds[learner_name]
            else:
                model = bare_fit(learner_name)
                result.seconds[algo] = bare_seconds[learner_name]
            result.mse[algo] = mse(model.predict(test.features), test.outcome)
        except Exception as exc:
            logger.warning("%s failed in %s (seed %d): %s", algo, cell, seed, exc)
            result.failures[algo] = f"{type(exc).__name__}: {exc}"
    return result


def _run_task(task):
    source, algorithms, seed, settings, cell = task
    try:
        return run_trial(source, algorithms, seed, settings, cell)
    except Exception as exc:
        tb = traceback.format_exc(limit=3)
        logger.error("trial %s seed %d aborted: %s", cell, seed, tb)
        return TrialResult(cell, int(seed), 0, {}, {}, failures={a: f"trial aborted: {exc}" for a in algorithms})


@dataclass
class BenchReport:
    cells: list
    algorithms: list
    trials_per_cell: int
    base_seed: int
    settings: dict
    trials: list

    def to_dict(self) -> dict:
        """JSON payload; wall-clock timings are left out so reruns are byte-identical."""
        trials = []
        for t in self.trials:
            d = t.to_dict()
            d.pop("seconds")
            trials.append(d)
        return {
            "schema_version": SCHEMA_VERSION,
            "algorithms": list(self.algorithms),
            "trials_per_cell": self.trials_per_cell,
            "base_seed": self.base_seed,
            "settings": self.settings,
            "cells": self.cells,
            "trials": trials,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir, stem: str = "bench") -> dict:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"json": out_dir / f"{stem}.json", "csv": out_dir / f"{stem}.csv",
                 "partitions": out_dir / f"{stem}_partitions.csv"}
        paths["json"].write_text(self.to_json())
        with paths["csv"].open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell", "algorithm", "mean_mse", "sd_mse", "n_ok", "mean_fit_seconds", "degenerate"])
            for c in self.cells:
                for algo in self.algorithms:
                    s = c["results"][algo]
                    secs = [t.seconds[algo] for t in self.trials if t.cell == c["cell"] and algo in t.seconds]
                    w.writerow([c["cell"], algo, _fmt(s["mean_mse"]), _fmt(s["sd_mse"]), s["n_ok"],
                                _fmt(float(np.mean(secs)) if secs else None), s["degenerate"]])
        with paths["partitions"].open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell", "seed", "n_partitions", "sizes"])
            for t in self.trials:
                sizes = " ".join(map(str, t.partition_sizes)) if t.partition_sizes else ""
                w.writerow([t.cell, t.seed, t.n_partitions if t.n_partitions is not None else "", sizes])
        return paths

    def cell(self, name: str) -> dict:
        for c in self.cells:
            if c["cell"] == name:
                return c
        raise KeyError(name)


def _fmt(v):
    return "" if v is None else repr(float(v))


def aggregate(trials, algorithms, cell_order, configs) -> list[dict]:
    cells = []
    for name in cell_order:
        mine = [t for t in trials if t.cell == name]
        results = {}
        for algo in algorithms:
            vals = [t.mse[algo] for t in mine if algo in t.mse]
            fails = [{"seed": t.seed, "error": t.failures[algo]} for t in mine if algo in t.failures]
            results[algo] = {
                "mean_mse": float(np.mean(vals)) if vals else None,
                "sd_mse": float(np.std(vals, ddof=1)) if len(vals) > 1 else (0.0 if vals else None),
                "n_ok": len(vals),
                "failures": fails,
                "degenerate": False,
            }
        baseline = results.get("MEAN", {}).get("mean_mse")
        if baseline is not None:
            for algo, r in results.items():
                r["degenerate"] = r["mean_mse"] is not None and r["mean_mse"] > DEGENERATE_FACTOR * baseline
        cells.append({"cell": name, "config": configs.get(name), "baseline_mse": baseline, "results": results})
    return cells


def run_benchmark(grid, trials_per_cell: int = 10, algorithms=PAPER_ALGORITHMS, base_seed: int = 0,
                  settings: BenchSettings | None = None, jobs: int = 1) -> BenchReport:
    """Run ``trials_per_cell`` trials (seeds ``base_seed + t``) for every grid entry.

    ``grid`` items are ``SimConfig`` values or ``(name, Dataset)`` pairs.
    """
    if trials_per_cell < 1:
        raise ValueError("trials_per_cell must be >= 1")
    _check_algorithms(algorithms)
    algorithms = list(algorithms)
    if "MEAN" not in algorithms:
        algorithms.append("MEAN")
    settings = settings or BenchSettings()
    tasks, order, configs = [], [], {}
    for item in grid:
        if isinstance(item, SimConfig):
            name, source = item.cell, item
            configs[name] = {k: v for k, v in item.to_dict().items() if k != "seed"}
        else:
            name, source = item
            configs[name] = {"n": source.n, "p": source.p, "outcome": source.outcome_name,
                             "features": list(source.feature_names)}
        if name in configs and name in order:
            raise ValueError(f"duplicate grid cell {name!r}")
        order.append(name)
        for t in range(trials_per_cell):
            tasks.append((source, tuple(algorithms), base_seed + t, settings, name))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            trials = list(pool.map(_run_task, tasks))
    else:
        trials = [_run_task(t) for t in tasks]
    cells = aggregate(trials, algorithms, order, configs)
    return BenchReport(cells, algorithms, trials_per_cell, base_seed, settings.to_dict(), trials)


def desk_settings(n_trees: int = 500) -> BenchSettings:
    return BenchSettings(learner_params={"forest": {"n_trees": n_trees}},
                         ms_params=MsParams(policy=PartitionPolicy()))
