"""Command-line entry point: simulate, fit, predict, benchmark, report.

Settings resolve as command-line flags over a YAML config file (``--config``)
over built-in defaults.  Every run writes its resolved settings next to its
outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import bench
from .dataset_io import DataError, Dataset, ScalingParams, fit_scaling, load_csv, split_indices, write_csv
from .learners import make_learner, model_from_dict
from .morse_smale import PartitionPolicy
from .piecewise import MsParams, MsrModel, fit_msr, partition_report
from .tweedie_sim import RELATIONSHIPS, SimConfig, paper_grid, simulate_dataset, write_sidecar

logger = logging.getLogger("msregress")

SCHEMA_VERSION = 1
PRESETS = ("paper-grid", "swedish", "cell")

DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    "out_dir": ".",
    # simulate
    "xi": 1.5, "phi": 1.0, "rel": "linear", "n": 10_000, "p_noise": 11, "out": None,
    # fit / predict / report
    "algo": None, "data": None, "outcome": "y", "model": None, "train_fraction": None,
    # Morse-Smale
    "k": None, "policy": "cv", "n_partitions": 1, "min_size": 150, "max_crystals": 10,
    # benchmark
    "preset": "paper-grid", "trials": None, "algos": None, "n_trees": 500,
    "learner_params": {},
}


class UsageError(Exception):
    """Bad settings that argparse itself cannot see (e.g. values from a config file)."""


def _xi(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 1.0 <= v <= 2.0:
        raise argparse.ArgumentTypeError(f"Tweedie power must lie in [1, 2], got {v:g}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _algo(text):
    if text not in bench.ALGORITHMS:
        raise argparse.ArgumentTypeError(
            f"unknown algorithm {text!r}; valid names: {', '.join(bench.PAPER_ALGORITHMS)}")
    return text


def _common() -> argparse.ArgumentParser:
    # default=SUPPRESS keeps unset flags out of the namespace so the config
    # file and built-in defaults can fill them in
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="YAML file of settings (flags override it)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--jobs", type=_positive_int, help="worker processes (default 1)")
    p.add_argument("--out-dir", dest="out_dir", help="output directory (default .)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return p


def _ms_flags(p):
    p.add_argument("--k", type=_positive_int, help="neighbours per point (default max(15, 3*ceil(log2 n)))")
    p.add_argument("--policy", choices=("cv", "count", "min_size"), help="partition level policy")
    p.add_argument("--n-partitions", dest="n_partitions", type=_positive_int, help="target count for --policy count")
    p.add_argument("--min-size", dest="min_size", type=_positive_int, help="floor for --policy min_size")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="msregress", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], argument_default=argparse.SUPPRESS,
                       help="write a simulated Tweedie dataset")
    p.add_argument("--xi", type=_xi, help="Tweedie power in [1, 2]")
    p.add_argument("--phi", type=_positive_float, help="dispersion > 0")
    p.add_argument("--rel", choices=RELATIONSHIPS, help="mean relationship")
    p.add_argument("--n", type=_positive_int, help="rows")
    p.add_argument("--p-noise", dest="p_noise", type=int, help="noise predictors (default 11)")
    p.add_argument("--out", help="CSV path (sidecar written as <out>.json)")

    p = sub.add_parser("fit", parents=[common], argument_default=argparse.SUPPRESS,
                       help="fit one algorithm and write model, report and fitted values")
    p.add_argument("--algo", type=_algo, help="one of " + ", ".join(bench.PAPER_ALGORITHMS))
    p.add_argument("--data", help="training CSV")
    p.add_argument("--outcome", help="outcome column (default y)")
    p.add_argument("--train-fraction", dest="train_fraction", type=float,
                   help="fit on a seeded split of the rows instead of all of them")
    p.add_argument("--n-trees", dest="n_trees", type=_positive_int, help="forest size (default 500)")
    _ms_flags(p)

    p = sub.add_parser("predict", parents=[common], argument_default=argparse.SUPPRESS,
                       help="predict a CSV with a saved model")
    p.add_argument("--model", help="model JSON written by fit")
    p.add_argument("--data", help="CSV with the model's feature columns")
    p.add_argument("--out", help="predictions CSV (default <out-dir>/predictions.csv)")

    p = sub.add_parser("benchmark", parents=[common], argument_default=argparse.SUPPRESS,
                       help="run the simulation grid or a dataset trial")
    p.add_argument("--preset", choices=PRESETS, help="paper-grid (27 cells), swedish (one dataset) or cell")
    p.add_argument("--n", type=_positive_int, help="rows per simulated dataset")
    p.add_argument("--trials", type=_positive_int, help="trials per cell")
    p.add_argument("--algos", help="comma-separated subset of algorithms")
    p.add_argument("--data", help="CSV for the swedish preset")
    p.add_argument("--outcome", help="outcome column for --data (default Payment)")
    p.add_argument("--xi", type=_xi, help="Tweedie power for --preset cell")
    p.add_argument("--phi", type=_positive_float, help="dispersion for --preset cell")
    p.add_argument("--rel", choices=RELATIONSHIPS, help="relationship for --preset cell")
    p.add_argument("--n-trees", dest="n_trees", type=_positive_int, help="forest size (default 500)")
    _ms_flags(p)

    p = sub.add_parser("report", parents=[common], argument_default=argparse.SUPPRESS,
                       help="rebuild the partition report of a saved model")
    p.add_argument("--model", help="model JSON written by fit")
    p.add_argument("--data", help="the CSV the model was fit on")
    p.add_argument("--out", help="report JSON (default <out-dir>/report.json)")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags over the config file over defaults."""
    cfg = dict(DEFAULTS)
    if args.command == "benchmark":
        cfg["outcome"] = "Payment"
    path = getattr(args, "config", None)
    if path:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"config {path} must be a mapping")
        loaded = {k.replace("-", "_"): v for k, v in loaded.items()}
        unknown = sorted(set(loaded) - set(DEFAULTS) - {"command"})
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(loaded)
    cfg.update({k: v for k, v in vars(args).items() if k not in ("config", "verbose")})
    cfg["command"] = args.command
    if path:
        cfg["config_file"] = str(path)
    # values from the config file bypass argparse validation
    try:
        if cfg["algo"] is not None:
            _algo(cfg["algo"])
        if "xi" in cfg:
            _xi(str(cfg["xi"]))
    except argparse.ArgumentTypeError as exc:
        raise UsageError(str(exc)) from None
    if cfg["rel"] not in RELATIONSHIPS:
        raise UsageError(f"rel must be one of {RELATIONSHIPS}")
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise UsageError(f"{cfg['command']} needs " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _ms_params(cfg) -> MsParams:
    policy = PartitionPolicy(kind=cfg["policy"], n_partitions=int(cfg["n_partitions"]),
                             min_size=int(cfg["min_size"]), max_crystals=int(cfg["max_crystals"]),
                             seed=int(cfg["seed"]))
    return MsParams(cfg["k"], policy)


def _learner_params(cfg) -> dict:
    params = {k: dict(v) for k, v in (cfg.get("learner_params") or {}).items()}
    params.setdefault("forest", {}).setdefault("n_trees", int(cfg["n_trees"]))
    return params


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _echo_config(cfg, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "run_config.json", cfg)


def cmd_simulate(cfg) -> list[Path]:
    _require(cfg, "out")
    config = SimConfig(xi=float(cfg["xi"]), phi=float(cfg["phi"]), relationship=cfg["rel"], n=int(cfg["n"]),
                       p_noise=int(cfg["p_noise"]), seed=int(cfg["seed"]))
    out = Path(cfg["out"])
    if not out.is_absolute() and cfg["out_dir"] != ".":
        out = Path(cfg["out_dir"]) / out
    out.parent.mkdir(parents=True, exist_ok=True)
    ds = simulate_dataset(config)
    write_csv(ds, out)
    sidecar = out.with_name(out.name + ".json")
    write_sidecar(config, sidecar)
    logger.info("wrote %d rows to %s", ds.n, out)
    return [out, sidecar]


def _fit_rows(ds: Dataset, cfg):
    if cfg["train_fraction"] is None:
        return np.arange(ds.n)
    train_idx, _ = split_indices(ds.n, float(cfg["train_fraction"]), int(cfg["seed"]))
    return train_idx


def cmd_fit(cfg) -> list[Path]:
    _require(cfg, "algo", "data")
    algo = cfg["algo"]
    ds = load_csv(cfg["data"], cfg["outcome"])
    rows = _fit_rows(ds, cfg)
    train = ds.subset(rows)
    scaling = fit_scaling(train)
    scaled = scaling.transform(train)
    learner_name, wrapped = bench.ALGORITHMS[algo]
    learner = make_learner(learner_name, **_learner_params(cfg).get(learner_name, {}))
    seed = int(cfg["seed"])
    if wrapped:
        fitted = fit_msr(scaled, learner, _ms_params(cfg), seed)
    else:
        fitted = learner.fit(scaled.features, scaled.outcome, seed)

    out_dir = Path(cfg["out_dir"])
    _echo_config(cfg, out_dir)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "algorithm": algo,
        "outcome": ds.outcome_name,
        "features": list(ds.feature_names),
        "train_rows": None if cfg["train_fraction"] is None else rows.tolist(),
        "model": fitted.to_dict(),
    }
    if learner_name != "mean":
        doc["scaling"] = scaling.to_dict()
        doc["learner_params"] = _learner_params(cfg).get(learner_name, {})
    paths = [out_dir / "model.json", out_dir / "report.json", out_dir / "fitted.csv"]
    _write_json(paths[0], doc)
    if wrapped:
        report = partition_report(fitted, scaled, learner)
    else:
        report = _bare_report(fitted, scaled, learner, seed)
    report["algorithm"] = algo
    _write_json(paths[1], report)
    _write_predictions(paths[2], fitted.predict(scaled.features), train.outcome)
    logger.info("fit %s on %d rows; outputs in %s", algo, train.n, out_dir)
    return paths


def _bare_report(fitted, train: Dataset, learner, seed) -> dict:
    payload = learner.payload(fitted, train.features, train.outcome, train.feature_names, seed) or {"type": "none"}
    y = train.outcome
    return {
        "schema_version": SCHEMA_VERSION,
        "learner": learner.name,
        "n_train": train.n,
        "n_partitions": 1,
        "partitions": [{
            "partition": 0,
            "size": train.n,
            "outcome_stats": {"mean": float(y.mean()), "min": float(y.min()), "max": float(y.max())},
            "payload_type": payload["type"],
            "payload": payload,
        }],
    }


def _write_predictions(path, pred, truth=None):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "prediction"] + (["observed"] if truth is not None else []))
        for i, v in enumerate(pred):
            w.writerow([i, repr(float(v))] + ([repr(float(truth[i]))] if truth is not None else []))


def _load_model(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from None
    if doc.get("schema_version") != SCHEMA_VERSION or "model" not in doc:
        raise DataError(f"{path} is not a model file of schema {SCHEMA_VERSION}")
    m = doc["model"]
    model = MsrModel.from_dict(m) if m.get("type") == "msr" else model_from_dict(m)
    scaling = ScalingParams.from_dict(doc["scaling"]) if "scaling" in doc else None
    return doc, model, scaling


def _load_features(path, doc) -> Dataset:
    """Read the model's feature columns by name; extra columns are ignored."""
    path = Path(path)
    if not path.is_file() or path.stat().st_size == 0:
        raise DataError(f"{path} is missing or empty")
    with path.open(newline="") as fh:
        header = [h.strip() for h in next(csv.reader(fh), [])]
    if not header:
        raise DataError(f"{path} is empty")
    missing = [f for f in doc["features"] if f not in header]
    if missing:
        raise DataError(f"{path} lacks model feature columns: {', '.join(missing)}")
    outcome = doc["outcome"] if doc["outcome"] in header else None
    if outcome is None:
        # borrow one feature column as a placeholder outcome so the loader can be reused
        ds = load_csv(path, doc["features"][0])
        cols = [ds.feature_names.index(f) if f in ds.feature_names else None for f in doc["features"]]
        X = np.column_stack([ds.outcome if c is None else ds.features[:, c] for c in cols])
        return Dataset(X, np.zeros(len(X)), tuple(doc["features"]), doc["outcome"])
    ds = load_csv(path, outcome)
    idx = [ds.feature_names.index(f) for f in doc["features"]]
    return Dataset(ds.features[:, idx], ds.outcome, tuple(doc["features"]), outcome)


def cmd_predict(cfg) -> list[Path]:
    _require(cfg, "model", "data")
    doc, model, scaling = _load_model(cfg["model"])
    ds = _load_features(cfg["data"], doc)
    X = scaling.transform(ds).features if scaling is not None else ds.features
    pred = model.predict(X)
    out = Path(cfg["out"]) if cfg.get("out") else Path(cfg["out_dir"]) / "predictions.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out.parent)
    _write_predictions(out, pred)
    logger.info("wrote %d predictions to %s", len(pred), out)
    return [out]


def cmd_report(cfg) -> list[Path]:
    _require(cfg, "model", "data")
    doc, model, scaling = _load_model(cfg["model"])
    ds = load_csv(cfg["data"], doc["outcome"])
    if doc.get("train_rows") is not None:
        ds = ds.subset(np.asarray(doc["train_rows"]))
    idx = [ds.feature_names.index(f) for f in doc["features"]] if set(doc["features"]) <= set(ds.feature_names) \
        else None
    if idx is None:
        raise DataError(f"{cfg['data']} lacks the model's feature columns")
    ds = Dataset(ds.features[:, idx], ds.outcome, tuple(doc["features"]), ds.outcome_name)
    scaled = scaling.transform(ds) if scaling is not None else ds
    learner_name, wrapped = bench.ALGORITHMS[doc["algorithm"]]
    learner = make_learner(learner_name, **doc.get("learner_params", {}))
    if wrapped:
        report = partition_report(model, scaled, learner)
    else:
        report = _bare_report(model, scaled, learner, int(cfg["seed"]))
    report["algorithm"] = doc["algorithm"]
    out = Path(cfg["out"]) if cfg.get("out") else Path(cfg["out_dir"]) / "report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, report)
    return [out]


def cmd_benchmark(cfg) -> list[Path]:
    algos = bench.PAPER_ALGORITHMS
    if cfg["algos"]:
        algos = tuple(a.strip() for a in str(cfg["algos"]).split(",") if a.strip())
        for a in algos:
            try:
                _algo(a)
            except argparse.ArgumentTypeError as exc:
                raise UsageError(str(exc)) from None
    settings = bench.BenchSettings(learner_params=_learner_params(cfg), ms_params=_ms_params(cfg))
    preset = cfg["preset"]
    if preset == "paper-grid":
        grid = paper_grid(int(cfg["n"]))
    elif preset == "cell":
        grid = [SimConfig(float(cfg["xi"]), float(cfg["phi"]), cfg["rel"], int(cfg["n"]), p_noise=int(cfg["p_noise"]))]
    elif preset == "swedish":
        _require(cfg, "data")
        grid = [("swedish", load_csv(cfg["data"], cfg["outcome"]))]
    else:
        raise UsageError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    # one trial for a single dataset unless asked otherwise, ten per simulated cell
    trials = int(cfg["trials"] or (1 if preset == "swedish" else 10))
    report = bench.run_benchmark(grid, trials, algos, int(cfg["seed"]), settings, int(cfg["jobs"]))
    out_dir = Path(cfg["out_dir"])
    _echo_config(cfg, out_dir)
    paths = report.write(out_dir)
    n_fail = sum(len(r["failures"]) for c in report.cells for r in c["results"].values())
    logger.info("benchmark: %d cells, %d failed fits; outputs in %s", len(report.cells), n_fail, out_dir)
    return list(paths.values())


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "benchmark": cmd_benchmark,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        for path in COMMANDS[args.command](cfg):
            print(path)
    except UsageError as exc:
        parser.error(str(exc))
    except (DataError, ValueError, OSError, KeyError) as exc:
        print(f"msregress {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
