"""Tests for partition-wise model fitting, routing and reports."""

import json

import numpy as np
import pytest

from msregress.dataset_io import Dataset, standardize, train_test_split
from msregress.learners import LEARNERS, ConstantModel, make_learner, model_from_dict
from msregress.morse_smale import Partitioning, PartitionPolicy
from msregress.piecewise import (
    MsParams,
    MsrModel,
    PartitionFitError,
    fit_msr,
    fit_partitioning,
    partition_report,
    partition_seed,
    predict_msr,
)
from msregress.tweedie_sim import SimConfig, simulate_dataset

FAST = {"forest": {"n_trees": 20}, "boost": {"m_stop": 50}}
ONE = MsParams(policy=PartitionPolicy("count", 1))


def learner(name):
    return make_learner(name, **FAST.get(name, {}))


def small_sim(n=300, seed=0):
    ds = simulate_dataset(SimConfig(xi=2.0, phi=1.0, n=n, seed=seed))
    z, _ = standardize(ds)
    return z


def tent(n, seed):
    """y rises with slope 2 left of 0 and falls with slope 0.5 right of it."""
    r = np.random.default_rng(seed)
    X = r.uniform(-1, 1, size=(n, 2))
    y = np.where(X[:, 0] < 0, 2.0 * X[:, 0], -0.5 * X[:, 0]) + 0.05 * r.normal(size=n)
    return Dataset(X, y, ("a", "b"))


@pytest.mark.parametrize("name", sorted(LEARNERS))
def test_one_partition_is_bare_learner(name):
    train, test = train_test_split(small_sim(), 0.7, 1)
    lrn = learner(name)
    bare = lrn.fit(train.features, train.outcome, 5)
    msr = fit_msr(train, lrn, ONE, seed=5)
    assert msr.n_partitions == 1
    assert np.array_equal(msr.predict(test.features), bare.predict(test.features))


def test_conflicting_slopes_beat_global_fit():
    train, test = tent(800, 0), tent(400, 1)
    ms = MsParams(k=15, policy=PartitionPolicy("count", 2, min_size=30))
    lrn = make_learner("enet")
    model = fit_msr(train, lrn, ms, seed=0)
    assert model.n_partitions == 2
    A = np.column_stack([np.ones(train.n), train.features])
    coef = np.linalg.lstsq(A, train.outcome, rcond=None)[0]
    ols_mse = np.mean((coef[0] + test.features @ coef[1:] - test.outcome) ** 2)
    msr_mse = np.mean((model.predict(test.features) - test.outcome) ** 2)
    assert msr_mse < ols_mse / 2


def test_gamma_default_policy_single_dominant_group():
    z = small_sim(10_000, seed=0)
    part = fit_partitioning(z.features, z.outcome, MsParams())
    assert part.sizes.sum() == 10_000
    assert part.sizes.max() >= 0.8 * 10_000
    assert part.n_partitions <= 10


def test_fallback_partition_routes_to_global():
    train = tent(400, 2)
    labels = (train.features[:, 0] > 0.9).astype(np.int64)  # tiny right-hand strip
    part = Partitioning(labels, 0)
    model = fit_msr(train, make_learner("enet"), MsParams(), seed=0, partitioning=part)
    assert model.models[1] is None
    q = train.features[labels == 1][:3] + 1e-6
    assert np.array_equal(model.predict(q), model.global_model.predict(q))


def test_rowwise_route_then_predict():
    train = tent(600, 3)
    ms = MsParams(k=15, policy=PartitionPolicy("count", 2, min_size=30))
    model = fit_msr(train, make_learner("ctree"), ms, seed=1)
    Q = np.random.default_rng(4).uniform(-1, 1, size=(500, 2))
    got = predict_msr(model, Q)
    for i, q in enumerate(Q):
        lab = int(np.argmin(((train.features - q) ** 2).sum(axis=1)))
        fitted = model.models[model.partitioning.labels[lab]] or model.global_model
        assert got[i] == fitted.predict(q[None])[0]


def test_reproducible_and_partition_seeds():
    train = tent(500, 5)
    ms = MsParams(k=15, policy=PartitionPolicy("count", 2, min_size=30))
    a = fit_msr(train, learner("forest"), ms, seed=3)
    b = fit_msr(train, learner("forest"), ms, seed=3)
    Q = train.features[:50]
    assert np.array_equal(a.predict(Q), b.predict(Q))
    assert partition_seed(3, 0) != partition_seed(3, 1)
    assert partition_seed(3, 0) == partition_seed(3, 0)


def test_partition_failure_carries_context():
    class Broken:
        name = "broken"
        min_size = 1

        def fit(self, X, y, seed):
            if len(y) < 400:
                raise RuntimeError("boom")
            return ConstantModel(0.0)

    train = tent(500, 6)
    part = Partitioning((train.features[:, 0] > 0).astype(np.int64), 0)
    with pytest.raises(PartitionFitError, match="partition"):
        fit_msr(train, Broken(), MsParams(), partitioning=part)


def test_column_mismatch():
    train = tent(200, 7)
    model = fit_msr(train, make_learner("mean"), ONE)
    with pytest.raises(ValueError):
        model.predict(np.zeros((3, 5)))


@pytest.mark.parametrize("name", sorted(LEARNERS))
def test_model_json_round_trip(name):
    train = tent(400, 8)
    ms = MsParams(k=15, policy=PartitionPolicy("count", 2, min_size=30))
    model = fit_msr(train, learner(name), ms, seed=2)
    back = MsrModel.from_dict(json.loads(json.dumps(model.to_dict())))
    Q = np.random.default_rng(1).uniform(-1, 1, size=(40, 2))
    assert np.array_equal(back.predict(Q), model.predict(Q))


class TestReport:
    def test_single_partition_block(self):
        train = tent(300, 9)
        rep = partition_report(fit_msr(train, make_learner("enet"), ONE), train, make_learner("enet"))
        assert rep["schema_version"] == 1
        assert len(rep["partitions"]) == 1
        assert rep["partitions"][0]["size"] == 300

    def test_linear_payload_lengths(self):
        train = tent(600, 10)
        ms = MsParams(k=15, policy=PartitionPolicy("count", 2, min_size=30))
        lrn = make_learner("enet")
        rep = partition_report(fit_msr(train, lrn, ms), train, lrn)
        assert sum(b["size"] for b in rep["partitions"]) == 600
        for b in rep["partitions"]:
            assert b["payload_type"] == "coefficients"
            assert list(b["payload"]["coefficients"]) == ["a", "b"]
            assert len(b["extrema_2d"]["max"]) == 2

    def test_interaction_payload_names(self):
        train = tent(300, 11)
        lrn = make_learner("lasso_homotopy")
        rep = partition_report(fit_msr(train, lrn, ONE), train, lrn)
        assert list(rep["partitions"][0]["payload"]["coefficients"]) == ["a", "b", "a:b"]

    @pytest.mark.parametrize("name, kind", [("ctree", "splits"), ("forest", "importance"), ("elm", "none"),
                                            ("mean", "constant")])
    def test_payload_types(self, name, kind):
        train = tent(300, 12)
        lrn = learner(name)
        rep = partition_report(fit_msr(train, lrn, ONE), train, lrn)
        assert rep["partitions"][0]["payload_type"] == kind

    def test_fallback_block(self):
        train = tent(400, 13)
        part = Partitioning((train.features[:, 0] > 0.9).astype(np.int64), 0)
        lrn = make_learner("enet")
        rep = partition_report(fit_msr(train, lrn, MsParams(), partitioning=part), train, lrn)
        assert rep["partitions"][1]["payload_type"] == "fallback"

    def test_wrong_rows(self):
        train = tent(300, 14)
        model = fit_msr(train, make_learner("mean"), ONE)
        with pytest.raises(ValueError):
            partition_report(model, tent(200, 14))


def test_learner_registry():
    with pytest.raises(ValueError, match="unknown learner"):
        make_learner("svm")
    assert make_learner("elm", hidden=80).min_size == 80
    assert make_learner("enet").min_size == 30 and make_learner("forest").min_size == 50
    with pytest.raises(ValueError):
        model_from_dict({"type": "nope"})
