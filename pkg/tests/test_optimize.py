import math

import numpy as np
import pytest

from mcembed import features, kernels, model
from mcembed import optimize as opt
from mcembed.data import Dataset, fit_unit_scaling, apply_scaling
from mcembed.objective import FOUR_E
from tests.conftest import load_iris_dataset


def small_dataset(seed=0, n=30):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, 2))
    return Dataset(X, (X[:, 0] + 0.2 * rng.normal(size=n) > 0.5).astype(int), 2)


class TestAdam:
    def test_first_step_is_signed_learning_rate(self):
        g = np.array([3.0, -0.5, 1e-3])
        new, state = opt.adam_step(opt.AdamState.zeros(3), np.zeros(3), g, 0.1)
        assert np.all(np.sign(new) == -np.sign(g))
        assert np.all(np.abs(new) <= 0.1 * np.abs(g) / (np.abs(g) + 1e-8) + 1e-15)
        assert state.t == 1

    def test_zero_gradient_no_move(self):
        p = np.array([1.0, 2.0])
        new, _ = opt.adam_step(opt.AdamState.zeros(2), p, np.zeros(2), 0.1)
        assert np.array_equal(new, p)

    def test_pure(self):
        s = opt.AdamState(np.array([0.1]), np.array([0.2]), 4)
        a = opt.adam_step(s, np.array([1.0]), np.array([0.3]), 0.01)
        b = opt.adam_step(s, np.array([1.0]), np.array([0.3]), 0.01)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1].m, b[1].m)


class TestConfig:
    def test_tau_defaults(self):
        assert opt.TrainConfig().effective_tau == FOUR_E
        assert opt.TrainConfig(validation_fraction=0.2).effective_tau == 1.0
        assert opt.TrainConfig(tau=0.5).effective_tau == 0.5

    def test_rejects_bad_values(self):
        for bad in ({"learning_rate": -1}, {"epochs": -1}, {"batch_size": 0}, {"validation_fraction": 1.0}):
            with pytest.raises(ValueError):
                opt.TrainConfig(**bad)


def test_zero_epochs_fits_initial_hyperparameters():
    ds = small_dataset()
    spec = kernels.gaussian_iso(1.0, 0.5)
    fitted, trace = opt.train(spec, 0.3, ds, opt.TrainConfig(epochs=0))
    assert len(trace) == 0
    ref = model.fit(spec, 0.3, ds.inputs, np.eye(2)[ds.labels])
    assert np.array_equal(fitted.V, ref.V) and fitted.lam == 0.3


def test_zero_learning_rate_keeps_parameters():
    ds = small_dataset()
    fmap = features.init_mlp([2, 4], 1)
    fitted, trace = opt.train_explicit(fmap, 1.0, ds, opt.TrainConfig(learning_rate=0.0, epochs=5))
    assert np.array_equal(fitted.fmap.params, fmap.params) and fitted.lam == 1.0
    assert all(np.array_equal(p, trace.params[0]) for p in trace.params)


def test_trace_recomposition_and_positive_lambda():
    ds = small_dataset()
    cfg = opt.TrainConfig(learning_rate=0.1, epochs=20, batch_size=10)
    fitted, trace = opt.train(kernels.gaussian_ard(1.0, 1.0, d=2), 1.0, ds, cfg)
    assert len(trace) == 20 * 3
    for q, r, c in zip(trace.q, trace.empirical_risk, trace.rcb):
        assert q == r + FOUR_E * c
    assert np.all(np.exp(trace.params_array()[:, -1]) > 0) and fitted.lam > 0


def test_bitwise_determinism():
    ds = small_dataset()
    cfg = opt.TrainConfig(learning_rate=0.05, epochs=10, batch_size=12, validation_fraction=0.25, seed=3)
    a = opt.train(kernels.gaussian_iso(1.0, 1.0), 1.0, ds, cfg)
    b = opt.train(kernels.gaussian_iso(1.0, 1.0), 1.0, ds, cfg)
    assert a[1].q == b[1].q and np.array_equal(a[1].params_array(), b[1].params_array())
    assert np.array_equal(a[0].V, b[0].V)


def test_identity_features_track_linear_kernel_training():
    ds = small_dataset(n=25)
    cfg = opt.TrainConfig(learning_rate=0.05, epochs=15, batch_size=10, seed=2)
    _, t_imp = opt.train(kernels.linear_features(features.identity_map(2)), 0.5, ds, cfg)
    _, t_exp = opt.train_explicit(features.identity_map(2), 0.5, ds, cfg)
    assert np.allclose(t_imp.q, t_exp.q, rtol=0, atol=1e-8)


def test_divergence_aborts_with_trace(monkeypatch):
    calls = {"n": 0}
    real = opt.grad_objective

    def flaky(*args, **kw):
        value, grad = real(*args, **kw)
        calls["n"] += 1
        if calls["n"] > 3:
            value = type(value)(math.nan, value.empirical_risk, value.rcb)
        return value, grad

    monkeypatch.setattr(opt, "grad_objective", flaky)
    with pytest.raises(opt.DivergenceError) as err:
        opt.train(kernels.gaussian_iso(1.0, 1.0), 1.0, small_dataset(), opt.TrainConfig(epochs=10))
    assert len(err.value.trace) == 3


def test_trace_csv(tmp_path):
    _, trace = opt.train(kernels.gaussian_iso(1.0, 1.0), 1.0, small_dataset(), opt.TrainConfig(epochs=3))
    path = tmp_path / "t.csv"
    trace.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,q,empirical_risk,rcb,log_sigma_f,log_lengthscale,log_lambda"
    assert len(lines) == 4
    assert float(lines[1].split(",")[1]) == trace.q[0]


def test_validation_split():
    idx = np.arange(10)
    tr, va = opt.split_batch(idx, 0.2)
    assert tr.tolist() == list(range(8)) and va.tolist() == [8, 9]
    assert opt.split_batch(idx, 0.0)[1] is None


@pytest.mark.xfail(strict=True, reason=(
    "under the complexity-penalised objective the near-constant initial ReLU features are shrunk "
    "toward a constant predictor instead of separating the classes; see the decisions ledger"))
def test_feature_network_fits_iris():
    ds = load_iris_dataset()
    ds = apply_scaling(ds, fit_unit_scaling(ds))
    fitted, _ = opt.train_explicit(features.init_mlp([4, 16, 32, 8], 0), 1.0, ds,
                                   opt.TrainConfig(learning_rate=0.01, epochs=1000))
    assert np.mean(model.predict_label(fitted, ds.inputs) == ds.labels) > 0.9


def test_feature_network_fits_iris_without_penalty():
    """The same network and budget with the complexity weight removed does fit the training set."""
    ds = load_iris_dataset()
    ds = apply_scaling(ds, fit_unit_scaling(ds))
    fitted, _ = opt.train_explicit(features.init_mlp([4, 16, 32, 8], 0), 1.0, ds,
                                   opt.TrainConfig(learning_rate=0.01, epochs=1000, tau=0.0))
    assert np.mean(model.predict_label(fitted, ds.inputs) == ds.labels) > 0.9
