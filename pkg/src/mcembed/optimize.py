"""Batch-stochastic hyperparameter learning loops with Adam over the flat parameter vector."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels, model
from .data import batch_iter, one_hot
from .objective import (
    DEFAULT_EPSILON,
    DEFAULT_VALIDATED_TAU,
    FOUR_E,
    LossConfig,
    grad_objective,
    grad_objective_explicit,
)


class DivergenceError(FloatingPointError):
    """Training produced a non-finite objective; carries the trace so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 1000
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    epsilon: float = DEFAULT_EPSILON
    tau: float | None = None  # None: 4e, or 1.0 with batch validation
    validation_fraction: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")

    @property
    def effective_tau(self):
        if self.tau is not None:
            return self.tau
        return DEFAULT_VALIDATED_TAU if self.validation_fraction > 0 else FOUR_E

    def loss_config(self):
        return LossConfig(epsilon=self.epsilon, tau=self.effective_tau)


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size):
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(state, params, grad, lr, beta1=0.9, beta2=0.999, eps_hat=1e-8):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps_hat)
    return new, AdamState(m, v, t)


@dataclass
class TrainTrace:
    param_names: list
    q: list = field(default_factory=list)
    empirical_risk: list = field(default_factory=list)
    rcb: list = field(default_factory=list)
    params: list = field(default_factory=list)

    def record(self, value, params):
        self.q.append(value.q)
        self.empirical_risk.append(value.empirical_risk)
        self.rcb.append(value.rcb)
        self.params.append(np.array(params, copy=True))

    def __len__(self):
        return len(self.q)

    def params_array(self):
        return np.array(self.params).reshape(len(self.params), len(self.param_names))

    def to_csv(self, path, max_params=None):
        names = self.param_names if max_params is None else self.param_names[:max_params]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "q", "empirical_risk", "rcb"] + names)
            for i in range(len(self)):
                w.writerow([i, repr(self.q[i]), repr(self.empirical_risk[i]), repr(self.rcb[i])]
                           + [repr(float(p)) for p in self.params[i][: len(names)]])


def split_batch(idx, validation_fraction):
    """First (1 - v) of an already shuffled batch trains, the rest validates."""
    if validation_fraction <= 0 or len(idx) < 2:
        return idx, None
    n_train = int(round((1.0 - validation_fraction) * len(idx)))
    n_train = min(max(n_train, 1), len(idx) - 1)
    return idx[:n_train], idx[n_train:]


def _run(grad_fn, params0, names, X, Y, config):
    """Shared loop: sample batch, evaluate q and its gradient, Adam step."""
    n = X.shape[0]
    n_b = n if config.batch_size is None else min(config.batch_size, n)
    loss_cfg = config.loss_config()
    trace = TrainTrace(list(names))
    params = np.array(params0, dtype=np.float64)
    state = AdamState.zeros(params.size)
    for idx in batch_iter(n, n_b, config.seed, epochs=config.epochs):
        tr, va = split_batch(idx, config.validation_fraction)
        kw = {} if va is None else {"X_val": X[va], "Y_val": Y[va]}
        value, grad = grad_fn(params, X[tr], Y[tr], loss_cfg, kw)
        if not math.isfinite(value.q):
            raise DivergenceError(f"objective became non-finite at iteration {len(trace)}", trace)
        trace.record(value, params)
        params, state = adam_step(state, params, grad, config.learning_rate,
                                  config.beta1, config.beta2, config.eps_hat)
    return params, trace


def train(spec0, lam0, dataset, config=TrainConfig()):
    """Learn kernel hyperparameters and lambda, then fit on the full training set."""
    if dataset.n < 1:
        raise ValueError("dataset is empty")
    if not lam0 > 0:
        raise ValueError("initial lambda must be positive")
    X = dataset.inputs
    Y = one_hot(dataset.labels, dataset.num_classes)

    def grad_fn(p, Xb, Yb, cfg, kw):
        return grad_objective(spec0.with_theta(p[:-1]), math.exp(p[-1]), Xb, Yb, cfg, **kw)

    p0 = np.concatenate([spec0.theta, [math.log(lam0)]])
    names = spec0.param_names() + ["log_lambda"]
    params, trace = _run(grad_fn, p0, names, X, Y, config)
    spec, lam = spec0.with_theta(params[:-1]), math.exp(params[-1])
    fitted = model.fit(spec, lam, X, Y, class_names=dataset.class_names)
    return fitted, trace


def train_explicit(map0, lam0, dataset, config=TrainConfig()):
    """Explicit-feature variant: p x p factorisations and r = alpha ||W||_F."""
    if dataset.n < 1:
        raise ValueError("dataset is empty")
    if not lam0 > 0:
        raise ValueError("initial lambda must be positive")
    X = dataset.inputs
    Y = one_hot(dataset.labels, dataset.num_classes)

    def grad_fn(p, Xb, Yb, cfg, kw):
        return grad_objective_explicit(map0.with_params(p[:-1]), math.exp(p[-1]), Xb, Yb, cfg, **kw)

    p0 = np.concatenate([map0.params, [math.log(lam0)]])
    names = [f"feature_param_{j}" for j in range(map0.num_params)] + ["log_lambda"]
    params, trace = _run(grad_fn, p0, names, X, Y, config)
    fmap, lam = map0.with_params(params[:-1]), math.exp(params[-1])
    fitted = model.fit_explicit(fmap, lam, X, Y, class_names=dataset.class_names)
    return fitted, trace


def with_scaling(fitted, scaling):
    return replace(fitted, scaling=scaling)


def default_gaussian(variant, d, sigma_f=1.0, lengthscale=1.0):
    if variant == "gaussian_iso":
        return kernels.gaussian_iso(sigma_f, lengthscale)
    return kernels.gaussian_ard(sigma_f, lengthscale, d=d)
