"""Clipped cross-entropy risk, the complexity-penalised learning objective and its gradient.

The objective at hyperparameters (theta, lambda) on a batch is

    q = mean_i L_eps(y_i, f(x_i)) + tau * r(theta, lambda)

with f the embedding fitted on the same batch (or on a training sub-batch when
a validation sub-batch is given) and r = alpha(theta) * sqrt(trace(V^T K V)).

Gradients are taken with respect to ``[theta..., log lambda]`` where theta is
the kernel's parameter vector (log-space for Gaussian kernels, raw network
parameters for feature maps).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import features
from .kernels import cross_gram, feature_alpha, gaussian_vjp, gram
from .linalg import cholesky_psd, solve_chol

FOUR_E = 4.0 * math.e
DEFAULT_EPSILON = 1e-15
DEFAULT_VALIDATED_TAU = 1.0


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, index, value):
        super().__init__(f"gradient entry {index} is not finite ({value})")
        self.index = index


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = DEFAULT_EPSILON
    tau: float = FOUR_E

    def __post_init__(self):
        if not 0.0 < self.epsilon < math.exp(-1.0):
            raise ValueError(f"epsilon must lie in (0, 1/e), got {self.epsilon}")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")


@dataclass(frozen=True)
class ObjectiveValue:
    q: float
    empirical_risk: float
    rcb: float


def cross_entropy_clipped(y, p, epsilon):
    """``-log(clip(p[y], epsilon, 1))`` on a raw probability vector."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    return float(-np.log(min(max(float(np.asarray(p)[y]), epsilon), 1.0)))


def clipped_losses(f_y, epsilon):
    return -np.log(np.clip(f_y, epsilon, 1.0))


def _risk_and_sensitivity(P, labels, epsilon):
    """Mean clipped loss on rows of P and its gradient with respect to P."""
    n = P.shape[0]
    rows = np.arange(n)
    f_y = P[rows, labels]
    risk = float(np.mean(clipped_losses(f_y, epsilon)))
    G = np.zeros_like(P)
    inside = (f_y > epsilon) & (f_y < 1.0)
    G[rows[inside], labels[inside]] = -1.0 / (n * f_y[inside])
    return risk, G


def _as_labels(Y):
    Y = np.asarray(Y, dtype=np.float64)
    return Y, np.argmax(Y, axis=1)


@dataclass
class _Batch:
    """Train (T) and validation (V) blocks; V is T for the plain objective."""

    Xt: np.ndarray
    Yt: np.ndarray
    Xv: np.ndarray
    Yv: np.ndarray
    same: bool


def _batch(X, Y, Xv=None, Yv=None):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    if Xv is None:
        return _Batch(X, Y, X, Y, True)
    Xv = np.asarray(Xv, dtype=np.float64)
    Yv = np.asarray(Yv, dtype=np.float64)
    if Xv.shape[0] == 0:
        raise ValueError("validation batch must be nonempty")
    return _Batch(X, Y, Xv, Yv, False)


# ---------------------------------------------------------------- implicit path


def _implicit_core(Ktt, Kvt, Yt, Yv, lam, alpha, config, need_grad):
    """Value and reverse-mode sensitivities for fixed gram blocks.

    Returns (value, G_tt, G_vt, d q/d lambda, d q/d alpha); G_vt is None when
    the validation block is the training block (its sensitivity is folded into G_tt).
    """
    n = Ktt.shape[0]
    factor = cholesky_psd(Ktt + n * lam * np.eye(n))
    V = solve_chol(factor, Yt)
    P = (Ktt if Kvt is None else Kvt) @ V
    _, labels = _as_labels(Yv)
    risk, GP = _risk_and_sensitivity(P, labels, config.epsilon)
    t = max(float(np.sum(V * (Ktt @ V))), 0.0)
    sqrt_t = math.sqrt(t)
    r = alpha * sqrt_t
    value = ObjectiveValue(risk + config.tau * r, risk, r)
    if not need_grad:
        return value, None, None, None, None

    s = config.tau * alpha / (2.0 * sqrt_t) if sqrt_t > 0 else 0.0
    KV = Ktt @ V
    if Kvt is None:
        GV = Ktt @ GP + 2.0 * s * KV
    else:
        GV = Kvt.T @ GP + 2.0 * s * KV
    B = solve_chol(factor, GV)
    # dq/dKtt = (sV - B) V^T [+ GP V^T when validation is the training block]
    U = s * V - B
    if Kvt is None:
        U = U + GP
        Gvt = None
    else:
        Gvt = GP @ V.T
    Gtt = U @ V.T
    g_lam = -n * float(np.sum(B * V))
    g_alpha = config.tau * sqrt_t
    return value, Gtt, Gvt, g_lam, g_alpha


def _gaussian_parts(spec, b):
    Ktt = gram(spec, b.Xt)
    Kvt = None if b.same else cross_gram(spec, b.Xt, b.Xv).T
    return Ktt, Kvt


def _grad_implicit(spec, lam, b, config, need_grad=True):
    if spec.is_gaussian:
        Ktt, Kvt = _gaussian_parts(spec, b)
        alpha = spec.sigma_f
        value, Gtt, Gvt, g_lam, g_alpha = _implicit_core(Ktt, Kvt, b.Yt, b.Yv, lam, alpha, config, need_grad)
        if not need_grad:
            return value, None
        g_theta = gaussian_vjp(spec, b.Xt, b.Xt, Ktt, Gtt)
        if Gvt is not None:
            g_theta += gaussian_vjp(spec, b.Xv, b.Xt, Kvt, Gvt)
        g_theta[0] += g_alpha * alpha  # d alpha / d log sigma_f = alpha
        return value, np.concatenate([g_theta, [lam * g_lam]])

    fmap = spec.feature_map
    Zt, bt = features.forward(fmap, b.Xt)
    Ktt = Zt @ Zt.T
    if b.same:
        Zv, bv, Kvt = Zt, bt, None
    else:
        Zv, bv = features.forward(fmap, b.Xv)
        Kvt = Zv @ Zt.T
    alpha, i_max = feature_alpha(Zt)
    value, Gtt, Gvt, g_lam, g_alpha = _implicit_core(Ktt, Kvt, b.Yt, b.Yv, lam, alpha, config, need_grad)
    if not need_grad:
        return value, None
    GZt = (Gtt + Gtt.T) @ Zt
    if alpha > 0:
        GZt[i_max] += g_alpha * Zt[i_max] / alpha
    g_theta = features.backward(bt, GZt) if fmap.num_params else np.zeros(0)
    if Gvt is not None:
        GZt_v = Gvt.T @ Zv  # sensitivity of the training-side features through Kvt
        g_theta = g_theta + (features.backward(bt, GZt_v) if fmap.num_params else 0.0)
        g_theta = g_theta + (features.backward(bv, Gvt @ Zt) if fmap.num_params else 0.0)
    return value, np.concatenate([g_theta, [lam * g_lam]])


def objective(spec, lam, X_batch, Y_batch, config=LossConfig()):
    """Fit on the batch with ``n_b * lam`` regularisation and score on the same batch."""
    value, _ = _grad_implicit(spec, lam, _batch(X_batch, Y_batch), config, need_grad=False)
    return value


def objective_validated(spec, lam, X_train, Y_train, X_val, Y_val, config=LossConfig(tau=DEFAULT_VALIDATED_TAU)):
    """Embedding and complexity from the training sub-batch, risk on the validation sub-batch."""
    b = _batch(X_train, Y_train, X_val, Y_val)
    value, _ = _grad_implicit(spec, lam, b, config, need_grad=False)
    return value


def _check_finite(grad):
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise NonFiniteGradientError(int(bad[0]), grad[bad[0]])
    return grad


def grad_objective(spec, lam, X_batch, Y_batch, config=LossConfig(), X_val=None, Y_val=None):
    """Objective value and its gradient over ``[spec.theta..., log lam]``."""
    value, grad = _grad_implicit(spec, lam, _batch(X_batch, Y_batch, X_val, Y_val), config)
    return value, _check_finite(grad)


# ---------------------------------------------------------------- explicit path


def _explicit_core(Zt, Zv, Yt, Yv, lam, alpha, config, need_grad):
    n, p = Zt.shape
    factor = cholesky_psd(Zt.T @ Zt + n * lam * np.eye(p))
    C = Zt.T @ Yt
    W = solve_chol(factor, C)
    P = Zv @ W
    _, labels = _as_labels(Yv)
    risk, GP = _risk_and_sensitivity(P, labels, config.epsilon)
    t = float(np.sum(W * W))
    sqrt_t = math.sqrt(t)
    r = alpha * sqrt_t
    value = ObjectiveValue(risk + config.tau * r, risk, r)
    if not need_grad:
        return value, None, None, None, None
    s = config.tau * alpha / (2.0 * sqrt_t) if sqrt_t > 0 else 0.0
    GW = Zv.T @ GP + 2.0 * s * W
    H = solve_chol(factor, GW)
    GB = -H @ W.T
    GZt = Yt @ H.T + Zt @ (GB + GB.T)
    GZv = GP @ W.T
    g_lam = n * float(np.trace(GB))
    return value, GZt, GZv, g_lam, config.tau * sqrt_t


def _grad_explicit(fmap, lam, b, config, need_grad=True):
    Zt, bt = features.forward(fmap, b.Xt)
    if b.same:
        Zv, bv = Zt, bt
    else:
        Zv, bv = features.forward(fmap, b.Xv)
    alpha, i_max = feature_alpha(Zt)
    value, GZt, GZv, g_lam, g_alpha = _explicit_core(Zt, Zv, b.Yt, b.Yv, lam, alpha, config, need_grad)
    if not need_grad:
        return value, None
    if alpha > 0:
        GZt[i_max] += g_alpha * Zt[i_max] / alpha
    if not fmap.num_params:
        g_theta = np.zeros(0)
    elif b.same:
        g_theta = features.backward(bt, GZt + GZv)
    else:
        g_theta = features.backward(bt, GZt) + features.backward(bv, GZv)
    return value, np.concatenate([g_theta, [lam * g_lam]])


def objective_explicit(fmap, lam, X_batch, Y_batch, config=LossConfig(), X_val=None, Y_val=None):
    """Explicit-feature objective: p x p system ``Z^T Z + n_b lam I``, r = alpha ||W||_F."""
    value, _ = _grad_explicit(fmap, lam, _batch(X_batch, Y_batch, X_val, Y_val), config, need_grad=False)
    return value


def grad_objective_explicit(fmap, lam, X_batch, Y_batch, config=LossConfig(), X_val=None, Y_val=None):
    value, grad = _grad_explicit(fmap, lam, _batch(X_batch, Y_batch, X_val, Y_val), config)
    return value, _check_finite(grad)


# ---------------------------------------------------------------- verification


def finite_difference_gradient(fun, params, step=1e-5):
    """Central differences of a scalar function of a flat parameter vector."""
    params = np.asarray(params, dtype=np.float64)
    g = np.empty_like(params)
    for j in range(params.size):
        up = params.copy()
        dn = params.copy()
        up[j] += step
        dn[j] -= step
        g[j] = (fun(up) - fun(dn)) / (2.0 * step)
    return g
