"""Kernel families: isotropic/ARD Gaussian and linear kernels on explicit features.

Gaussian hyperparameters live in log space; the parameter vector of a Gaussian
spec is ``[log sigma_f, log l_1, ..., log l_k]`` (k = 1 for isotropic, d for ARD).
For ``linear_features`` the parameter vector is the feature map's flat parameters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from . import features

VARIANTS = ("gaussian_iso", "gaussian_ard", "linear_features")


@dataclass(frozen=True)
class KernelSpec:
    variant: str
    log_sigma_f: float = 0.0
    log_lengthscales: np.ndarray | None = None
    feature_map: features.FeatureMap | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.variant == "linear_features":
            if self.feature_map is None:
                raise ValueError("linear_features kernel needs a feature map")
            return
        ls = np.atleast_1d(np.asarray(self.log_lengthscales, dtype=np.float64)).copy()
        if self.variant == "gaussian_iso" and ls.shape != (1,):
            raise ValueError("isotropic kernel takes exactly one length scale")
        ls.setflags(write=False)
        object.__setattr__(self, "log_lengthscales", ls)
        object.__setattr__(self, "log_sigma_f", float(self.log_sigma_f))

    @property
    def is_gaussian(self):
        return self.variant != "linear_features"

    @property
    def sigma_f(self):
        return float(np.exp(self.log_sigma_f))

    @property
    def lengthscales(self):
        return np.exp(self.log_lengthscales)

    @property
    def input_dim(self):
        if self.variant == "gaussian_ard":
            return self.log_lengthscales.shape[0]
        if self.variant == "linear_features":
            return self.feature_map.input_dim
        return None

    @property
    def theta(self):
        if self.is_gaussian:
            return np.concatenate([[self.log_sigma_f], self.log_lengthscales])
        return self.feature_map.params

    @property
    def num_params(self):
        return self.theta.shape[0]

    def with_theta(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if self.is_gaussian:
            return KernelSpec(self.variant, float(theta[0]), theta[1:].copy())
        return KernelSpec(self.variant, feature_map=self.feature_map.with_params(theta))

    def param_names(self):
        if self.variant == "gaussian_iso":
            return ["log_sigma_f", "log_lengthscale"]
        if self.variant == "gaussian_ard":
            return ["log_sigma_f"] + [f"log_lengthscale_{j}" for j in range(self.log_lengthscales.size)]
        return [f"feature_param_{j}" for j in range(self.num_params)]

    def to_dict(self):
        if self.is_gaussian:
            return {
                "variant": self.variant,
                "log_sigma_f": self.log_sigma_f,
                "log_lengthscales": self.log_lengthscales.tolist(),
            }
        return {"variant": self.variant, "feature_map_ref": self.feature_map.to_dict()}


def gaussian_iso(sigma_f=1.0, lengthscale=1.0):
    return KernelSpec("gaussian_iso", np.log(sigma_f), np.log([lengthscale]))


def gaussian_ard(sigma_f=1.0, lengthscales=1.0, d=None):
    ls = np.asarray(lengthscales, dtype=np.float64)
    if ls.ndim == 0:
        if d is None:
            raise ValueError("give d when passing a scalar ARD length scale")
        ls = np.full(d, float(ls))
    return KernelSpec("gaussian_ard", np.log(sigma_f), np.log(ls))


def linear_features(feature_map):
    return KernelSpec("linear_features", feature_map=feature_map)


def _check_dims(spec, *mats):
    for X in mats:
        if X.ndim != 2:
            raise ValueError(f"inputs must be 2-d, got shape {X.shape}")
        want = spec.input_dim
        if want is not None and X.shape[1] != want:
            raise ValueError(f"kernel expects {want} input columns, got {X.shape[1]}")
    if len(mats) == 2 and mats[0].shape[1] != mats[1].shape[1]:
        raise ValueError("train and query inputs differ in dimension")


def _scaled(spec, X):
    return X / spec.lengthscales


def gram(spec, X):
    X = np.asarray(X, dtype=np.float64)
    _check_dims(spec, X)
    if spec.is_gaussian:
        n = X.shape[0]
        d2 = squareform(pdist(_scaled(spec, X), "sqeuclidean")) if n > 1 else np.zeros((n, n))
        return spec.sigma_f ** 2 * np.exp(-0.5 * d2)
    Z, _ = features.forward(spec.feature_map, X)
    return Z @ Z.T


def cross_gram(spec, X_train, X_query):
    """``k(x_i, x_q)`` with one column per query (n_train x n_query)."""
    Xa = np.asarray(X_train, dtype=np.float64)
    Xb = np.asarray(X_query, dtype=np.float64)
    _check_dims(spec, Xa, Xb)
    if spec.is_gaussian:
        d2 = cdist(_scaled(spec, Xa), _scaled(spec, Xb), "sqeuclidean")
        return spec.sigma_f ** 2 * np.exp(-0.5 * d2)
    Za, _ = features.forward(spec.feature_map, Xa)
    Zb, _ = features.forward(spec.feature_map, Xb)
    return Za @ Zb.T


def grad_gram(spec, X, param_index):
    """Entrywise derivative of ``gram(spec, X)`` with respect to one log hyperparameter."""
    if not spec.is_gaussian:
        raise ValueError("linear_features kernels have no log-space hyperparameters; use features.backward")
    if not 0 <= param_index < spec.num_params:
        raise IndexError(f"param_index {param_index} out of range for {spec.num_params} parameters")
    X = np.asarray(X, dtype=np.float64)
    K = gram(spec, X)
    if param_index == 0:
        return 2.0 * K
    if spec.variant == "gaussian_iso":
        Xs = _scaled(spec, X)
        return K * squareform(pdist(Xs, "sqeuclidean")) if X.shape[0] > 1 else np.zeros_like(K)
    j = param_index - 1
    col = X[:, j] / spec.lengthscales[j]
    return K * (col[:, None] - col[None, :]) ** 2


def gaussian_vjp(spec, Xa, Xb, K, G):
    """``sum(G * dK/dtheta_k)`` for every Gaussian log-parameter, K = k(Xa, Xb).

    Uses the expansion of the squared per-dimension difference so the cost is
    O(n_a n_b d) without materialising one matrix per length scale.
    """
    M = G * K
    out = np.empty(spec.num_params)
    out[0] = 2.0 * M.sum()
    Sa = Xa / spec.lengthscales
    Sb = Xb / spec.lengthscales
    per_dim = (M.sum(axis=1) @ Sa ** 2) + (M.sum(axis=0) @ Sb ** 2) - 2.0 * np.sum(Sa * (M @ Sb), axis=0)
    if spec.variant == "gaussian_iso":
        out[1] = per_dim.sum()
    else:
        out[1:] = per_dim
    return out


def alpha_bound(spec, X_batch=None):
    """Bound on the feature norm sqrt(k(x, x)).

    Stationary kernels give sigma_f; for explicit features the maximum feature
    norm over the batch stands in for the supremum over the input domain.
    """
    if spec.is_gaussian:
        return spec.sigma_f
    if X_batch is None or len(X_batch) == 0:
        raise ValueError("alpha for linear_features needs a nonempty batch")
    Z, _ = features.forward(spec.feature_map, np.asarray(X_batch, dtype=np.float64))
    return float(np.sqrt(np.max(np.sum(Z * Z, axis=1))))


def feature_alpha(Z):
    """Max row norm of a feature matrix and the row attaining it."""
    sq = np.sum(Z * Z, axis=1)
    i = int(np.argmax(sq))
    return float(np.sqrt(sq[i])), i
