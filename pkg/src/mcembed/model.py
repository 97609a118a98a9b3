"""Multiclass conditional embeddings: fitting, decision probabilities and entropy estimates.

An implicit model keeps its training inputs and the weights
``V = (K + n lam I)^{-1} Y``; raw decision probabilities at a query x are
``V^T k(x)``. An explicit model works in a p-dimensional feature space with
``W = (Z^T Z + n lam I)^{-1} Z^T Y`` and predicts ``W^T phi(x)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import features
from .data import ScalingParams
from .kernels import KernelSpec, alpha_bound, cross_gram, feature_alpha, gram
from .linalg import CholFactor, cholesky_psd, solve_chol, trace_quad


@dataclass(frozen=True)
class FittedMCE:
    spec: KernelSpec
    lam: float
    X: np.ndarray
    Y: np.ndarray
    factor: CholFactor
    V: np.ndarray
    class_names: tuple = ()
    scaling: ScalingParams | None = None

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def num_classes(self):
        return self.Y.shape[1]

    @property
    def labels(self):
        return np.argmax(self.Y, axis=1)


@dataclass(frozen=True)
class ExplicitFittedMCE:
    fmap: features.FeatureMap
    lam: float
    W: np.ndarray
    alpha: float
    n: int
    class_names: tuple = ()
    scaling: ScalingParams | None = None

    @property
    def num_classes(self):
        return self.W.shape[1]


def _weights(factor, Y):
    # column by column so that a single-column solve reproduces a column of V exactly
    return np.column_stack([solve_chol(factor, np.ascontiguousarray(Y[:, c])) for c in range(Y.shape[1])])


def fit(spec, lam, X, Y, class_names=(), scaling=None):
    """Factor ``K + n lam I`` and solve for the embedding weights."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n = X.shape[0]
    if n < 1 or Y.shape[0] != n:
        raise ValueError("need at least one observation with matching labels")
    factor = cholesky_psd(gram(spec, X) + n * lam * np.eye(n))
    V = _weights(factor, Y)
    return FittedMCE(spec, float(lam), X, Y, factor, V, tuple(class_names), scaling)


def fit_explicit(fmap, lam, X, Y, class_names=(), scaling=None):
    if not lam > 0:
        raise ValueError("lambda must be positive")
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    Z, _ = features.forward(fmap, X)
    n, p = Z.shape
    factor = cholesky_psd(Z.T @ Z + n * lam * np.eye(p))
    W = solve_chol(factor, Z.T @ Y)
    alpha, _ = feature_alpha(Z)
    return ExplicitFittedMCE(fmap, float(lam), W, alpha, n, tuple(class_names), scaling)


def _apply(Kq, w):
    return Kq.T @ w


def predict_proba(model, X_query):
    """Raw decision probabilities, one row per query; entries may leave [0, 1]."""
    Xq = np.asarray(X_query, dtype=np.float64)
    if isinstance(model, ExplicitFittedMCE):
        Zq, _ = features.forward(model.fmap, Xq)
        return Zq @ model.W
    Kq = cross_gram(model.spec, model.X, Xq)
    return np.column_stack([_apply(Kq, np.ascontiguousarray(model.V[:, c])) for c in range(model.num_classes)])


def clip_normalize(P):
    """Clip negatives to zero and renormalise each row; all-nonpositive rows become uniform."""
    P = np.asarray(P, dtype=np.float64)
    single = P.ndim == 1
    P = np.atleast_2d(P)
    C = np.maximum(P, 0.0)
    total = C.sum(axis=1, keepdims=True)
    m = P.shape[1]
    out = np.where(total > 0, C / np.where(total > 0, total, 1.0), 1.0 / m)
    return out[0] if single else out


def predict_label(model, X_query):
    return np.argmax(predict_proba(model, X_query), axis=1)


def conditional_expectation(model, g, X_query):
    """Estimate ``E[g(Y) | X = x]`` from the values ``g(y_i)`` on the training labels."""
    if isinstance(model, ExplicitFittedMCE):
        raise TypeError("explicit models do not retain training inputs; use an implicit model")
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (model.n,):
        raise ValueError(f"g must have length n={model.n}")
    Kq = cross_gram(model.spec, model.X, np.asarray(X_query, dtype=np.float64))
    return _apply(Kq, solve_chol(model.factor, g))


def rcb(model):
    """Complexity bound ``alpha * sqrt(trace(V^T K V))`` (``alpha * ||W||_F`` when explicit)."""
    if isinstance(model, ExplicitFittedMCE):
        return model.alpha * float(np.linalg.norm(model.W))
    K = gram(model.spec, model.X)
    alpha = alpha_bound(model.spec, model.X)
    return alpha * float(np.sqrt(max(trace_quad(model.V, K), 0.0)))


def rcb_batch(spec, lam, X_batch, Y_batch):
    return rcb(fit(spec, lam, X_batch, Y_batch))


def clipnorm_entropy(P):
    """Entropy of clip-normalised rows, with 0 log 0 = 0."""
    Pt = clip_normalize(P)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(Pt > 0, -Pt * np.log(np.where(Pt > 0, Pt, 1.0)), 0.0)
    return terms.sum(axis=-1)


def embedding_entropy(P):
    """Expected information under the embedding, from raw class probabilities.

    The information estimate -log p_y(x) (zero where p_y(x) <= 0) depends on a
    training point only through its label, so the inner product with the
    embedding collapses to a sum over classes of information times p_c(x).
    """
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    info = np.where(P > 0, -np.log(np.where(P > 0, P, 1.0)), 0.0)
    return np.sum(info * P, axis=1)


def entropy_clipnorm(model, X_query):
    return clipnorm_entropy(predict_proba(model, X_query))


def entropy_embedding(model, X_query):
    """May be slightly negative where the model is confident."""
    return embedding_entropy(predict_proba(model, X_query))
