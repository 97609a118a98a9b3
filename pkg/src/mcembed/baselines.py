"""Comparison tuners: median-heuristic length scale, ERM gradient tuning and grid cross-validation."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import pdist

from . import kernels, model
from .data import kfold_split, one_hot
from .objective import DEFAULT_EPSILON, clipped_losses
from .optimize import TrainConfig, train

MEDIAN_SIGMA_F = 1.0
MEDIAN_LAMBDA = 1e-2


@dataclass(frozen=True)
class TunerResult:
    spec: kernels.KernelSpec
    lam: float
    scores: tuple = ()  # (candidate, mean held-out loss) pairs for CV
    trace: object = None
    fitted: object = None
    extra: dict = field(default_factory=dict)


def median_heuristic(X):
    """Median Euclidean distance over distinct pairs i < j."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise ValueError("median heuristic needs at least two points")
    ell = float(np.median(pdist(X)))
    if not ell > 0:
        raise ValueError("median pairwise distance is zero; inputs are degenerate")
    return ell


def median_tune(dataset, variant="gaussian_iso"):
    ell = median_heuristic(dataset.inputs)
    if variant == "gaussian_ard":
        spec = kernels.gaussian_ard(MEDIAN_SIGMA_F, ell, d=dataset.d)
    else:
        spec = kernels.gaussian_iso(MEDIAN_SIGMA_F, ell)
    Y = one_hot(dataset.labels, dataset.num_classes)
    fitted = model.fit(spec, MEDIAN_LAMBDA, dataset.inputs, Y, class_names=dataset.class_names)
    return TunerResult(spec, MEDIAN_LAMBDA, fitted=fitted)


def erm_tune(spec0, lam0, dataset, config=TrainConfig()):
    """Gradient tuning of the training risk alone (complexity weight zero)."""
    fitted, trace = train(spec0, lam0, dataset, replace(config, tau=0.0))
    return TunerResult(fitted.spec, fitted.lam, trace=trace, fitted=fitted)


def log_grid(low, high, num):
    return tuple(np.logspace(np.log10(low), np.log10(high), int(num)))


def make_grid(sigma_f, lengthscale, lam):
    """Cartesian product of per-hyperparameter value lists, sigma_f varying slowest."""
    return [tuple(float(v) for v in c) for c in itertools.product(sigma_f, lengthscale, lam)]


def cv_score(candidate, dataset, plan, epsilon=DEFAULT_EPSILON, variant="gaussian_iso"):
    sigma_f, ell, lam = candidate
    spec = (kernels.gaussian_ard(sigma_f, ell, d=dataset.d) if variant == "gaussian_ard"
            else kernels.gaussian_iso(sigma_f, ell))
    X, y = dataset.inputs, dataset.labels
    Y = one_hot(y, dataset.num_classes)
    losses = []
    for k in range(len(plan.folds)):
        tr, te = plan.fold(k)
        fitted = model.fit(spec, lam, X[tr], Y[tr])
        P = model.predict_proba(fitted, X[te])
        losses.append(float(np.mean(clipped_losses(P[np.arange(len(te)), y[te]], epsilon))))
    return float(np.mean(losses))


def cv_tune(grid, dataset, folds=5, seed=0, epsilon=DEFAULT_EPSILON, variant="gaussian_iso"):
    """Pick the (sigma_f, l, lambda) candidate with the lowest mean held-out clipped loss."""
    grid = list(grid)
    if not grid:
        raise ValueError("candidate grid is empty")
    if folds > dataset.n:
        raise ValueError(f"cannot make {folds} folds from {dataset.n} observations")
    plan = kfold_split(dataset.n, folds, seed)
    scores = tuple((tuple(c), cv_score(c, dataset, plan, epsilon, variant)) for c in grid)
    best = min(range(len(scores)), key=lambda i: (scores[i][1], i))
    sigma_f, ell, lam = scores[best][0]
    spec = (kernels.gaussian_ard(sigma_f, ell, d=dataset.d) if variant == "gaussian_ard"
            else kernels.gaussian_iso(sigma_f, ell))
    Y = one_hot(dataset.labels, dataset.num_classes)
    fitted = model.fit(spec, lam, dataset.inputs, Y, class_names=dataset.class_names)
    return TunerResult(spec, lam, scores=scores, fitted=fitted)
