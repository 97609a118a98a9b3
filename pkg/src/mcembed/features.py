"""Explicit feature maps: identity and a ReLU multilayer perceptron with backprop."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import truncnorm

INIT_BIAS = 0.1
INIT_WEIGHT_STD = 0.1


@dataclass(frozen=True)
class FeatureMap:
    """Layer sizes ``[d, h1, ..., p]``; ``weights[j]`` has shape (out, in).

    A map with a single layer size and no weights is the identity on R^d.
    Every layer, including the last, is ReLU activated.
    """

    layer_sizes: tuple
    weights: tuple = ()
    biases: tuple = ()

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        w = tuple(np.asarray(a, dtype=np.float64) for a in self.weights)
        b = tuple(np.asarray(a, dtype=np.float64) for a in self.biases)
        if len(w) != len(sizes) - 1 or len(b) != len(w):
            raise ValueError("need one weight matrix and bias vector per layer transition")
        for j, (wj, bj) in enumerate(zip(w, b)):
            if wj.shape != (sizes[j + 1], sizes[j]) or bj.shape != (sizes[j + 1],):
                raise ValueError(f"layer {j} parameter shapes inconsistent with sizes {sizes}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def variant(self):
        return "identity" if not self.weights else "mlp"

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def output_dim(self):
        return self.layer_sizes[-1]

    @property
    def num_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def params(self):
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b]
        return np.concatenate(parts) if parts else np.zeros(0)

    def with_params(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.num_params,):
            raise ValueError(f"expected {self.num_params} parameters, got {flat.shape}")
        ws, bs, k = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(flat[k:k + w.size].reshape(w.shape))
            k += w.size
            bs.append(flat[k:k + b.size].copy())
            k += b.size
        return FeatureMap(self.layer_sizes, tuple(ws), tuple(bs))

    def to_dict(self):
        return {"variant": self.variant, "layer_sizes": list(self.layer_sizes)}


def identity_map(d):
    return FeatureMap((d,))


def init_mlp(layer_sizes, seed):
    """Biases at 0.1, weights from a zero-mean normal (std 0.1) truncated at two std."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError("an MLP needs at least an input and an output size")
    rng = np.random.default_rng(seed)
    dist = truncnorm(-2.0, 2.0, loc=0.0, scale=INIT_WEIGHT_STD)
    ws = tuple(dist.rvs(size=(o, i), random_state=rng) for i, o in zip(sizes[:-1], sizes[1:]))
    bs = tuple(np.full(o, INIT_BIAS) for o in sizes[1:])
    return FeatureMap(sizes, ws, bs)


@dataclass
class FeatureJacobianBundle:
    fmap: FeatureMap
    activations: list = field(default_factory=list)  # layer inputs, a_0 = X
    preacts: list = field(default_factory=list)

    @property
    def n(self):
        return self.activations[0].shape[0]


def forward(fmap, X):
    """Features ``phi(X)`` (n x p) and the bundle needed by :func:`backward`."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != fmap.input_dim:
        raise ValueError(f"feature map expects {fmap.input_dim} columns, got shape {X.shape}")
    bundle = FeatureJacobianBundle(fmap, [X], [])
    a = X
    for w, b in zip(fmap.weights, fmap.biases):
        z = a @ w.T + b
        bundle.preacts.append(z)
        a = np.maximum(z, 0.0)
        bundle.activations.append(a)
    return a, bundle


def backward(bundle, upstream):
    """Gradient of ``sum(upstream * phi(X))`` with respect to the flat parameters."""
    upstream = np.asarray(upstream, dtype=np.float64)
    out = bundle.activations[-1]
    if upstream.shape != out.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match features {out.shape}")
    fmap = bundle.fmap
    grads = []
    delta = upstream
    for j in reversed(range(len(fmap.weights))):
        delta = delta * (bundle.preacts[j] > 0)  # relu'(0) := 0
        grads.append((delta.T @ bundle.activations[j], delta.sum(axis=0)))
        delta = delta @ fmap.weights[j]
    parts = []
    for gw, gb in reversed(grads):
        parts += [gw.ravel(), gb]
    return np.concatenate(parts) if parts else np.zeros(0)
