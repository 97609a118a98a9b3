"""Model files: a magic tag, a length-prefixed JSON header, then raw little-endian float64 arrays.

Arrays are written with their exact bytes, so a saved and reloaded model
predicts bit-identically to the in-memory one.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from . import features, kernels
from .data import ScalingParams
from .linalg import CholFactor
from .model import ExplicitFittedMCE, FittedMCE

MAGIC = b"MCEMBED\x00"
FORMAT_VERSION = 1
_LE = np.dtype("<f8")


class ModelFileError(ValueError):
    pass


def _fmap_arrays(fmap, prefix):
    out = {}
    for j, (w, b) in enumerate(zip(fmap.weights, fmap.biases)):
        out[f"{prefix}W{j}"] = w
        out[f"{prefix}b{j}"] = b
    return out


def _fmap_from(sizes, arrays, prefix):
    n_layers = len(sizes) - 1
    ws = tuple(arrays[f"{prefix}W{j}"] for j in range(n_layers))
    bs = tuple(arrays[f"{prefix}b{j}"] for j in range(n_layers))
    return features.FeatureMap(tuple(sizes), ws, bs)


def save_model(fitted, path):
    if isinstance(fitted, FittedMCE):
        kind = "implicit"
        arrays = {"X": fitted.X, "Y": fitted.Y, "V": fitted.V, "L": fitted.factor.L}
        spec = fitted.spec
        if spec.is_gaussian:
            kernel = {"variant": spec.variant, "log_sigma_f": spec.log_sigma_f,
                      "log_lengthscales": spec.log_lengthscales.tolist()}
        else:
            kernel = {"variant": spec.variant, "layer_sizes": list(spec.feature_map.layer_sizes)}
            arrays.update(_fmap_arrays(spec.feature_map, "phi_"))
        n, d = fitted.X.shape
        extra = {"jitter": fitted.factor.jitter}
    elif isinstance(fitted, ExplicitFittedMCE):
        kind = "explicit"
        arrays = {"W": fitted.W}
        arrays.update(_fmap_arrays(fitted.fmap, "phi_"))
        kernel = {"variant": "linear_features", "layer_sizes": list(fitted.fmap.layer_sizes)}
        n, d = fitted.n, fitted.fmap.input_dim
        extra = {"alpha": fitted.alpha}
    else:
        raise TypeError(f"cannot save object of type {type(fitted).__name__}")

    manifest, blobs, offset = [], [], 0
    for name, a in arrays.items():
        a = np.ascontiguousarray(a, dtype=_LE)
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "kernel": kernel,
        "lambda": fitted.lam,
        "m": fitted.num_classes,
        "n": int(n),
        "d": int(d),
        "scaling": None if fitted.scaling is None else fitted.scaling.to_dict(),
        "class_names": list(fitted.class_names),
        "arrays": manifest,
        **extra,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)


def read_header(path):
    with open(path, "rb") as fh:
        return _read_header(fh)


def _read_header(fh):
    if fh.read(len(MAGIC)) != MAGIC:
        raise ModelFileError("not a model file (bad magic)")
    size_raw = fh.read(8)
    if len(size_raw) != 8:
        raise ModelFileError("truncated model header")
    (size,) = struct.unpack("<Q", size_raw)
    try:
        header = json.loads(fh.read(size).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"corrupt model header: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise ModelFileError(f"unsupported model file version {header.get('version')}")
    return header


def load_model(path):
    with open(path, "rb") as fh:
        header = _read_header(fh)
        body = fh.read()
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + 8 * count > len(body):
            raise ModelFileError(f"array {entry['name']} truncated")
        a = np.frombuffer(body, dtype=_LE, count=count, offset=start).reshape(entry["shape"])
        arrays[entry["name"]] = a.astype(np.float64)
    scaling = None if header["scaling"] is None else ScalingParams.from_dict(header["scaling"])
    names = tuple(header["class_names"])
    kernel = header["kernel"]
    if header["kind"] == "explicit":
        fmap = _fmap_from(kernel["layer_sizes"], arrays, "phi_")
        return ExplicitFittedMCE(fmap, header["lambda"], arrays["W"], header["alpha"],
                                 header["n"], names, scaling)
    if kernel["variant"] == "linear_features":
        spec = kernels.linear_features(_fmap_from(kernel["layer_sizes"], arrays, "phi_"))
    else:
        spec = kernels.KernelSpec(kernel["variant"], kernel["log_sigma_f"],
                                  np.asarray(kernel["log_lengthscales"], dtype=np.float64))
    factor = CholFactor(arrays["L"], header["jitter"])
    return FittedMCE(spec, header["lambda"], arrays["X"], arrays["Y"], factor, arrays["V"], names, scaling)
