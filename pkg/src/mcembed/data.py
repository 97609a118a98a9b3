"""Dataset ingestion, unit-range scaling, one-hot encoding and index splitting."""
from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    """Base class for dataset problems."""


class EmptyDataError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class FormatError(DataError):
    """Binary container is malformed (bad magic, truncated payload, length mismatch)."""


class UnknownLabelError(DataError):
    def __init__(self, label):
        super().__init__(f"label {label!r} is not in the model's class mapping")
        self.label = label


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Inputs (n x d), 0-based integer labels and the class-name mapping."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_names: tuple = ()

    def __post_init__(self):
        x = _frozen(self.inputs, np.float64)
        if x.ndim == 1:
            x = _frozen(x.reshape(-1, 1), np.float64)
        y = _frozen(self.labels, np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise DataError(f"inputs {x.shape} and labels {y.shape} do not conform")
        if self.num_classes < 1:
            raise DataError("num_classes must be at least 1")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise DataError("labels must lie in 0..num_classes-1")
        names = tuple(self.class_names) or tuple(str(c) for c in range(self.num_classes))
        if len(names) != self.num_classes:
            raise DataError("class_names length must equal num_classes")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "class_names", names)

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def d(self):
        return self.inputs.shape[1]

    def subset(self, index):
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.inputs[index], self.labels[index], self.num_classes, self.class_names)

    def remap(self, class_names):
        """Re-encode labels against another class mapping (e.g. a trained model's)."""
        lookup = {name: i for i, name in enumerate(class_names)}
        new = np.empty_like(self.labels)
        for i, lab in enumerate(self.labels):
            name = self.class_names[lab]
            if name not in lookup:
                raise UnknownLabelError(name)
            new[i] = lookup[name]
        return Dataset(self.inputs, new, len(class_names), tuple(class_names))


def load_csv(path, label_column="last"):
    """Read a headed CSV file; one column holds the class label, the rest are numeric.

    ``label_column`` is a header name, ``"last"``/``"first"``, or an integer position.
    Labels are mapped to contiguous ids in order of first appearance.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyDataError(f"{path}: file is empty")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    if not body:
        raise EmptyDataError(f"{path}: header present but no data rows")

    if isinstance(label_column, int):
        col = label_column
    elif label_column == "last":
        col = len(header) - 1
    elif label_column == "first":
        col = 0
    elif label_column in header:
        col = header.index(label_column)
    else:
        raise DataError(f"{path}: label column {label_column!r} not found in header {header}")
    if not -len(header) <= col < len(header):
        raise DataError(f"{path}: label column index {col} out of range")
    col %= len(header)

    feature_cols = [j for j in range(len(header)) if j != col]
    x = np.empty((len(body), len(feature_cols)))
    names, raw = {}, []
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {i + 2} has {len(row)} cells, expected {len(header)}", row=i + 2)
        for k, j in enumerate(feature_cols):
            cell = row[j].strip()
            try:
                x[i, k] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric value {cell!r} at row {i + 2}, column {header[j]!r}",
                    row=i + 2,
                    column=header[j],
                ) from None
        lab = row[col].strip()
        names.setdefault(lab, len(names))
        raw.append(names[lab])
    return Dataset(x, np.array(raw, dtype=np.int64), len(names), tuple(names))


def _read_exact(fh, size, what):
    buf = fh.read(size)
    if len(buf) != size:
        raise FormatError(f"truncated {what}: expected {size} bytes, got {len(buf)}")
    return buf


def load_idx(images_path, labels_path, limit=None):
    """Read an MNIST-style IDX image/label pair, pixels scaled into [0, 1]."""
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"{images_path}: bad image magic 0x{magic:08x}")
        take = count if limit is None else min(limit, count)
        pixels = np.frombuffer(_read_exact(fh, take * rows * cols, "image payload"), dtype=np.uint8)
    with open(labels_path, "rb") as fh:
        magic, nlab = struct.unpack(">II", _read_exact(fh, 8, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"{labels_path}: bad label magic 0x{magic:08x}")
        if nlab != count:
            raise FormatError(f"label count {nlab} does not match image count {count}")
        labels = np.frombuffer(_read_exact(fh, take, "label payload"), dtype=np.uint8)

    x = pixels.reshape(take, rows * cols).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    # digit ids are the class ids; keep all ten even if a small limit misses some
    m = max(10, int(y.max()) + 1) if y.size else 10
    return Dataset(x, y, m)


@dataclass(frozen=True)
class ScalingParams:
    minimum: np.ndarray
    maximum: np.ndarray

    def to_dict(self):
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["min"], dtype=float), np.asarray(d["max"], dtype=float))


def fit_unit_scaling(train):
    x = train.inputs if isinstance(train, Dataset) else np.asarray(train, dtype=float)
    return ScalingParams(x.min(axis=0), x.max(axis=0))


def scale_inputs(x, params):
    x = np.asarray(x, dtype=float)
    if x.shape[1] != params.minimum.shape[0]:
        raise DataError(f"scaling fitted on {params.minimum.shape[0]} attributes, data has {x.shape[1]}")
    span = params.maximum - params.minimum
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - params.minimum) / safe, 0.0)


def apply_scaling(ds, params):
    """Affine map fitted on a training split; constant attributes go to 0."""
    return Dataset(scale_inputs(ds.inputs, params), ds.labels, ds.num_classes, ds.class_names)


def one_hot(labels, m):
    labels = np.asarray(labels, dtype=np.int64)
    y = np.zeros((labels.shape[0], m))
    if labels.size:
        if labels.min() < 0 or labels.max() >= m:
            raise DataError("labels out of range for one-hot encoding")
        y[np.arange(labels.shape[0]), labels] = 1.0
    return y


@dataclass(frozen=True)
class SplitPlan:
    """Either k folds (``folds``) or a single train/test partition."""

    n: int
    seed: int
    folds: tuple = ()
    train: np.ndarray | None = None
    test: np.ndarray | None = None

    def fold(self, i):
        """(train, test) index arrays with fold ``i`` held out."""
        test = self.folds[i]
        train = np.concatenate([f for j, f in enumerate(self.folds) if j != i])
        return np.sort(train), np.sort(test)

    def to_json(self):
        d = {"n": self.n, "seed": self.seed}
        if self.folds:
            d["folds"] = [f.tolist() for f in self.folds]
        else:
            d["train"] = self.train.tolist()
            d["test"] = self.test.tolist()
        return json.dumps(d)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if "folds" in d:
            return cls(d["n"], d["seed"], folds=tuple(np.array(f, dtype=np.int64) for f in d["folds"]))
        return cls(d["n"], d["seed"], train=np.array(d["train"], dtype=np.int64),
                   test=np.array(d["test"], dtype=np.int64))


def kfold_split(n, k, seed):
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return SplitPlan(n, seed, folds=tuple(np.array_split(perm, k)))


def train_test_split(n, test_fraction, seed):
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    n_test = int(round(test_fraction * n))
    n_test = min(max(n_test, 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return SplitPlan(n, seed, train=np.sort(perm[n_test:]), test=np.sort(perm[:n_test]))


def batch_iter(n, n_b, seed, epochs=None) -> Iterator[np.ndarray]:
    """Yield index batches: each epoch is a fresh shuffle cut into contiguous chunks.

    The last chunk of an epoch may be short. With ``epochs=None`` the stream is endless.
    """
    if not 1 <= n_b <= n:
        raise ValueError(f"batch size must satisfy 1 <= n_b <= n (n_b={n_b}, n={n})")
    rng = np.random.default_rng(seed)
    epoch = 0
    while epochs is None or epoch < epochs:
        perm = rng.permutation(n)
        for start in range(0, n, n_b):
            yield perm[start:start + n_b]
        epoch += 1


def batches_per_epoch(n, n_b):
    return math.ceil(n / n_b)


def default_data_dir():
    return Path(os.environ.get("MCEMBED_DATA_DIR", "data"))


def resolve_data_path(path):
    """Relative paths that do not exist are looked up under ``$MCEMBED_DATA_DIR``."""
    p = Path(path)
    if p.is_absolute() or p.exists():
        return p
    return default_data_dir() / p
