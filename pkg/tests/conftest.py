import os
from pathlib import Path

import numpy as np
import pytest

from mcembed.data import Dataset

SEARCH_DIRS = [os.environ.get("MCEMBED_DATA_DIR"), "/root/data", str(Path(__file__).parent / "data")]
BANKNOTE_NAMES = ("data_banknote_authentication.txt", "data_banknote_authentication.csv", "banknote.csv")


def find_data_file(*names):
    for base in filter(None, SEARCH_DIRS):
        for name in names:
            for p in (Path(base) / name, Path(base) / "banknote" / name, Path(base) / "mnist" / name):
                if p.is_file():
                    return p
    return None


def load_banknote():
    """The UCI banknote table; headerless comma-separated rows of 4 features and a 0/1 class."""
    path = find_data_file(*BANKNOTE_NAMES)
    if path is None:
        return None
    rows = np.loadtxt(path, delimiter=",", skiprows=0 if path.suffix == ".txt" else 1)
    y = rows[:, -1].astype(np.int64)
    return Dataset(rows[:, :-1], y, 2, ("0", "1"))


def mnist_dir():
    path = find_data_file("train-images-idx3-ubyte")
    return None if path is None else path.parent


def load_iris_dataset():
    from sklearn.datasets import load_iris

    ir = load_iris()
    return Dataset(ir.data, ir.target, 3, tuple(ir.target_names))


def load_wine_dataset():
    from sklearn.datasets import load_wine

    w = load_wine()
    return Dataset(w.data, w.target, 3, tuple(w.target_names))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def iris_csv(tmp_path):
    ds = load_iris_dataset()
    path = tmp_path / "iris2.csv"
    lines = ["sepal_length,sepal_width,species"]
    lines += [f"{x[0]},{x[1]},{ds.class_names[y]}" for x, y in zip(ds.inputs, ds.labels)]
    path.write_text("\n".join(lines) + "\n")
    return path


def random_problem(rng, n=12, d=3, m=3):
    X = rng.uniform(size=(n, d))
    labels = np.arange(n) % m
    rng.shuffle(labels)
    return X, np.eye(m)[labels]


CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
