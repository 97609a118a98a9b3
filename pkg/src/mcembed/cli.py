"""Command-line front end: train, evaluate, benchmark and entropy-map subcommands.

Every run is driven by one nested config dictionary. Values come from the
built-in defaults, then an optional ``--config`` JSON file, then ``--set
dotted.key=value`` overrides, then the named flags.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, baselines, features, kernels, model
from .data import (
    DataError,
    Dataset,
    apply_scaling,
    fit_unit_scaling,
    kfold_split,
    load_csv,
    load_idx,
    resolve_data_path,
    scale_inputs,
    train_test_split,
)
from .linalg import SingularMatrixError
from .objective import DEFAULT_EPSILON, clipped_losses
from .optimize import DivergenceError, TrainConfig, train, train_explicit
from .persistence import ModelFileError, load_model, save_model

TUNERS = ("rcb", "erm", "cv", "med")
BENCHMARK_ROWS = ("rcb", "rcb-sgd", "erm", "cv", "med")
KERNELS = ("gaussian-iso", "gaussian-ard", "linear-mlp")
DEFAULT_GRID = (-0.5, 1.05, -0.5, 1.05, 100, 100)

DEFAULTS = {
    "data": {
        "path": None,
        "format": "csv",
        "label_col": "last",
        "labels": None,
        "limit": None,
        "test_path": None,
        "test_labels": None,
        "test_limit": None,
        "test_fraction": 0.0,
        "scale": None,  # None: unit-range for csv, none for idx
    },
    "datasets": [],
    "kernel": {"name": "gaussian-ard", "layers": [16, 32, 8], "sigma_f": 1.0, "lengthscale": 1.0, "lambda": 1.0},
    "train": {
        "lr": 0.1,
        "epochs": 1000,
        "batch_size": None,
        "epsilon": DEFAULT_EPSILON,
        "tau": None,
        "validation_fraction": 0.0,
        "seed": 0,
    },
    "tuner": "rcb",
    "tuners": list(BENCHMARK_ROWS),
    "folds": 10,
    "cv": {"folds": 5, "grid": {"sigma_f": [0.1, 10.0, 3], "lengthscale": [0.03, 3.0, 5], "lambda": [1e-5, 1e-1, 5]}},
    "out": {"model": None, "metrics": None, "trace": None, "table": None},
}

# named flag -> dotted config key
FLAG_KEYS = {
    "data": "data.path",
    "format": "data.format",
    "label_col": "data.label_col",
    "labels": "data.labels",
    "limit": "data.limit",
    "test_data": "data.test_path",
    "test_labels": "data.test_labels",
    "test_limit": "data.test_limit",
    "test_fraction": "data.test_fraction",
    "kernel": "kernel.name",
    "layers": "kernel.layers",
    "lr": "train.lr",
    "epochs": "train.epochs",
    "batch_size": "train.batch_size",
    "epsilon": "train.epsilon",
    "tau": "train.tau",
    "validation_fraction": "train.validation_fraction",
    "seed": "train.seed",
    "tuner": "tuner",
    "tuners": "tuners",
    "folds": "folds",
    "out_model": "out.model",
    "out_metrics": "out.metrics",
    "out_trace": "out.trace",
    "out_table": "out.table",
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config


def set_dotted(cfg, key, value):
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise UsageError(f"unknown config section in {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise UsageError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _merge(base, override, prefix=""):
    for k, v in override.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(base[k], dict) and isinstance(v, dict) and k != "grid":
            _merge(base[k], v, key + ".")
        else:
            base[k] = v


def build_config(args):
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                _merge(cfg, json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        set_dotted(cfg, key.strip(), _parse_value(raw))
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            set_dotted(cfg, key, value)
    return cfg


def _csv_ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _csv_words(text):
    return [v.strip() for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------- data


def _idx_pair(path, labels, split):
    p = resolve_data_path(path)
    if p.is_dir():
        stem = "train" if split == "train" else "t10k"
        return p / f"{stem}-images-idx3-ubyte", p / f"{stem}-labels-idx1-ubyte"
    if labels is None:
        raise UsageError("idx format needs --labels when --data is a file")
    return p, resolve_data_path(labels)


def load_source(path, fmt, label_col="last", labels=None, limit=None, split="train"):
    if path is None:
        raise UsageError("no dataset given (use --data)")
    if fmt == "idx":
        images, labs = _idx_pair(path, labels, split)
        for f in (images, labs):
            if not f.is_file():
                raise FileNotFoundError(f"dataset file not found: {f}")
        return load_idx(images, labs, limit=limit)
    if fmt != "csv":
        raise UsageError(f"unknown data format {fmt!r}")
    if isinstance(label_col, str) and label_col.lstrip("-").isdigit():
        label_col = int(label_col)
    ds = load_csv(resolve_data_path(path), label_column=label_col)
    return ds if limit is None else ds.subset(np.arange(min(limit, ds.n)))


def _wants_scaling(data_cfg):
    if data_cfg["scale"] is None:
        return data_cfg["format"] == "csv"
    return bool(data_cfg["scale"])


def _dataset_name(data_cfg):
    return Path(str(data_cfg["path"])).stem


# ---------------------------------------------------------------- tuning


def train_config(cfg, batch_size=None):
    t = cfg["train"]
    return TrainConfig(
        learning_rate=float(t["lr"]),
        epochs=int(t["epochs"]),
        batch_size=batch_size if batch_size is not None else t["batch_size"],
        seed=int(t["seed"]),
        epsilon=float(t["epsilon"]),
        tau=None if t["tau"] is None else float(t["tau"]),
        validation_fraction=float(t["validation_fraction"]),
    )


def initial_kernel(cfg, d):
    k = cfg["kernel"]
    name = k["name"]
    if name == "gaussian-iso":
        return kernels.gaussian_iso(k["sigma_f"], k["lengthscale"])
    if name == "gaussian-ard":
        return kernels.gaussian_ard(k["sigma_f"], k["lengthscale"], d=d)
    if name == "linear-mlp":
        layers = k["layers"]
        if isinstance(layers, str):
            layers = _csv_ints(layers)
        return features.init_mlp([d] + list(layers), int(cfg["train"]["seed"]))
    raise UsageError(f"unknown kernel {name!r}; choose from {', '.join(KERNELS)}")


def _cv_grid(cfg):
    g = cfg["cv"]["grid"]
    axes = [baselines.log_grid(*g[name]) for name in ("sigma_f", "lengthscale", "lambda")]
    return baselines.make_grid(*axes)


def tune(cfg, tuner, ds, batch_size=None, seed=None):
    """Fit a model with one tuner; returns ``(fitted, trace_or_None)``."""
    if seed is not None:
        cfg = copy.deepcopy(cfg)
        cfg["train"]["seed"] = int(seed)
    init = initial_kernel(cfg, ds.d)
    lam0 = float(cfg["kernel"]["lambda"])
    tc = train_config(cfg, batch_size)
    explicit = isinstance(init, features.FeatureMap)
    if tuner in ("cv", "med") and explicit:
        raise UsageError(f"tuner {tuner!r} only applies to Gaussian kernels")
    variant = "gaussian_ard" if cfg["kernel"]["name"] == "gaussian-ard" else "gaussian_iso"
    if tuner == "rcb":
        return train_explicit(init, lam0, ds, tc) if explicit else train(init, lam0, ds, tc)
    if tuner == "erm":
        if explicit:
            return train_explicit(init, lam0, ds, replace(tc, tau=0.0))
        res = baselines.erm_tune(init, lam0, ds, tc)
        return res.fitted, res.trace
    if tuner == "cv":
        res = baselines.cv_tune(_cv_grid(cfg), ds, folds=int(cfg["cv"]["folds"]), seed=tc.seed,
                                epsilon=tc.epsilon, variant=variant)
        return res.fitted, None
    if tuner == "med":
        return baselines.median_tune(ds, variant=variant).fitted, None
    raise UsageError(f"unknown tuner {tuner!r}")


def hyperparameters(fitted):
    if isinstance(fitted, model.ExplicitFittedMCE):
        return {"lambda": fitted.lam, "feature_layers": list(fitted.fmap.layer_sizes)}
    spec = fitted.spec
    out = {"lambda": fitted.lam, "kernel": spec.variant}
    if spec.is_gaussian:
        out["sigma_f"] = spec.sigma_f
        out["lengthscales"] = spec.lengthscales.tolist()
    return out


def score(fitted, ds, epsilon):
    P = model.predict_proba(fitted, ds.inputs)
    acc = float(np.mean(np.argmax(P, axis=1) == ds.labels))
    loss = float(np.mean(clipped_losses(P[np.arange(ds.n), ds.labels], epsilon)))
    ent = float(np.mean(model.clipnorm_entropy(P)))
    return acc, loss, ent


def _std(values):
    return float(np.std(values)) if len(values) > 1 else 0.0


def _report(command, cfg, results, t0):
    return {
        "artifact_version": __version__,
        "command": command,
        "seed": int(cfg["train"]["seed"]),
        "config": cfg,
        "wall_clock_seconds": round(time.perf_counter() - t0, 6),
        "results": results,
    }


def _emit(report, path):
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- commands


def cmd_train(cfg):
    t0 = time.perf_counter()
    dc = cfg["data"]
    full = load_source(dc["path"], dc["format"], dc["label_col"], dc["labels"], dc["limit"])
    seed = int(cfg["train"]["seed"])
    if dc["test_path"] is not None:
        tr = full
        te = load_source(dc["test_path"], dc["format"], dc["label_col"], dc["test_labels"],
                         dc["test_limit"], split="test").remap(tr.class_names)
        where = "test"
    elif dc["test_fraction"]:
        plan = train_test_split(full.n, float(dc["test_fraction"]), seed)
        tr, te, where = full.subset(plan.train), full.subset(plan.test), "holdout"
    else:
        tr, te, where = full, full, "train"

    scaling = None
    if _wants_scaling(dc):
        scaling = fit_unit_scaling(tr)
        tr, te = apply_scaling(tr, scaling), apply_scaling(te, scaling)
    fitted, trace = tune(cfg, cfg["tuner"], tr)
    fitted = replace(fitted, scaling=scaling, class_names=tr.class_names)

    acc, loss, ent = score(fitted, te, float(cfg["train"]["epsilon"]))
    result = {
        "dataset": _dataset_name(dc),
        "tuner": cfg["tuner"],
        "evaluated_on": where,
        "accuracy": {"per_fold": [acc], "mean": acc, "std": 0.0},
        "mean_loss": loss,
        "mean_entropy": ent,
        "final_rcb": model.rcb(fitted),
        "hyperparameters": hyperparameters(fitted),
    }
    if cfg["out"]["model"]:
        save_model(fitted, cfg["out"]["model"])
    if cfg["out"]["trace"] and trace is not None:
        trace.to_csv(cfg["out"]["trace"])
    _emit(_report("train", cfg, [result], t0), cfg["out"]["metrics"])
    return 0


def cmd_evaluate(cfg, model_path):
    t0 = time.perf_counter()
    fitted = load_model(model_path)
    dc = cfg["data"]
    ds = load_source(dc["path"], dc["format"], dc["label_col"], dc["labels"], dc["limit"])
    if fitted.class_names:
        ds = ds.remap(fitted.class_names)
    if fitted.scaling is not None:
        ds = Dataset(scale_inputs(ds.inputs, fitted.scaling), ds.labels, ds.num_classes, ds.class_names)
    acc, loss, ent = score(fitted, ds, float(cfg["train"]["epsilon"]))
    result = {
        "dataset": _dataset_name(dc),
        "tuner": "stored",
        "evaluated_on": "test",
        "accuracy": {"per_fold": [acc], "mean": acc, "std": 0.0},
        "mean_loss": loss,
        "mean_entropy": ent,
        "final_rcb": model.rcb(fitted),
        "hyperparameters": hyperparameters(fitted),
    }
    _emit(_report("evaluate", cfg, [result], t0), cfg["out"]["metrics"])
    return 0


def fold_seeds(seed, folds):
    """Independent per-fold seeds, fixed by the master seed alone."""
    children = np.random.SeedSequence(seed).spawn(folds)
    return [int(c.generate_state(1)[0]) for c in children]


def benchmark_dataset(cfg, data_cfg, rows):
    ds = load_source(data_cfg["path"], data_cfg.get("format", "csv"), data_cfg.get("label_col", "last"),
                     data_cfg.get("labels"), data_cfg.get("limit"))
    seed = int(cfg["train"]["seed"])
    k = int(cfg["folds"])
    plan = kfold_split(ds.n, k, seed)
    seeds = fold_seeds(seed, k)
    eps = float(cfg["train"]["epsilon"])
    name = data_cfg.get("name") or Path(str(data_cfg["path"])).stem
    scale = _wants_scaling({"scale": data_cfg.get("scale"), "format": data_cfg.get("format", "csv")})
    results = []
    for row in rows:
        accs, losses, rcbs = [], [], []
        for i in range(k):
            tr_idx, te_idx = plan.fold(i)
            tr, te = ds.subset(tr_idx), ds.subset(te_idx)
            if scale:
                sc = fit_unit_scaling(tr)
                tr, te = apply_scaling(tr, sc), apply_scaling(te, sc)
            tuner, batch = row, None
            if row == "rcb-sgd":
                tuner, batch = "rcb", max(1, int(round(tr.n / 10)))
            fitted, _ = tune(cfg, tuner, tr, batch_size=batch, seed=seeds[i])
            acc, loss, _ = score(fitted, te, eps)
            accs.append(acc)
            losses.append(loss)
            rcbs.append(model.rcb(fitted))
        results.append({
            "dataset": name,
            "tuner": row,
            "evaluated_on": "folds",
            "accuracy": {"per_fold": accs, "mean": float(np.mean(accs)), "std": _std(accs)},
            "mean_loss": float(np.mean(losses)),
            "final_rcb": float(np.mean(rcbs)),
        })
    return results


def cmd_benchmark(cfg):
    t0 = time.perf_counter()
    sources = list(cfg["datasets"])
    if cfg["data"]["path"] is not None:
        sources.append({k: cfg["data"][k] for k in ("path", "format", "label_col", "labels", "limit", "scale")})
    if not sources:
        raise UsageError("no datasets given (use --data or a config 'datasets' list)")
    rows = cfg["tuners"]
    if isinstance(rows, str):
        rows = _csv_words(rows)
    for r in rows:
        if r not in BENCHMARK_ROWS:
            raise UsageError(f"unknown benchmark row {r!r}; choose from {', '.join(BENCHMARK_ROWS)}")
    results = []
    for src in sources:
        results += benchmark_dataset(cfg, src, rows)
    if cfg["out"]["table"]:
        k = int(cfg["folds"])
        with open(cfg["out"]["table"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "tuner", "mean_accuracy", "std_accuracy", "mean_loss"]
                       + [f"fold_{i}" for i in range(k)])
            for r in results:
                a = r["accuracy"]
                w.writerow([r["dataset"], r["tuner"], repr(a["mean"]), repr(a["std"]), repr(r["mean_loss"])]
                           + [repr(v) for v in a["per_fold"]])
    _emit(_report("benchmark", cfg, results, t0), cfg["out"]["metrics"])
    return 0


def entropy_map_rows(fitted, grid=DEFAULT_GRID):
    """Grid rows ``(x1, x2, p~_1..p~_m, h~, h^)`` over model-space coordinates."""
    d = fitted.fmap.input_dim if isinstance(fitted, model.ExplicitFittedMCE) else fitted.X.shape[1]
    if d != 2:
        raise UsageError(f"entropy map needs a two-input model, this one has {d} inputs")
    x0, x1, y0, y1, nx, ny = grid
    gx = np.linspace(x0, x1, int(nx))
    gy = np.linspace(y0, y1, int(ny))
    xx, yy = np.meshgrid(gx, gy, indexing="ij")
    Q = np.column_stack([xx.ravel(), yy.ravel()])
    P = model.predict_proba(fitted, Q)
    Pt = model.clip_normalize(P)
    h_clip = model.clipnorm_entropy(P)
    h_emb = model.embedding_entropy(P)
    return np.column_stack([Q, Pt, h_clip, h_emb])


def cmd_entropy_map(model_path, grid, out):
    fitted = load_model(model_path)
    rows = entropy_map_rows(fitted, grid)
    m = rows.shape[1] - 4
    header = ["x1", "x2"] + [f"p_{c}" for c in range(m)] + ["h_clipnorm", "h_embedding"]
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
    finally:
        if out:
            fh.close()
    return 0


# ---------------------------------------------------------------- parser


def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config key")
    p.add_argument("--data", help="dataset path (csv file, idx file or idx directory)")
    p.add_argument("--format", choices=("csv", "idx"))
    p.add_argument("--label-col", dest="label_col", help="label column name, 'first', 'last' or index")
    p.add_argument("--labels", help="idx label file when --data is an idx image file")
    p.add_argument("--limit", type=int, help="use only the first N observations")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-metrics", dest="out_metrics")


def _add_training(p):
    p.add_argument("--kernel", choices=KERNELS)
    p.add_argument("--layers", type=_csv_ints, help="hidden sizes for linear-mlp, e.g. 16,32,8")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--validation-fraction", dest="validation_fraction", type=float)
    p.add_argument("--folds", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="mcembed", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn hyperparameters and save a model")
    _add_common(p)
    _add_training(p)
    p.add_argument("--tuner", choices=TUNERS)
    p.add_argument("--test-data", dest="test_data")
    p.add_argument("--test-labels", dest="test_labels")
    p.add_argument("--test-limit", dest="test_limit", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--out-model", dest="out_model")
    p.add_argument("--out-trace", dest="out_trace")

    p = sub.add_parser("evaluate", help="score a saved model on a dataset")
    p.add_argument("--model", required=True)
    _add_common(p)

    p = sub.add_parser("benchmark", help="k-fold comparison of tuners")
    _add_common(p)
    _add_training(p)
    p.add_argument("--tuners", type=_csv_words, help=f"comma list from {','.join(BENCHMARK_ROWS)}")
    p.add_argument("--out-table", dest="out_table", help="CSV summary table")

    p = sub.add_parser("entropy-map", help="probability and entropy grid for a two-input model")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", type=float, nargs=6, metavar=("X0", "X1", "Y0", "Y1", "NX", "NY"),
                   default=list(DEFAULT_GRID))
    p.add_argument("--out", help="output CSV (stdout if omitted)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "entropy-map":
            return cmd_entropy_map(args.model, args.grid, args.out)
        cfg = build_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.model)
        return cmd_benchmark(cfg)
    except (UsageError, DataError, ModelFileError, FileNotFoundError, ValueError,
            SingularMatrixError, DivergenceError) as exc:
        print(f"mcembed: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
