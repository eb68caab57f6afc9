"""Frozen-feature probes: grid search, early stopping, test evaluation of the winner."""
import csv
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, field

import numpy as np

from maskclr import autodiff as ad, metrics as M
from maskclr.errors import TaskError
from maskclr.optim import AdamState, adam_step

log = logging.getLogger(__name__)

KINDS = ("multilabel", "multiclass", "key", "regression")
GRID_AXES = (
    ("standardize", (False, True)),
    ("model", ("linear", "mlp-512")),
    ("batch", (64, 256)),
    ("lr", (1e-5, 1e-4, 1e-3)),
    ("dropout", (0.25, 0.5, 0.75)),
    ("l2", (0.0, 1e-4, 1e-3)),
)


@dataclass(frozen=True)
class ProbeConfig:
    standardize: bool = False
    model: str = "linear"
    batch: int = 64
    lr: float = 1e-5
    dropout: float = 0.25
    l2: float = 0.0


def enumerate_grid():
    """All 216 configurations, first axis slowest."""
    return [ProbeConfig(*combo) for combo in itertools.product(*(vals for _, vals in GRID_AXES))]


def quick_grid():
    return [ProbeConfig(True, "linear", 64, 1e-3, 0.25, 0.0), ProbeConfig(True, "mlp-512", 64, 1e-3, 0.25, 0.0)]


@dataclass
class Task:
    kind: str
    features: np.ndarray
    labels: np.ndarray
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    n_outputs: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TaskError(f"unknown task kind {self.kind!r}")
        self.features = np.asarray(self.features, dtype=np.float32)
        n = len(self.features)
        splits = [np.asarray(s, dtype=np.int64) for s in (self.train, self.valid, self.test)]
        self.train, self.valid, self.test = splits
        for name, s in zip(("train", "valid", "test"), splits):
            if s.size == 0:
                raise TaskError(f"{name} split is empty")
            if s.min() < 0 or s.max() >= n:
                raise TaskError(f"{name} split indexes outside 0..{n - 1}")
            if len(np.unique(s)) != len(s):
                raise TaskError(f"{name} split repeats an index")
        if (np.intersect1d(splits[0], splits[1]).size or np.intersect1d(splits[0], splits[2]).size
                or np.intersect1d(splits[1], splits[2]).size):
            raise TaskError("train/valid/test splits overlap")
        labels = np.asarray(self.labels)
        if len(labels) != n:
            raise TaskError(f"{len(labels)} labels for {n} feature rows")
        if self.kind in ("multiclass", "key"):
            if labels.ndim != 1:
                raise TaskError(f"{self.kind} labels must be a vector of class ids")
            labels = labels.astype(np.int64)
            self.n_outputs = 24 if self.kind == "key" else int(labels.max()) + 1
        elif self.kind == "multilabel":
            if labels.ndim != 2:
                raise TaskError("multilabel labels must be an (N, tags) 0/1 matrix")
            self.n_outputs = labels.shape[1]
        else:
            labels = labels.astype(np.float64)
            self.n_outputs = 1 if labels.ndim == 1 else labels.shape[1]
        self.labels = labels

    def split_features(self, split):
        return self.features[getattr(self, split)]

    def split_labels(self, split):
        return self.labels[getattr(self, split)]


@dataclass
class ProbeCell:
    index: int
    config: ProbeConfig
    valid_metric: float
    valid_metrics: dict
    best_epoch: int
    weights: dict = field(repr=False)
    mean: np.ndarray = field(repr=False)
    std: np.ndarray = field(repr=False)

    def predict(self, features):
        x = (np.asarray(features, dtype=np.float32) - self.mean) / self.std
        return _forward(self.weights, ad.Tensor(x), self.config, None, training=False).data


@dataclass
class ProbeResult:
    best: ProbeCell
    test_metrics: dict
    cells: list
    representation: str = ""

    @property
    def best_config(self):
        return self.best.config


def _init_weights(cfg, d_in, d_out, rng):
    def lin(a, b):
        bound = np.sqrt(6.0 / (a + b))
        return rng.uniform(-bound, bound, size=(a, b))

    if cfg.model == "linear":
        w = {"w": lin(d_in, d_out), "b": np.zeros(d_out)}
    elif cfg.model == "mlp-512":
        w = {"w1": lin(d_in, 512), "b1": np.zeros(512), "w": lin(512, d_out), "b": np.zeros(d_out)}
    else:
        raise TaskError(f"unknown probe model {cfg.model!r}")
    return {k: ad.parameter(v, k) for k, v in w.items()}


def _forward(weights, x, cfg, rng, training):
    if cfg.model == "mlp-512":
        x = ad.relu(ad.add(ad.matmul(x, weights["w1"]), weights["b1"]))
    x = ad.dropout(x, cfg.dropout, rng, training)
    return ad.add(ad.matmul(x, weights["w"]), weights["b"])


def _loss(kind, out, y):
    if kind in ("multiclass", "key"):
        return ad.cross_entropy_logits(out, y)
    if kind == "multilabel":
        return ad.binary_cross_entropy_logits(out, y)
    return ad.mse(out, y.reshape(out.shape))


def _check_trainable(task):
    y = task.split_labels("train")
    if task.kind in ("multiclass", "key") and len(np.unique(y)) < 2:
        raise TaskError("training split contains a single class")
    if task.kind == "multilabel" and np.all(y == y[:1]):
        raise TaskError("training split has identical tag vectors for every item")
    if task.kind == "regression" and np.all(y == y[:1]):
        raise TaskError("training targets are constant")


def train_probe(task, cfg, seed=0, max_epochs=200, patience=10, index=0):
    """Fit one grid cell with Adam; early-stops on the validation metric and keeps the best epoch.

    Only the train and valid splits are read.
    """
    _check_trainable(task)
    rng = np.random.default_rng(seed)
    x_tr = task.split_features("train")
    y_tr = task.split_labels("train")
    x_va = task.split_features("valid")
    y_va = task.split_labels("valid")
    if cfg.standardize:
        mean = x_tr.mean(axis=0)
        std = np.maximum(x_tr.std(axis=0), 1e-6)
    else:
        mean = np.zeros(x_tr.shape[1], dtype=np.float32)
        std = np.ones(x_tr.shape[1], dtype=np.float32)
    mean, std = mean.astype(np.float32), std.astype(np.float32)
    x_tr = (x_tr - mean) / std
    x_va_t = ad.Tensor((x_va - mean) / std)
    weights = _init_weights(cfg, x_tr.shape[1], task.n_outputs, rng)
    opt = AdamState()
    if task.kind == "multilabel":
        y_tr = y_tr.astype(np.float64)

    best, best_epoch, best_w, best_map, stale = -np.inf, 0, None, {}, 0
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(len(x_tr))
        for s in range(0, len(order), cfg.batch):
            idx = order[s:s + cfg.batch]
            for t in weights.values():
                t.grad = None
            out = _forward(weights, ad.Tensor(x_tr[idx]), cfg, rng, training=True)
            loss = _loss(task.kind, out, y_tr[idx])
            if cfg.l2:
                reg = [ad.sum_all(ad.mul(t, t)) for k, t in weights.items() if k.startswith("w")]
                loss = ad.add(loss, ad.scale(reg[0] if len(reg) == 1 else ad.add(reg[0], reg[1]), cfg.l2))
            ad.backward(loss)
            adam_step(weights, opt, cfg.lr)
        pred = _forward(weights, x_va_t, cfg, None, training=False).data
        mm = M.metrics(task.kind, pred, y_va)
        score = M.primary_metric(task.kind, mm)
        if np.isnan(score):
            score = -np.inf
        if score > best or best_w is None:
            best, best_epoch, best_map, stale = score, epoch, mm, 0
            best_w = {k: t.data.copy() for k, t in weights.items()}
        else:
            stale += 1
            if stale >= patience:
                break
    final = {k: ad.Tensor(v) for k, v in best_w.items()}
    return ProbeCell(index, cfg, float(best), best_map, best_epoch, final, mean, std)


def select_best(valid_metrics):
    """Index of the highest validation score; ties go to the earliest cell."""
    return int(np.argmax(np.asarray(valid_metrics, dtype=np.float64)))


def run_grid(task, configs=None, seed=0, max_epochs=200, patience=10, workers=1):
    """Train every cell, pick the winner on validation only, then score it on test."""
    configs = enumerate_grid() if configs is None else list(configs)

    def fit(item):
        i, cfg = item
        return train_probe(task, cfg, seed=seed + i, max_epochs=max_epochs, patience=patience, index=i)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            cells = list(pool.map(fit, enumerate(configs)))
    else:
        cells = [fit(item) for item in enumerate(configs)]
    winner = cells[select_best([c.valid_metric for c in cells])]
    test = M.metrics(task.kind, winner.predict(task.split_features("test")), task.split_labels("test"))
    return ProbeResult(winner, test, cells)


def run_grid_views(tasks, **kw):
    """Best representation by validation among ``{name: Task}``; test metrics for it alone."""
    results = {name: run_grid(task, **kw) for name, task in tasks.items()}
    names = list(results)
    pick = names[select_best([results[n].best.valid_metric for n in names])]
    out = results[pick]
    out.representation = pick
    return out


def write_results(path, result):
    """One row per cell; test columns are filled for the winner only."""
    test_keys = sorted(result.test_metrics)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config_id", "standardize", "model", "batch", "lr", "dropout", "l2", "valid_metric"]
                   + [f"test_{k}" for k in test_keys])
        for cell in result.cells:
            std, model, batch, lr, drop, l2 = astuple(cell.config)
            row = [cell.index, "on" if std else "off", model, batch, lr, drop, l2, f"{cell.valid_metric:.6f}"]
            if cell.index == result.best.index:
                row += [f"{result.test_metrics[k]:.6f}" for k in test_keys]
            else:
                row += [""] * len(test_keys)
            w.writerow(row)
