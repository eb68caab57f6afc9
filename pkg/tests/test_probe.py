import csv

import numpy as np
import pytest
from scipy import stats

from maskclr import metrics as M, probe
from maskclr.errors import TaskError
from maskclr.probe import ProbeConfig, Task

FAST = ProbeConfig(True, "linear", 64, 1e-2, 0.25, 0.0)


def separable(n=800, d=6, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.standard_normal((n, d))
    x[:, 0] = np.where(y == 1, 1.0, -1.0) * rng.uniform(2.0, 5.0, n)
    idx = rng.permutation(n)
    return Task("multiclass", x, y, idx[:500], idx[500:650], idx[650:])


class SpyTask(Task):
    """Records the order in which splits and selection are touched."""

    def __post_init__(self):
        super().__post_init__()
        self.events = []

    def split_labels(self, split):
        self.events.append(("labels", split))
        return super().split_labels(split)

    def split_features(self, split):
        self.events.append(("features", split))
        return super().split_features(split)


def test_grid_size_order_and_uniqueness():
    grid = probe.enumerate_grid()
    assert len(grid) == 216 == len(set(grid))
    assert grid[0] == ProbeConfig(False, "linear", 64, 1e-5, 0.25, 0.0)
    assert grid[-1] == ProbeConfig(True, "mlp-512", 256, 1e-3, 0.75, 1e-3)
    assert grid[1].l2 == 1e-4  # last axis fastest


def test_tie_break_prefers_first():
    assert probe.select_best([0.5, 0.9, 0.9, 0.1]) == 1


def test_separable_task_perfect():
    result = probe.run_grid(separable(), [FAST], max_epochs=60)
    assert result.best.valid_metric == 1.0
    assert result.test_metrics["accuracy"] == 1.0


def test_test_split_untouched_until_selection(monkeypatch):
    t = separable()
    spy = SpyTask(t.kind, t.features, t.labels, t.train, t.valid, t.test)
    real = probe.select_best

    def tracked(values):
        spy.events.append(("select", None))
        return real(values)

    monkeypatch.setattr(probe, "select_best", tracked)
    probe.run_grid(spy, [FAST, ProbeConfig(False, "linear", 64, 1e-3, 0.5, 1e-4)], max_epochs=20)
    first_test = min(i for i, e in enumerate(spy.events) if e[1] == "test")
    assert spy.events.index(("select", None)) < first_test


def test_single_cell_grid_reports_that_cell():
    t = separable(seed=4)
    result = probe.run_grid(t, [FAST], max_epochs=30)
    cell = result.cells[0]
    assert result.test_metrics == M.metrics("multiclass", cell.predict(t.split_features("test")),
                                            t.split_labels("test"))


def test_random_labels_near_chance():
    rng = np.random.default_rng(5)
    n = 1200
    x = rng.standard_normal((n, 8))
    y = rng.integers(0, 4, n)
    task = Task("multiclass", x, y, np.arange(600), np.arange(600, 800), np.arange(800, n))
    acc = probe.run_grid(task, [FAST], max_epochs=30).test_metrics["accuracy"]
    lo, hi = stats.binom.interval(0.999, 400, 0.25)
    assert lo / 400 <= acc <= hi / 400


def test_regression_realizable():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((1000, 5))
    w = rng.standard_normal((5, 2))
    task = Task("regression", x, x @ w, np.arange(800), np.arange(800, 900), np.arange(900, 1000))
    # input dropout acts like a ridge penalty on a linear probe, so the exactness check runs without it
    res = probe.run_grid(task, [ProbeConfig(False, "linear", 64, 1e-2, 0.0, 0.0)], max_epochs=200)
    assert res.test_metrics["r2"] > 0.99


def test_multilabel_and_key_tasks_run():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((800, 6))
    tags = (x[:, :3] > 0).astype(int)
    splits = (np.arange(500), np.arange(500, 650), np.arange(650, 800))
    res = probe.run_grid(Task("multilabel", x, tags, *splits), [FAST], max_epochs=40)
    assert res.test_metrics["auc"] > 0.9
    keys = (x[:, 0] > 0).astype(int) * 7
    res = probe.run_grid(Task("key", x, keys, *splits), [FAST], max_epochs=40)
    assert res.test_metrics["key_score"] > 0.8


def test_early_stopping_keeps_best_epoch():
    cell = probe.train_probe(separable(), FAST, max_epochs=200, patience=3)
    assert cell.best_epoch < 200
    assert cell.valid_metric == 1.0


@pytest.mark.parametrize("bad", [
    dict(valid=np.arange(55, 90)),          # overlaps train
    dict(test=np.array([], dtype=int)),     # empty
    dict(test=np.array([900])),             # out of range
])
def test_bad_splits(bad):
    t = separable()
    kw = dict(train=np.arange(60), valid=np.arange(60, 90), test=np.arange(90, 120))
    kw.update(bad)
    with pytest.raises(TaskError):
        Task("multiclass", t.features, t.labels, **kw)


def test_single_class_train_rejected():
    x = np.zeros((10, 2))
    y = np.array([0] * 5 + [1] * 5)
    with pytest.raises(TaskError):
        probe.train_probe(Task("multiclass", x, y, np.arange(4), [5, 6], [7, 8]), FAST)


def test_results_csv(tmp_path):
    result = probe.run_grid(separable(), [FAST, ProbeConfig(False, "mlp-512", 64, 1e-3, 0.5, 1e-4)], max_epochs=10)
    probe.write_results(tmp_path / "r.csv", result)
    rows = list(csv.reader((tmp_path / "r.csv").open()))
    assert rows[0][:8] == ["config_id", "standardize", "model", "batch", "lr", "dropout", "l2", "valid_metric"]
    assert rows[0][8:] == ["test_accuracy"]
    filled = [r for r in rows[1:] if r[8]]
    assert len(filled) == 1 and int(filled[0][0]) == result.best.index


def test_parallel_grid_matches_serial():
    t = separable(seed=2)
    grid = [FAST, ProbeConfig(False, "linear", 64, 1e-3, 0.5, 1e-4)]
    a = probe.run_grid(t, grid, max_epochs=10)
    b = probe.run_grid(t, grid, max_epochs=10, workers=2)
    assert [c.valid_metric for c in a.cells] == [c.valid_metric for c in b.cells]
