"""Downstream task metrics: ROC-AUC / AP for tagging, accuracy, weighted key score, R^2."""
import logging

import numpy as np

from maskclr.errors import ShapeError

log = logging.getLogger(__name__)

KEY_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")


def _average_ranks(x):
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x), dtype=np.float64)
    bounds = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [len(x)]])
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + e - 1) + 1.0
    return ranks


def roc_auc(y_true, scores):
    """Mann-Whitney AUC with tied scores counted as half; NaN when only one class is present."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = _average_ranks(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(y_true, scores):
    """Sum over distinct thresholds of (recall increase) x precision; NaN without positives."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    if n_pos == 0:
        return float("nan")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[last]
    precision = tp / (last + 1.0)
    recall_gain = np.diff(np.r_[0, tp]) / n_pos
    return float(np.sum(recall_gain * precision))


def macro_tagging(labels, scores):
    """Macro AUC and AP over tag columns; single-class columns are skipped."""
    labels = np.asarray(labels)
    scores = np.asarray(scores)
    if labels.shape != scores.shape or labels.ndim != 2:
        raise ShapeError(f"tagging labels {labels.shape} vs scores {scores.shape}")
    aucs, aps = [], []
    for j in range(labels.shape[1]):
        col = labels[:, j].astype(bool)
        if col.all() or not col.any():
            log.info("tag %d has a single class; excluded from macro average", j)
            continue
        aucs.append(roc_auc(col, scores[:, j]))
        aps.append(average_precision(col, scores[:, j]))
    if not aucs:
        return {"auc": float("nan"), "ap": float("nan")}
    return {"auc": float(np.mean(aucs)), "ap": float(np.mean(aps))}


def key_weight(pred, true):
    """Weighted credit for one key guess; keys 0-11 are major (C..B), 12-23 minor."""
    pt, pm = pred % 12, pred // 12
    tt, tm = true % 12, true // 12
    if pred == true:
        return 1.0
    if pm == tm and pt == (tt + 7) % 12:
        return 0.5
    if pm != tm:
        relative = (tt + 9) % 12 if tm == 0 else (tt + 3) % 12
        if pt == relative:
            return 0.3
        if pt == tt:
            return 0.2
    return 0.0


def key_score(pred, true):
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    return float(np.mean([key_weight(p, t) for p, t in zip(pred, true)]))


def r2_score(y_true, y_pred):
    """Coefficient of determination; a constant target scores 1 if matched exactly, else 0."""
    y = np.asarray(y_true, dtype=np.float64)
    p = np.asarray(y_pred, dtype=np.float64)
    ss_res = np.sum((y - p) ** 2)
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return float(1.0 - ss_res / ss_tot)


def _class_ids(predictions):
    p = np.asarray(predictions)
    return p.argmax(axis=1) if p.ndim == 2 else p.astype(np.int64)


def metrics(kind, predictions, labels):
    """Metric map for one task kind.

    ``predictions`` are scores/logits (N, C) or class ids (N,) for
    ``multiclass`` and ``key``, tag scores (N, T) for ``multilabel`` and values
    (N,) or (N, t) for ``regression``.
    """
    if kind == "multilabel":
        return macro_tagging(labels, predictions)
    if kind == "multiclass":
        ids = _class_ids(predictions)
        return {"accuracy": float(np.mean(ids == np.asarray(labels)))}
    if kind == "key":
        return {"key_score": key_score(_class_ids(predictions), labels)}
    if kind == "regression":
        y = np.asarray(labels, dtype=np.float64)
        p = np.asarray(predictions, dtype=np.float64).reshape(y.shape)
        if y.ndim == 1:
            return {"r2": r2_score(y, p)}
        per = [r2_score(y[:, j], p[:, j]) for j in range(y.shape[1])]
        out = {f"r2_{j}": v for j, v in enumerate(per)}
        out["r2"] = float(np.mean(per))
        return out
    raise ValueError(f"unknown task kind {kind!r}")


PRIMARY = {"multilabel": "auc", "multiclass": "accuracy", "key": "key_score", "regression": "r2"}


def primary_metric(kind, metric_map):
    return metric_map[PRIMARY[kind]]
