"""Classification metrics and the class-mean engagement timeline."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..errors import EmptyInput, LengthMismatch
from ..features import DISENGAGED, ENGAGED

CLASSES = (DISENGAGED, ENGAGED)


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class Metrics:
    classes: tuple[str, ...]
    confusion: np.ndarray          # rows: true class, columns: predicted class
    per_class: dict[str, ClassScores]
    weighted: dict[str, float]
    accuracy: float

    def report(self) -> dict:
        """Table-style dict: recall/precision/f1 per class and the weighted average."""
        out = {c: {"recall": s.recall, "precision": s.precision, "f1": s.f1, "support": s.support}
               for c, s in self.per_class.items()}
        out["weighted_avg"] = dict(self.weighted)
        out["accuracy"] = self.accuracy
        out["confusion"] = {"classes": list(self.classes), "counts": self.confusion.tolist()}
        return out


def compute_metrics(predictions: Sequence, labels: Sequence, supports=None,
                    classes: Sequence = CLASSES) -> Metrics:
    """Confusion-derived precision, recall and F1 per class.

    The weighted averages use ``supports`` when given (a mapping or a
    sequence aligned with ``classes``), otherwise the true-class counts.
    """
    predictions, labels = list(predictions), list(labels)
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(labels)} labels")
    if not labels:
        raise EmptyInput("no samples")
    classes = tuple(classes)
    index = {c: k for k, c in enumerate(classes)}
    conf = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(predictions, labels):
        conf[index[t], index[p]] += 1

    per_class = {}
    for k, c in enumerate(classes):
        tp = conf[k, k]
        pred_k, true_k = conf[:, k].sum(), conf[k, :].sum()
        precision = tp / pred_k if pred_k else 0.0
        recall = tp / true_k if true_k else 0.0
        per_class[c] = ClassScores(float(precision), float(recall), _f1(precision, recall), int(true_k))

    if supports is None:
        w = np.array([per_class[c].support for c in classes], dtype=np.float64)
    elif isinstance(supports, Mapping):
        w = np.array([supports[c] for c in classes], dtype=np.float64)
    else:
        w = np.asarray(supports, dtype=np.float64)
    w = w / w.sum()
    weighted = {m: float(sum(w[k] * getattr(per_class[c], m) for k, c in enumerate(classes)))
                for m in ("recall", "precision", "f1")}
    accuracy = float(np.trace(conf) / conf.sum())
    return Metrics(classes, conf, per_class, weighted, accuracy)


def action_metrics(predictions: Sequence[int], labels: Sequence[int], num_classes: int = 13) -> dict:
    """Top-1 accuracy, mean per-class accuracy (mean recall over present classes) and confusion."""
    p = np.asarray(predictions, dtype=np.int64)
    t = np.asarray(labels, dtype=np.int64)
    if len(p) != len(t):
        raise LengthMismatch(f"{len(p)} predictions vs {len(t)} labels")
    if len(t) == 0:
        raise EmptyInput("no samples")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (t, p), 1)
    support = conf.sum(axis=1)
    present = support > 0
    recalls = np.diag(conf)[present] / support[present]
    return {
        "top1_accuracy": float(np.mean(p == t)),
        "mean_class_accuracy": float(recalls.mean()),
        "per_class_accuracy": {int(k): float(conf[k, k] / support[k]) for k in np.flatnonzero(present)},
        "confusion": conf.tolist(),
        "samples": int(len(t)),
    }


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    """Pearson correlation; identical series give 1, otherwise a constant series gives nan."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) != len(b):
        raise LengthMismatch("series differ in length")
    if np.array_equal(a, b):
        return 1.0
    da, db = a - a.mean(), b - b.mean()
    denom = np.sqrt((da ** 2).sum() * (db ** 2).sum())
    return float((da * db).sum() / denom) if denom > 0 else float("nan")


@dataclass
class Timeline:
    rows: list[tuple[int, float, float | None]]
    correlation: float | None


def mean_engagement_timeline(predicted: Mapping[int, Sequence[int]],
                             reference: Mapping[int, Sequence[int]] | None = None) -> Timeline:
    """Per-window class mean of engagement (1 engaged, 0 disengaged).

    ``predicted`` maps a window id to the predictions of the students present
    in it; ``reference`` likewise for ground truth. The correlation between
    the two mean series is reported when references are given.
    """
    if not predicted or not any(len(v) for v in predicted.values()):
        raise EmptyInput("no predictions")
    rows = []
    for wid in sorted(predicted):
        vals = predicted[wid]
        if not len(vals):
            continue
        ref = None
        if reference is not None and len(reference.get(wid, ())):
            ref = float(np.mean(reference[wid]))
        rows.append((wid, float(np.mean(vals)), ref))
    corr = None
    if reference is not None:
        pairs = [(p, r) for _, p, r in rows if r is not None]
        if len(pairs) >= 2:
            corr = pearson([p for p, _ in pairs], [r for _, r in pairs])
    return Timeline(rows, corr)
