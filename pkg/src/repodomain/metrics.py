"""Classification metrics: confusion matrices, macro P/R/F1, one-vs-rest ROC-AUC, ZeroR."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyMatrix


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    classes: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.classes)
        if counts.shape != (k, k):
            raise ValueError(f"counts must be {k}x{k}, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion counts must be nonnegative")
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_predictions(
        cls, y_true: Sequence, y_pred: Sequence, classes: Sequence | None = None
    ) -> "ConfusionMatrix":
        if len(y_true) != len(y_pred):
            raise ValueError("y_true and y_pred differ in length")
        if classes is None:
            classes = sorted(set(y_true) | set(y_pred))
        index = {c: i for i, c in enumerate(classes)}
        counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
        for t, p in zip(y_true, y_pred):
            counts[index[t], index[p]] += 1
        return cls(tuple(classes), counts)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\predicted", *self.classes])
        for c, row in zip(self.classes, self.counts):
            w.writerow([c, *row.tolist()])
        return buf.getvalue()

    def to_text(self) -> str:
        width = max(8, *(len(c) for c in self.classes)) + 1
        lines = [" " * width + "".join(f"{c[:10]:>11}" for c in self.classes)]
        for c, row in zip(self.classes, self.counts):
            lines.append(f"{c:<{width}}" + "".join(f"{v:>11}" for v in row))
        return "\n".join(lines)


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    classes: tuple[str, ...]
    per_class: dict[str, ClassMetrics]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    accuracy: float
    roc_auc_ovr: float | None = None
    zero_r_accuracy: float | None = None
    flags: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    confusion: ConfusionMatrix | None = None

    def scalar_metrics(self) -> dict[str, float]:
        out = {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
        }
        if self.roc_auc_ovr is not None:
            out["roc_auc_ovr"] = self.roc_auc_ovr
        if self.zero_r_accuracy is not None:
            out["zero_r_accuracy"] = self.zero_r_accuracy
        return out

    def to_csv(self) -> str:
        """``metric,class,value`` rows; macro and overall values use class ``all``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "class", "value"])
        for c in self.classes:
            m = self.per_class[c]
            w.writerow(["precision", c, repr(m.precision)])
            w.writerow(["recall", c, repr(m.recall)])
            w.writerow(["f1", c, repr(m.f1)])
            w.writerow(["support", c, m.support])
        for name, value in self.scalar_metrics().items():
            w.writerow([name, "all", repr(value)])
        return buf.getvalue()

    def to_text(self) -> str:
        width = max(14, *(len(c) for c in self.classes)) + 2
        lines = [f"{'class':<{width}}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>9}"]
        for c in self.classes:
            m = self.per_class[c]
            lines.append(f"{c:<{width}}{m.precision:>10.3f}{m.recall:>10.3f}{m.f1:>10.3f}{m.support:>9}")
        lines.append("")
        for name, value in self.scalar_metrics().items():
            lines.append(f"{name:<{width}}{value:>10.4f}")
        for flag in self.flags:
            lines.append(f"note: {flag}")
        return "\n".join(lines)


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def metrics_from_confusion(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total == 0 or not cm.classes:
        raise EmptyMatrix("confusion matrix is empty")
    counts = cm.counts
    col = counts.sum(axis=0)
    row = counts.sum(axis=1)
    per_class, flags = {}, []
    for k, c in enumerate(cm.classes):
        tp = counts[k, k]
        if col[k] == 0:
            precision = 0.0
            flags.append(f"precision undefined for {c} (never predicted); set to 0")
        else:
            precision = tp / col[k]
        if row[k] == 0:
            recall = 0.0
            flags.append(f"recall undefined for {c} (no true samples); set to 0")
        else:
            recall = tp / row[k]
        per_class[c] = ClassMetrics(float(precision), float(recall), _f1(precision, recall), int(row[k]))
    values = list(per_class.values())
    return MetricsReport(
        classes=cm.classes,
        per_class=per_class,
        macro_precision=float(np.mean([m.precision for m in values])),
        macro_recall=float(np.mean([m.recall for m in values])),
        macro_f1=float(np.mean([m.f1 for m in values])),
        accuracy=float(np.trace(counts) / cm.total),
        flags=flags,
        confusion=cm,
    )


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def binary_auc(positive: np.ndarray, scores: np.ndarray) -> float:
    """AUC via the rank-sum statistic; tied scores share mid-ranks."""
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative samples")
    ranks = _midranks(np.asarray(scores, dtype=np.float64))
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc_ovr(
    labels: Sequence, scores: np.ndarray, classes: Sequence | None = None, flags: list | None = None
) -> float:
    """Macro mean of one-vs-rest AUCs.

    Column k of ``scores`` belongs to ``classes[k]``.  Classes lacking
    positives or negatives are skipped (and noted in ``flags`` when given).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=object)
    if classes is None:
        classes = sorted(set(labels.tolist()))
    if scores.shape != (len(labels), len(classes)):
        raise ValueError(f"scores shape {scores.shape} does not match ({len(labels)}, {len(classes)})")
    aucs = []
    for k, c in enumerate(classes):
        pos = labels == c
        if pos.all() or not pos.any():
            if flags is not None:
                flags.append(f"ROC-AUC skipped for {c}: needs positives and negatives")
            continue
        aucs.append(binary_auc(pos, scores[:, k]))
    if not aucs:
        raise ValueError("no class has both positive and negative samples")
    return float(np.mean(aucs))


def zero_r(train_labels: Sequence, test_labels: Sequence) -> float:
    """Accuracy of always predicting the most frequent training label (ties: smallest label)."""
    if not train_labels or not test_labels:
        raise ValueError("ZeroR needs nonempty training and test labels")
    counts = Counter(train_labels)
    best = max(counts.values())
    mode = min(l for l, c in counts.items() if c == best)
    return sum(1 for l in test_labels if l == mode) / len(test_labels)


def zero_r_from_counts(counts: dict) -> float:
    """ZeroR accuracy when training and test share one class distribution."""
    total = sum(counts.values())
    return max(counts.values()) / total


def build_report(
    y_true: Sequence,
    y_pred: Sequence,
    classes: Sequence,
    proba: np.ndarray | None = None,
    train_labels: Sequence | None = None,
    provenance: dict | None = None,
) -> MetricsReport:
    report = metrics_from_confusion(ConfusionMatrix.from_predictions(y_true, y_pred, classes))
    if proba is not None:
        try:
            report.roc_auc_ovr = roc_auc_ovr(y_true, proba, classes, report.flags)
        except ValueError as exc:
            report.flags.append(f"ROC-AUC unavailable: {exc}")
    if train_labels is not None:
        report.zero_r_accuracy = zero_r(list(train_labels), list(y_true))
    report.provenance = dict(provenance or {})
    return report
