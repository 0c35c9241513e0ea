"""Confusion-matrix based classification metrics.

Conventions: precision (recall) of a class with no predicted (true)
windows is reported as 0 and the class is listed in
``degenerate_classes``. Macro averages run over all classes, weighted
averages use class support fractions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, LabelError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [C,C] int64, rows = true class, columns = predicted

    @classmethod
    def from_predictions(cls, y_true, y_pred, num_classes):
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape:
            raise ContractError(
                f"confusion matrix: {y_true.shape} true vs {y_pred.shape} predicted"
            )
        for name, arr in (("true", y_true), ("predicted", y_pred)):
            bad = np.flatnonzero((arr < 0) | (arr >= num_classes))
            if bad.size:
                i = int(bad[0])
                raise LabelError(
                    f"{name} label {int(arr[i])} at index {i} outside [0, {num_classes})"
                )
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts)

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def num_classes(self):
        return self.counts.shape[0]

    def to_csv(self):
        lines = [",".join(str(v) for v in row) for row in self.counts]
        return "\n".join(lines) + "\n"


@dataclass
class MetricsReport:
    accuracy: float
    precision: np.ndarray        # per class
    recall: np.ndarray
    f1: np.ndarray
    f1_macro: float
    f1_weighted: float
    precision_macro: float
    recall_macro: float
    class_weights: np.ndarray    # support fractions, sum to 1
    degenerate_classes: tuple    # classes with undefined precision or recall

    def as_dict(self):
        return {
            "accuracy": self.accuracy,
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "f1_macro": self.f1_macro,
            "f1_weighted": self.f1_weighted,
            "precision_macro": self.precision_macro,
            "recall_macro": self.recall_macro,
            "class_weights": self.class_weights.tolist(),
            "degenerate_classes": list(self.degenerate_classes),
        }


def _safe_div(num, den):
    out = np.zeros_like(num, dtype=np.float64)
    mask = den > 0
    out[mask] = num[mask] / den[mask]
    return out


def metrics_from_confusion(cm):
    counts = cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm, dtype=np.int64)
    total = counts.sum()
    if total == 0:
        raise ContractError("metrics_from_confusion: empty confusion matrix")
    tp = np.diagonal(counts).astype(np.float64)
    support = counts.sum(axis=1).astype(np.float64)
    predicted = counts.sum(axis=0).astype(np.float64)

    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, support)
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    weights = support / total
    degenerate = tuple(int(i) for i in np.flatnonzero((predicted == 0) | (support == 0)))

    return MetricsReport(
        accuracy=float(tp.sum() / total),
        precision=precision,
        recall=recall,
        f1=f1,
        f1_macro=float(f1.mean()),
        f1_weighted=float((weights * f1).sum()),
        precision_macro=float(precision.mean()),
        recall_macro=float(recall.mean()),
        class_weights=weights,
        degenerate_classes=degenerate,
    )


def format_report(report, class_names=None):
    """Human-readable summary table."""
    c = len(report.precision)
    names = class_names or [str(i) for i in range(c)]
    width = max(5, max(len(n) for n in names))
    lines = [
        f"accuracy     {report.accuracy:.4f}",
        f"f1_macro     {report.f1_macro:.4f}",
        f"f1_weighted  {report.f1_weighted:.4f}",
        "",
        f"{'class':>{width}}  {'precision':>9}  {'recall':>9}  {'f1':>9}  {'weight':>7}",
    ]
    for i in range(c):
        flag = " *" if i in report.degenerate_classes else ""
        lines.append(
            f"{names[i]:>{width}}  {report.precision[i]:9.4f}  {report.recall[i]:9.4f}"
            f"  {report.f1[i]:9.4f}  {report.class_weights[i]:7.4f}{flag}"
        )
    if report.degenerate_classes:
        lines.append("* precision/recall undefined (no predictions or no support); reported as 0")
    return "\n".join(lines)
