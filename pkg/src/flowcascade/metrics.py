"""Per-class precision/recall/F1, aggregates, and confusion matrices."""

from dataclasses import dataclass

import numpy as np


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class Metrics:
    per_class: dict  # class name -> ClassMetrics
    weighted_f1: float
    macro_f1: float

    @property
    def total_support(self) -> int:
        return sum(m.support for m in self.per_class.values())

    def to_dict(self) -> dict:
        return {
            "weighted_f1": self.weighted_f1,
            "macro_f1": self.macro_f1,
            "per_class": {
                c: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                }
                for c, m in self.per_class.items()
            },
        }


@dataclass
class ConfusionMatrix:
    classes: list
    counts: np.ndarray  # (true, predicted)

    @classmethod
    def from_labels(cls, true_labels, predicted_labels, classes) -> "ConfusionMatrix":
        classes = list(classes)
        index = {c: i for i, c in enumerate(classes)}
        counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
        for t, p in zip(true_labels, predicted_labels):
            counts[index[t], index[p]] += 1
        return cls(classes=classes, counts=counts)

    def support(self, cls_name) -> int:
        return int(self.counts[self.classes.index(cls_name)].sum())

    def to_dict(self) -> dict:
        return {"classes": self.classes, "counts": self.counts.tolist()}


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def compute_metrics(true_labels, predicted_labels, class_list) -> Metrics:
    """One-vs-rest precision/recall/F1 per class plus support-weighted and
    macro averages. Zero denominators yield 0 rather than NaN."""
    true_labels = list(true_labels)
    predicted_labels = list(predicted_labels)
    if len(true_labels) != len(predicted_labels):
        raise ValueError("label sequences differ in length")
    if not true_labels:
        raise ValueError("cannot compute metrics on empty input")
    classes = list(class_list)
    known = set(classes)
    for lab in true_labels:
        if lab not in known:
            raise ValueError(f"unknown true label {lab!r}")
    for lab in predicted_labels:
        if lab not in known:
            raise ValueError(f"unknown predicted label {lab!r}")

    cm = ConfusionMatrix.from_labels(true_labels, predicted_labels, classes)
    per_class = {}
    for i, c in enumerate(classes):
        tp = int(cm.counts[i, i])
        fp = int(cm.counts[:, i].sum()) - tp
        fn = int(cm.counts[i, :].sum()) - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_class[c] = ClassMetrics(
            precision=precision,
            recall=recall,
            f1=_f1(precision, recall),
            support=tp + fn,
        )
    total = sum(m.support for m in per_class.values())
    weighted = sum(m.f1 * m.support for m in per_class.values()) / total
    macro = sum(m.f1 for m in per_class.values()) / len(classes)
    return Metrics(per_class=per_class, weighted_f1=weighted, macro_f1=macro)


def metrics_from_confusion(cm: ConfusionMatrix) -> Metrics:
    """Same numbers, derived from an existing confusion matrix."""
    per_class = {}
    for i, c in enumerate(cm.classes):
        tp = int(cm.counts[i, i])
        fp = int(cm.counts[:, i].sum()) - tp
        fn = int(cm.counts[i, :].sum()) - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_class[c] = ClassMetrics(precision, recall, _f1(precision, recall), tp + fn)
    total = sum(m.support for m in per_class.values())
    if total == 0:
        raise ValueError("confusion matrix is empty")
    weighted = sum(m.f1 * m.support for m in per_class.values()) / total
    macro = sum(m.f1 for m in per_class.values()) / len(cm.classes)
    return Metrics(per_class=per_class, weighted_f1=weighted, macro_f1=macro)
