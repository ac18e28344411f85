"""Prediction, threshold classification, confusion matrix, and accuracy.

The positive class is "pdr"; a score is called pdr only when strictly
above 0.5. Although the headline metric is accuracy, the report also
prints precision, recall, and F1 (they coincide only for symmetric
matrices, so all four are always shown).
"""

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import model as _model
from .augment import normalize
from .dataset import CLASS_NAMES, load_samples
from .errors import DataError
from .imgproc import resize

POSITIVE_CLASS = "pdr"


def classify(score):
    """Strictly-above-0.5 rule: 0.5 itself is nonPdr."""
    return "pdr" if score > 0.5 else "nonPdr"


@dataclass
class Prediction:
    source_path: str
    score: float
    predicted_class: str
    true_class: Optional[str] = None


@dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    def accuracy(self):
        if self.total == 0:
            raise DataError("accuracy of an empty confusion matrix")
        return (self.tp + self.tn) / self.total

    def precision(self):
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    def recall(self):
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    def f1(self):
        p, r = self.precision(), self.recall()
        return 2 * p * r / (p + r) if (p + r) else 0.0


def accuracy(cm):
    """(tp + tn) / total."""
    return cm.accuracy()


def confusion(predictions):
    """Count tp/fp/fn/tn with pdr as the positive class."""
    cm = ConfusionMatrix()
    for p in predictions:
        if p.true_class is None:
            raise DataError(f"prediction for {p.source_path} carries no true class")
        if p.true_class == POSITIVE_CLASS:
            if p.predicted_class == POSITIVE_CLASS:
                cm.tp += 1
            else:
                cm.fn += 1
        else:
            if p.predicted_class == POSITIVE_CLASS:
                cm.fp += 1
            else:
                cm.tn += 1
    return cm


def predict(graph, stats, img, source_path="", true_class=None):
    """Resize -> scale to [0,1] -> normalize -> infer; classify at 0.5."""
    h, w, _ = graph.input_shape
    x = normalize(resize(img, (w, h)).to_unit_rgb(), stats)
    out = _model.forward(graph, x, mode="infer")
    score = float(out.data.reshape(-1)[0])
    return Prediction(
        source_path=source_path,
        score=score,
        predicted_class=classify(score),
        true_class=true_class,
    )


def format_score(score):
    """Bracketed score text, e.g. [[0.9227914]] (shortest float32 digits)."""
    return f"[[{np.format_float_positional(np.float32(score))}]]"


@dataclass
class BatchReport:
    predictions: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    matrix: Optional[ConfusionMatrix] = None

    def predicted_count(self, cls):
        return sum(1 for p in self.predictions if p.predicted_class == cls)

    def text(self):
        lines = []
        for p in self.predictions:
            lines.append(f"{p.predicted_class.upper()} >>> {os.path.basename(p.source_path)}")
            lines.append(format_score(p.score))
        lines.append(f"Number of retinas with PDR: {self.predicted_count('pdr')}")
        lines.append(f"Number of retinas without PDR: {self.predicted_count('nonPdr')}")
        if self.matrix is not None and self.matrix.total > 0:
            m = self.matrix
            lines.append(f"Confusion matrix: TP={m.tp} FP={m.fp} FN={m.fn} TN={m.tn}")
            lines.append(f"Accuracy: {m.accuracy():.4f}")
            lines.append(f"Precision: {m.precision():.4f}")
            lines.append(f"Recall: {m.recall():.4f}")
            lines.append(f"F1: {m.f1():.4f}")
        if self.failures:
            lines.append(f"Failed to load {len(self.failures)} image(s)")
        return "\n".join(lines)

    def to_json(self):
        out = {
            "predictions": [
                {"path": p.source_path, "score": p.score,
                 "predicted_class": p.predicted_class, "true_class": p.true_class}
                for p in self.predictions
            ],
            "predicted_counts": {cls: self.predicted_count(cls) for cls in CLASS_NAMES},
            "failures": list(self.failures),
        }
        if self.matrix is not None and self.matrix.total > 0:
            m = self.matrix
            out["confusion"] = {"tp": m.tp, "fp": m.fp, "fn": m.fn, "tn": m.tn}
            out["accuracy"] = m.accuracy()
            out["precision"] = m.precision()
            out["recall"] = m.recall()
            out["f1"] = m.f1()
        return out


def batch_report(graph, stats, test_dir, scorer=None):
    """Predict every image under a class layout and aggregate a report.

    Samples are processed in sorted-filename order. `scorer` (img -> score)
    replaces the model forward pass when given, which keeps report logic
    testable without trained weights.
    """
    h, w, _ = graph.input_shape if graph is not None else (None, None, None)
    samples, failed = load_samples(test_dir, size=(w, h) if graph is not None else (32, 32))
    samples = sorted(samples, key=lambda s: s.source_path)
    preds = []
    for s in samples:
        true_cls = CLASS_NAMES[s.label]
        if scorer is not None:
            score = float(scorer(s.image))
            preds.append(Prediction(s.source_path, score, classify(score), true_cls))
        else:
            preds.append(
                predict(graph, stats, s.image, source_path=s.source_path, true_class=true_cls)
            )
    report = BatchReport(predictions=preds, failures=failed)
    if preds:
        report.matrix = confusion(preds)
    return report
