"""Predictions, confusion matrices and accuracy metrics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import Manifest, batches
from .dsp import SpectrogramConfig
from .errors import LifasError
from .nn.model import Model, model_forward
from .nn.ops import softmax_cross_entropy


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns are predicted classes."""

    labels: list[str]
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.labels)
        if self.counts.shape != (n, n):
            raise ValueError(f"counts must be {n}x{n}, got {self.counts.shape}")
        if np.any(self.counts < 0):
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def zeros(cls, labels) -> "ConfusionMatrix":
        return cls(list(labels), np.zeros((len(labels), len(labels)), dtype=np.int64))

    @classmethod
    def from_predictions(cls, labels, true_idx, pred_idx) -> "ConfusionMatrix":
        cm = cls.zeros(labels)
        cm.add(true_idx, pred_idx)
        return cm

    def add(self, true_idx, pred_idx) -> None:
        np.add.at(self.counts, (np.asarray(true_idx, dtype=np.intp), np.asarray(pred_idx, dtype=np.intp)), 1)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if list(self.labels) != list(other.labels):
            raise ValueError("cannot merge confusion matrices with different labels")
        return ConfusionMatrix(list(self.labels), self.counts + other.counts)

    def __eq__(self, other) -> bool:
        return (isinstance(other, ConfusionMatrix) and list(self.labels) == list(other.labels)
                and np.array_equal(self.counts, other.counts))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\predicted", *self.labels])
        for label, row in zip(self.labels, self.counts):
            w.writerow([label, *map(int, row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ConfusionMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        labels = rows[0][1:]
        return cls(labels, [[int(v) for v in r[1:]] for r in rows[1:] if r])

    def to_text(self) -> str:
        """Aligned table: rows true class, columns predicted class."""
        head = "true \\ pred"
        width = max(len(head), *(len(l) for l in self.labels), len(str(self.counts.max(initial=0))))
        lines = [" ".join(s.rjust(width) for s in (head, *self.labels))]
        for label, row in zip(self.labels, self.counts):
            lines.append(" ".join(s.rjust(width) for s in (label, *map(str, row))))
        return "\n".join(lines) + "\n"


def predict(model: Model, images) -> np.ndarray:
    """Argmax class per item in eval mode; ties go to the lowest index."""
    return predict_logits(model_forward(model, np.asarray(images), "eval"))


def predict_logits(logits) -> np.ndarray:
    return np.argmax(np.asarray(logits), axis=1)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise LifasError("accuracy of an empty confusion matrix is undefined")
    return float(np.trace(cm.counts)) / cm.total


def per_class_accuracy(cm: ConfusionMatrix) -> dict[str, Optional[float]]:
    """Row-wise recall; classes with no evaluated clips map to None."""
    out = {}
    for i, label in enumerate(cm.labels):
        row = int(cm.counts[i].sum())
        out[label] = None if row == 0 else int(cm.counts[i, i]) / row
    return out


def metrics_record(cm: ConfusionMatrix) -> dict:
    return {"accuracy": accuracy(cm), "per_class": per_class_accuracy(cm), "n_eval": cm.total}


def metrics_json(cm: ConfusionMatrix) -> str:
    return json.dumps(metrics_record(cm), indent=2, sort_keys=True) + "\n"


def confusion_and_loss(model: Model, manifest: Manifest, split: str, spectro_config: SpectrogramConfig,
                       *, root=".", batch_size: int = 64, clip_len_samples: Optional[int] = None,
                       single_threaded: bool = False) -> tuple[ConfusionMatrix, float]:
    """One deterministic, unaugmented pass; returns the matrix and the mean loss."""
    clip_len = clip_len_samples or model.spec.clip_len_samples
    cm = ConfusionMatrix.zeros(manifest.labels)
    loss_sum = 0.0
    for batch in batches(manifest, split, spectro_config, None, batch_size, 0, root=root,
                         clip_len_samples=clip_len, single_threaded=single_threaded):
        logits = model_forward(model, batch.images, "eval")
        loss, _ = softmax_cross_entropy(logits.astype(np.float64), batch.labels)
        loss_sum += loss * len(batch)
        cm.add(batch.labels, predict_logits(logits))
    if cm.total == 0:
        raise LifasError(f"no {split} clips to evaluate")
    return cm, loss_sum / cm.total


def evaluate(model: Model, manifest: Manifest, split: str, spectro_config: SpectrogramConfig, **kwargs):
    """Returns (confusion matrix, accuracy, per-class accuracy)."""
    cm, _ = confusion_and_loss(model, manifest, split, spectro_config, **kwargs)
    return cm, accuracy(cm), per_class_accuracy(cm)
