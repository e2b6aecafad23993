"""Routed one-vs-rest evaluation and parameter accounting.

Precision and recall are macro averages of per-subset one-vs-rest binary
metrics over the whole test set, with the decision rule ``logit > 0`` and no
calibration. This makes recall-oriented detectors score low precision even
when their balanced accuracy is high.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .masking import BinaryMask, MaskSet
from .tensor import ParamSet, forward


@dataclass(frozen=True)
class BinaryConfusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def tally(cls, predicted: np.ndarray, actual: np.ndarray) -> "BinaryConfusion":
        predicted = np.asarray(predicted, dtype=bool)
        actual = np.asarray(actual, dtype=bool)
        return cls(
            tp=int(np.sum(predicted & actual)),
            fp=int(np.sum(predicted & ~actual)),
            tn=int(np.sum(~predicted & ~actual)),
            fn=int(np.sum(~predicted & actual)),
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def recall(self) -> float:
        pos = self.tp + self.fn
        return self.tp / pos if pos else 0.0

    @property
    def specificity(self) -> float:
        neg = self.tn + self.fp
        return self.tn / neg if neg else 0.0

    @property
    def precision(self) -> float:
        called = self.tp + self.fp
        return self.tp / called if called else 0.0

    @property
    def balanced_accuracy(self) -> float:
        return 0.5 * (self.recall + self.specificity)


@dataclass
class ParamCount:
    per_mask: list[int]
    union: int
    dense: int = 0

    @property
    def union_total(self) -> int:
        """Footprint of one shared backbone carrying all masks."""
        return self.union + self.dense

    @property
    def separate_total(self) -> int:
        """Footprint when every mask lives in its own parameter copy."""
        return sum(self.per_mask) + self.dense * len(self.per_mask)


def count_params(masks: MaskSet | Sequence[BinaryMask], dense: int = 0) -> ParamCount:
    """Surviving weights per mask and in the bitwise OR of all masks; ``dense``
    counts never-pruned parameters (biases) of one backbone."""
    masks = list(masks)
    union = masks[0].flat().copy()
    for m in masks[1:]:
        union |= m.flat()
    return ParamCount([m.count() for m in masks], int(np.count_nonzero(union)), dense)


@dataclass
class MetricsReport:
    subset_ids: list
    balanced_accuracy: list[float]
    precision: list[float]
    recall: list[float]
    confusions: list[BinaryConfusion]
    params: int | None = None
    notes: dict = field(default_factory=dict)

    @property
    def macro_balanced_accuracy(self) -> float:
        return float(np.mean(self.balanced_accuracy))

    @property
    def macro_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def macro_recall(self) -> float:
        return float(np.mean(self.recall))

    def to_dict(self) -> dict:
        return {
            "decision_rule": "one-vs-rest, positive iff logit > 0; macro averages over subsets",
            "subset_ids": list(self.subset_ids),
            "balanced_accuracy": self.balanced_accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "confusions": [asdict(c) for c in self.confusions],
            "macro": {
                "balanced_accuracy": self.macro_balanced_accuracy,
                "precision": self.macro_precision,
                "recall": self.macro_recall,
            },
            "params": self.params,
            **({"notes": self.notes} if self.notes else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def metrics_from_logits(
    logits: np.ndarray, membership: np.ndarray, subset_ids: Sequence, threshold: float = 0.0
) -> MetricsReport:
    """``logits[:, k]`` scores "sample belongs to subset k"; ``membership``
    holds each sample's subset position."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[0] == 0:
        raise ValueError("empty test set")
    confusions = [
        BinaryConfusion.tally(logits[:, k] > threshold, membership == k)
        for k in range(logits.shape[1])
    ]
    return MetricsReport(
        list(subset_ids),
        [c.balanced_accuracy for c in confusions],
        [c.precision for c in confusions],
        [c.recall for c in confusions],
        confusions,
    )


def routed_logits(params: ParamSet | Sequence[ParamSet], masks: MaskSet, x: np.ndarray,
                  activation: str = "relu") -> np.ndarray:
    """Logit of detector k is output 0 of ``f(x; m_k * theta_k)``; ``params``
    may be one shared set or one set per mask."""
    models = [params] * len(masks) if isinstance(params, ParamSet) else list(params)
    cols = [forward(models[k], masks[k], x, activation)[0][:, 0] for k in range(len(masks))]
    return np.stack(cols, axis=1)


def multihead_logits(params: ParamSet, mask: BinaryMask | None, x: np.ndarray,
                     activation: str = "relu") -> np.ndarray:
    return forward(params, mask, x, activation)[0]


def evaluate_routed(
    params: ParamSet | Sequence[ParamSet],
    masks: MaskSet,
    features: np.ndarray,
    labels: np.ndarray,
    mapping: dict[int, int],
    activation: str = "relu",
) -> MetricsReport:
    """Evaluate every subnetwork as a detector of its own subset over the
    full test set. ``mapping`` sends class labels to subset ids."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty test set")
    missing = sorted(set(int(c) for c in np.unique(labels)) - set(mapping))
    if missing:
        raise ValueError(f"test labels {missing} are not covered by the mapping")
    position = {sid: k for k, sid in enumerate(masks.subset_ids)}
    membership = np.array([position.get(mapping[int(c)], -1) for c in labels])
    report = metrics_from_logits(routed_logits(params, masks, features, activation),
                                 membership, masks.subset_ids)
    return report


def table_csv(rows: Sequence[dict]) -> str:
    """Rows with keys method, sparsity, balanced_accuracy, precision, recall, params."""
    buf = io.StringIO()
    cols = ["method", "sparsity", "balanced_accuracy", "precision", "recall", "params"]
    writer = csv.DictWriter(buf, cols, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for r in rows:
        writer.writerow({c: (f"{r[c]:.6f}" if isinstance(r[c], float) else r[c]) for c in cols})
    return buf.getvalue()
