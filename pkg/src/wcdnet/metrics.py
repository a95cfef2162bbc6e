"""Classification and segmentation performance measures."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)

    def swapped(self) -> "ConfusionCounts":
        """Counts with the roles of positive and negative exchanged."""
        return ConfusionCounts(self.tn, self.tp, self.fn, self.fp)


def _as_binary(x, name: str) -> np.ndarray:
    a = np.asarray(x)
    if a.dtype == bool:
        return a
    if not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must be binary")
    return a.astype(bool)


def confusion(pred, gt) -> ConfusionCounts:
    pred = _as_binary(pred, "prediction")
    gt = _as_binary(gt, "ground truth")
    if pred.shape != gt.shape:
        raise ValueError(f"shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, pred.size - tp - fp - fn, fp, fn)


def iou(counts: ConfusionCounts) -> float:
    """TP / (TP + FP + FN); an empty class predicted empty counts as 1."""
    denom = counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0
    return counts.tp / denom


def miou(counts: ConfusionCounts) -> float:
    """Mean IoU over the change and the background class."""
    return (iou(counts) + iou(counts.swapped())) / 2


def average_precision(scores, labels) -> float:
    """Sum over distinct thresholds (descending) of (R_n - R_{n-1}) * P_n."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = _as_binary(labels, "labels").ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("average precision is undefined without positive labels")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    # last index of every run of tied scores
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp_at = tp[last]
    precision = tp_at / (last + 1)
    recall = tp_at / n_pos
    prev_recall = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev_recall) * precision))


def kappa_dice_totalacc(counts: ConfusionCounts) -> tuple[float, float, float]:
    total = counts.total
    if total <= 0:
        raise ValueError("no elements evaluated")
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    p_o = (tp + tn) / total
    p_e = ((tp + fp) * (tp + fn) + (tn + fn) * (tn + fp)) / (total * total)
    if p_e == 1:
        kappa = 1.0 if p_o == 1 else 0.0
    else:
        kappa = (p_o - p_e) / (1 - p_e)
    d = 2 * tp + fp + fn
    # both masks empty: perfect agreement
    dice = 1.0 if d == 0 else 2 * tp / d
    return kappa, dice, p_o


def topk_accuracy(probabilities, gt, k: int) -> float:
    """Fraction of samples whose label is among the k highest scores.

    Ties are broken towards the lower class index.
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != gt.shape[0]:
        raise ValueError("probabilities must be (samples, classes) matching the labels")
    if not 1 <= k <= probs.shape[1]:
        raise ValueError(f"k must lie in [1, {probs.shape[1]}]")
    if probs.shape[0] == 0:
        raise ValueError("no samples")
    own = probs[np.arange(len(gt)), gt]
    idx = np.arange(probs.shape[1])
    # classes ranked before the true one: higher score, or equal score and lower index
    ahead = (probs > own[:, None]) | ((probs == own[:, None]) & (idx[None, :] < gt[:, None]))
    return float(np.mean(ahead.sum(axis=1) < k))


def accuracy(pred_labels, gt_labels) -> float:
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape or pred_labels.size == 0:
        raise ValueError("label arrays must be non-empty and equally long")
    return float(np.mean(pred_labels == gt_labels))


def semantic_average_precision(probabilities, gt) -> float:
    """Macro AP over the classes that occur in ``gt`` (one-vs-rest)."""
    probs = np.asarray(probabilities, dtype=np.float64)
    gt = np.asarray(gt)
    aps = [average_precision(probs[:, c], gt == c) for c in range(probs.shape[1]) if np.any(gt == c)]
    return float(np.mean(aps))


@dataclass
class MetricsReport:
    """Evaluation summary of one dataset split.

    ``ap``/``accuracy`` are binary (changed vs unchanged) classification
    scores; ``top1``/``top5``/``semantic_ap`` are semantic classification
    scores; the remaining fields are pixel-level segmentation scores. Fields
    that are undefined for a split are ``None``.
    """

    miou: float | None = None
    miou_change_class: float | None = None
    ap: float | None = None
    accuracy: float | None = None
    top1: float | None = None
    top5: float | None = None
    kappa: float | None = None
    dice: float | None = None
    total_accuracy: float | None = None
    semantic_ap: float | None = None
    num_pairs: int = 0
    num_masked_pairs: int = 0
    crf_postprocessed: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "MetricsReport":
        for f in ("miou", "miou_change_class", "ap", "accuracy", "top1", "top5", "dice", "total_accuracy", "semantic_ap"):
            v = getattr(self, f)
            if v is not None and not (0.0 <= v <= 1.0 + 1e-12):
                raise ValueError(f"{f}={v} outside [0, 1]")
        if self.kappa is not None and not (-1.0 - 1e-12 <= self.kappa <= 1.0 + 1e-12):
            raise ValueError(f"kappa={self.kappa} outside [-1, 1]")
        return self


REPORT_FIELDS = [f.name for f in dataclasses.fields(MetricsReport)]


def _clean(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


def write_report_json(report: MetricsReport, path: str | os.PathLike) -> None:
    data = {k: _clean(v) for k, v in report.to_dict().items()}
    Path(path).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def write_report_csv(rows: dict[str, MetricsReport] | MetricsReport, path: str | os.PathLike) -> None:
    """One CSV row per report; a leading ``name`` column identifies each row."""
    if isinstance(rows, MetricsReport):
        rows = {"eval": rows}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name"] + REPORT_FIELDS)
        for name, rep in rows.items():
            d = rep.to_dict()
            writer.writerow([name] + ["" if d[f] is None else d[f] for f in REPORT_FIELDS])


def read_report_json(path: str | os.PathLike) -> MetricsReport:
    return MetricsReport(**json.loads(Path(path).read_text(encoding="utf-8")))
