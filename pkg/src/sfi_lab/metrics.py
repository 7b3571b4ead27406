"""Threshold and ranking metrics for binary predictions.

Metrics with a zero denominator are ``None`` (undefined) rather than 0, so
that aggregation can skip them.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from sfi_lab.errors import DomainError

THRESHOLD = 0.5


@dataclass(frozen=True)
class MetricSet:
    auc: float | None
    balanced_accuracy: float | None
    detection_rate: float | None
    f1: float | None
    precision: float | None
    recall: float | None
    brier: float | None

    def as_dict(self) -> dict:
        return asdict(self)


METRIC_NAMES = tuple(f.name for f in fields(MetricSet))
# metrics where larger is better; brier is excluded from improvement analyses
PERFORMANCE_METRICS = ("auc", "balanced_accuracy", "detection_rate", "f1", "precision", "recall")


def _check(labels, probs) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(labels, dtype=bool).reshape(-1)
    p = np.asarray(probs, dtype=float).reshape(-1)
    if len(y) == 0:
        raise DomainError("metrics need at least one observation")
    if len(y) != len(p):
        raise DomainError(f"{len(y)} labels but {len(p)} predictions")
    return y, p


def confusion(labels, probs, threshold: float = THRESHOLD) -> tuple[int, int, int, int]:
    """(TP, FP, FN, TN) with ``prob >= threshold`` classified positive."""
    y, p = _check(labels, probs)
    pred = p >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    return tp, fp, fn, len(y) - tp - fp - fn


def midranks(values) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their ranks."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    starts = np.flatnonzero(np.r_[True, sv[1:] != sv[:-1]])
    ends = np.r_[starts[1:], len(sv)]
    mean_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(len(v))
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def auc(labels, probs) -> float | None:
    """P(score_pos > score_neg) + 0.5 P(tie), via the Mann-Whitney rank sum."""
    y, p = _check(labels, probs)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    r = midranks(p)
    u = r[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _ratio(num, den) -> float | None:
    return num / den if den else None


def metric_set(labels, probs, threshold: float = THRESHOLD) -> MetricSet:
    y, p = _check(labels, probs)
    tp, fp, fn, tn = confusion(y, p, threshold)
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    specificity = _ratio(tn, tn + fp)
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    balanced = (recall + specificity) / 2 if recall is not None and specificity is not None else None
    return MetricSet(
        auc=auc(y, p),
        balanced_accuracy=balanced,
        detection_rate=tp / len(y),
        f1=f1,
        precision=precision,
        recall=recall,
        # correctly rounded, so the value does not depend on summation order
        brier=math.fsum((p - y) ** 2) / len(y),
    )
