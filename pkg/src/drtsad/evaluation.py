"""Thresholding, point adjustment and precision/recall/F1 on point-labeled series."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from drtsad.errors import EmptyInput, PreconditionError


@dataclass(frozen=True)
class AnomalyScoreSeries:
    scores: np.ndarray
    detector: str = ""
    fingerprint: str = ""

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.scores)):
            raise PreconditionError("anomaly scores must be finite")


@dataclass(frozen=True)
class ThresholdPolicy:
    """``ratio_percentile`` flags scores above the (1 - ratio) quantile.

    ``best_f1_sweep`` picks the threshold maximising F1 against the labels, so
    any report built with it is oracle-informed.  ``grid_size=None`` sweeps every
    distinct score; otherwise a geometric grid over (min, max] is used.
    """

    kind: str = "ratio_percentile"
    ratio: float = 0.1
    grid_size: int | None = None

    def __post_init__(self) -> None:
        if self.kind == "ratio_percentile":
            if not 0.0 < self.ratio < 0.5:
                raise PreconditionError(f"ratio must lie in (0, 0.5), got {self.ratio}")
        elif self.kind == "best_f1_sweep":
            if self.grid_size is not None and self.grid_size < 10:
                raise PreconditionError("grid_size must be >= 10")
        else:
            raise PreconditionError(f"unknown threshold policy {self.kind!r}")

    @property
    def oracle_informed(self) -> bool:
        return self.kind == "best_f1_sweep"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class EvalReport:
    threshold: float
    policy: str
    oracle_informed: bool
    point_adjust: bool
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


def _segments(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start (inclusive) and stop (exclusive) of each maximal run of ones."""
    padded = np.concatenate([[0], labels.astype(np.int8), [0]])
    edges = np.diff(padded)
    return np.nonzero(edges == 1)[0], np.nonzero(edges == -1)[0]


def point_adjust(predictions: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Mark a whole labeled segment as detected when any point inside it is flagged."""
    predictions = np.asarray(predictions).astype(bool)
    labels = np.asarray(labels).astype(bool)
    if predictions.shape != labels.shape:
        raise PreconditionError(f"length mismatch {predictions.shape} vs {labels.shape}")
    out = predictions.copy()
    starts, stops = _segments(labels)
    if starts.size == 0:
        return out.astype(np.int8)
    csum = np.concatenate([[0], np.cumsum(predictions)])
    hit = (csum[stops] - csum[starts]) > 0
    cover = np.zeros(labels.size + 1, dtype=np.int64)
    np.add.at(cover, starts[hit], 1)
    np.add.at(cover, stops[hit], -1)
    out |= np.cumsum(cover[:-1]) > 0
    return out.astype(np.int8)


def _report(tp, fp, fn, tn, threshold, policy: ThresholdPolicy, adjust: bool) -> EvalReport:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(
        threshold=float(threshold),
        policy=policy.kind,
        oracle_informed=policy.oracle_informed,
        point_adjust=adjust,
        tp=int(tp),
        fp=int(fp),
        fn=int(fn),
        tn=int(tn),
        precision=float(precision),
        recall=float(recall),
        f1=float(f1),
    )


def prf(predictions: np.ndarray, labels: np.ndarray) -> EvalReport:
    predictions = np.asarray(predictions).astype(bool)
    labels = np.asarray(labels).astype(bool)
    if predictions.shape != labels.shape:
        raise PreconditionError(f"length mismatch {predictions.shape} vs {labels.shape}")
    tp = int(np.sum(predictions & labels))
    fp = int(np.sum(predictions & ~labels))
    fn = int(np.sum(~predictions & labels))
    tn = int(np.sum(~predictions & ~labels))
    return _report(tp, fp, fn, tn, np.nan, ThresholdPolicy(), False)


def _candidates(scores: np.ndarray, grid_size: int | None) -> np.ndarray:
    if grid_size is None:
        return np.unique(scores)
    lo, hi = float(scores.min()), float(scores.max())
    if hi == lo:
        return np.array([hi])
    # geometric steps above the minimum, ending exactly at the maximum
    grid = lo + np.geomspace((hi - lo) * 1e-6, hi - lo, grid_size)
    grid[-1] = hi
    return grid


def threshold_sweep(scores, labels, adjust: bool = True, grid_size: int | None = None):
    """Counts for the rule ``score >= t`` at every candidate threshold ``t``.

    Returns ``(thresholds, tp, fp, fn)`` as arrays.  With point adjustment a
    labeled segment counts fully once its maximum score reaches ``t``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    thresholds = _candidates(scores, grid_size)
    neg_sorted = np.sort(scores[~labels])
    fp = neg_sorted.size - np.searchsorted(neg_sorted, thresholds, side="left")
    n_pos = int(labels.sum())
    if adjust:
        starts, stops = _segments(labels)
        seg_max = np.array([scores[a:b].max() for a, b in zip(starts, stops)]) if starts.size else np.zeros(0)
        seg_len = (stops - starts).astype(np.int64)
        order = np.argsort(seg_max)
        seg_max, seg_len = seg_max[order], seg_len[order]
        tail = np.concatenate([np.cumsum(seg_len[::-1])[::-1], [0]])
        tp = tail[np.searchsorted(seg_max, thresholds, side="left")]
    else:
        pos_sorted = np.sort(scores[labels])
        tp = pos_sorted.size - np.searchsorted(pos_sorted, thresholds, side="left")
    return thresholds, tp.astype(np.int64), fp.astype(np.int64), (n_pos - tp).astype(np.int64)


def apply_threshold(scores, policy: ThresholdPolicy, labels=None, adjust: bool = True) -> tuple[np.ndarray, float]:
    """Binary predictions and the threshold used.

    ``ratio_percentile`` predicts ``score > quantile``; ``best_f1_sweep`` predicts
    ``score >= t`` for the best (post-adjustment when ``adjust``) F1, ties going
    to the lower threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyInput("no scores to threshold")
    if policy.kind == "ratio_percentile":
        thr = float(np.quantile(scores, 1.0 - policy.ratio))
        return (scores > thr).astype(np.int8), thr
    if labels is None:
        raise PreconditionError("best_f1_sweep needs labels")
    thresholds, tp, fp, fn = threshold_sweep(scores, labels, adjust, policy.grid_size)
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    # thresholds ascend, so argmax already prefers the lowest one on ties
    best = int(np.argmax(f1))
    thr = float(thresholds[best])
    return (scores >= thr).astype(np.int8), thr


def evaluate(scores, labels, policy: ThresholdPolicy, adjust: bool = True) -> EvalReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise PreconditionError(f"length mismatch {scores.shape} vs {labels.shape}")
    predictions, thr = apply_threshold(scores, policy, labels, adjust)
    if adjust:
        predictions = point_adjust(predictions, labels)
    r = prf(predictions, labels)
    return dataclasses.replace(
        r, threshold=thr, policy=policy.kind, oracle_informed=policy.oracle_informed, point_adjust=adjust
    )
