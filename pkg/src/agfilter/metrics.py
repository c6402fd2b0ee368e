"""Segmentation measures: Acc, Sen, Spe, IOU from confusion counts, exact AUC, overlap error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateLabels, EmptyUnion, NonBinaryInput, ShapeMismatch
from .tensor import Tensor


def _binary(t: Tensor, name: str) -> np.ndarray:
    data = t.data
    if not np.isin(data, (0.0, 1.0)).all():
        raise NonBinaryInput(f"{name} must contain only 0 and 1")
    return data == 1.0


def _pair(pred: Tensor, gt: Tensor) -> tuple[np.ndarray, np.ndarray]:
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} and gt {gt.shape} differ")
    return _binary(pred, "pred"), _binary(gt, "gt")


def binarize(t: Tensor, threshold: float = 0.5) -> Tensor:
    """1 where ``t >= threshold``, else 0."""
    return Tensor._wrap((t.data >= threshold).astype(np.float32))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def _ratio(self, num: int, den: int) -> tuple[float, bool]:
        # an empty denominator means the metric's condition is vacuous: report 1, flag it
        if den == 0:
            return 1.0, True
        return num / den, False

    def rates(self) -> tuple[dict[str, float], list[str]]:
        """Metric values plus the names of metrics that fell back to the sentinel."""
        values, flagged = {}, []
        for name, num, den in (
            ("acc", self.tp + self.tn, self.total),
            ("sen", self.tp, self.tp + self.fn),
            ("spe", self.tn, self.tn + self.fp),
            ("iou", self.tp, self.tp + self.fp + self.fn),
        ):
            values[name], vacuous = self._ratio(num, den)
            if vacuous:
                flagged.append(name)
        return values, flagged

    @property
    def accuracy(self) -> float:
        return self.rates()[0]["acc"]

    @property
    def sensitivity(self) -> float:
        return self.rates()[0]["sen"]

    @property
    def specificity(self) -> float:
        return self.rates()[0]["spe"]

    @property
    def iou(self) -> float:
        return self.rates()[0]["iou"]


def confusion(pred: Tensor, gt: Tensor) -> ConfusionCounts:
    p, g = _pair(pred, gt)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = p.size - tp - fp - fn
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def auc(scores: Tensor, gt: Tensor) -> float:
    """Exact ROC AUC via the Mann-Whitney U statistic with tie-averaged ranks."""
    if scores.shape != gt.shape:
        raise ShapeMismatch(f"scores {scores.shape} and gt {gt.shape} differ")
    labels = _binary(gt, "gt").ravel()
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs at least one positive and one negative pixel")
    ranks = rankdata(scores.data.ravel().astype(np.float64), method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def overlap_error(gt: Tensor, seg: Tensor) -> float:
    """``1 - |GT & SR| / |GT | SR|`` for binary masks."""
    s, g = _pair(seg, gt)
    union = int(np.count_nonzero(g | s))
    if union == 0:
        raise EmptyUnion("both masks are empty")
    return 1.0 - int(np.count_nonzero(g & s)) / union
