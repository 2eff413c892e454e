"""Binary segmentation metrics: MCC, PSNR and NRM over confusion counts.

Class ``1`` is the positive class. Degenerate denominators follow common
usage: MCC is 0 when any marginal is empty, an NRM term with an empty
denominator contributes 0, and PSNR of a perfect prediction is ``inf``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dualbin.core import BinaryFrame


class GeometryMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(pred: BinaryFrame, gt: BinaryFrame) -> ConfusionCounts:
    if pred.geometry != gt.geometry:
        raise GeometryMismatch(f"prediction {pred.geometry} vs ground truth {gt.geometry}")
    p = pred.pixels.astype(bool)
    g = gt.pixels.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp=tp, tn=p.size - tp - fp - fn, fp=fp, fn=fn)


def mcc(cc: ConfusionCounts) -> float:
    # exact integer products avoid overflow and rounding in the denominator
    den = (cc.tp + cc.fp) * (cc.tp + cc.fn) * (cc.tn + cc.fp) * (cc.tn + cc.fn)
    if den == 0:
        return 0.0
    return (cc.tp * cc.tn - cc.fp * cc.fn) / math.sqrt(den)


def psnr(cc: ConfusionCounts) -> float:
    """``10 log10(1 / MSE)`` with ``MSE = (FP + FN) / N``; ``inf`` when nothing is wrong."""
    if cc.total == 0:
        raise ValueError("no pixels compared")
    wrong = cc.fp + cc.fn
    if wrong == 0:
        return math.inf
    return 10.0 * math.log10(cc.total / wrong)


def nrm(cc: ConfusionCounts) -> float:
    fnr = cc.fn / (cc.tp + cc.fn) if cc.tp + cc.fn else 0.0
    fpr = cc.fp / (cc.fp + cc.tn) if cc.fp + cc.tn else 0.0
    return 0.5 * (fnr + fpr)


def evaluate(pred: BinaryFrame, gt: BinaryFrame) -> dict:
    """MCC, PSNR and NRM of one frame pair."""
    cc = confusion(pred, gt)
    return {"mcc": mcc(cc), "psnr": psnr(cc), "nrm": nrm(cc)}
