"""Binary classification metrics: ACC, SEN, SPE and trapezoidal ROC AUC."""
from dataclasses import asdict, dataclass

import numpy as np


def _ratio(num, den):
    return num / den if den else float("nan")


@dataclass(frozen=True)
class Metrics:
    tp: int
    tn: int
    fp: int
    fn: int
    acc: float
    sen: float
    spe: float
    auc: float

    def as_dict(self):
        return asdict(self)


def roc_curve(y_true, scores):
    """ROC points (fpr, tpr), one per distinct score threshold, from (0, 0)."""
    y_true = np.asarray(y_true, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    s, t = scores[order], y_true[order]
    # last index of each run of equal scores
    cut = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(t)[cut]
    fps = np.cumsum(~t)[cut]
    tpr = np.r_[0.0, tps / max(t.sum(), 1)]
    fpr = np.r_[0.0, fps / max((~t).sum(), 1)]
    return fpr, tpr


def roc_auc(y_true, scores):
    """Area under the ROC curve; NaN unless both classes are present."""
    y_true = np.asarray(y_true, dtype=bool)
    if y_true.all() or not y_true.any():
        return float("nan")
    fpr, tpr = roc_curve(y_true, scores)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def binary_metrics(y_true, y_pred, scores, positive=1):
    """Confusion counts and ACC/SEN/SPE/AUC with ``positive`` as the positive label.

    A ratio with a zero denominator is reported as NaN, not 0.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    pos_true = y_true == positive
    pos_pred = y_pred == positive
    tp = int(np.sum(pos_true & pos_pred))
    tn = int(np.sum(~pos_true & ~pos_pred))
    fp = int(np.sum(~pos_true & pos_pred))
    fn = int(np.sum(pos_true & ~pos_pred))
    return Metrics(
        tp=tp, tn=tn, fp=fp, fn=fn,
        acc=_ratio(tp + tn, tp + tn + fp + fn),
        sen=_ratio(tp, tp + fn),
        spe=_ratio(tn, tn + fp),
        auc=roc_auc(pos_true, scores),
    )
