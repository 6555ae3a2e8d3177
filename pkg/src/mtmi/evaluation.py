"""ROC curves and the FAR-normalized area under them (NAUC)."""

import csv
import io
from dataclasses import dataclass

import numpy as np

from .data import format_float
from .errors import ParseError, ValidationError

__all__ = [
    "ScoredInstance",
    "RocCurve",
    "roc_curve",
    "nauc",
    "nauc_extrapolates",
    "save_roc",
    "load_roc",
    "save_summary",
    "save_plot_data",
]


@dataclass(frozen=True)
class ScoredInstance:
    score: float
    truth: bool


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def __post_init__(self):
        fpr = np.asarray(self.fpr, dtype=np.float64)
        tpr = np.asarray(self.tpr, dtype=np.float64)
        thr = np.asarray(self.thresholds, dtype=np.float64)
        if not (fpr.shape == tpr.shape == thr.shape) or fpr.ndim != 1 or fpr.size < 2:
            raise ValidationError("ROC curve needs matching fpr/tpr/threshold arrays of length >= 2")
        if np.any(np.diff(fpr) < 0) or np.any(np.diff(tpr) < 0):
            raise ValidationError("fpr and tpr must be non-decreasing")
        if fpr[0] != 0 or np.any(fpr < 0) or np.any(fpr > 1) or np.any(tpr < 0) or np.any(tpr > 1):
            raise ValidationError("ROC points must lie in [0, 1] and start at fpr 0")
        for name, a in (("fpr", fpr), ("tpr", tpr), ("thresholds", thr)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def __len__(self):
        return self.fpr.size


def _as_arrays(scored, truth=None):
    if truth is None:
        items = list(scored)
        scores = np.array([float(s.score if hasattr(s, "score") else s[0]) for s in items])
        labels = np.array([bool(s.truth if hasattr(s, "truth") else s[1]) for s in items])
    else:
        scores = np.asarray(scored, dtype=np.float64)
        labels = np.asarray(truth).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError("scores and truth labels must be matching 1-D sequences")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores must be finite")
    return scores, labels


def roc_curve(scored, truth=None):
    """ROC curve from scored instances, one vertex per distinct score.

    Accepts a sequence of :class:`ScoredInstance` (or ``(score, truth)``
    pairs), or two parallel arrays. An instance counts as detected when its
    score is >= the threshold; the first vertex has threshold +inf.
    """
    scores, labels = _as_arrays(scored, truth)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("ROC needs at least one positive and one negative instance")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last_of_group = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1]
    fpr = np.r_[0.0, fp[last_of_group] / n_neg]
    tpr = np.r_[0.0, tp[last_of_group] / n_pos]
    thresholds = np.r_[np.inf, s[last_of_group]]
    return RocCurve(fpr, tpr, thresholds)


def nauc_extrapolates(curve, far_cutoff):
    """True when the curve stops short of ``far_cutoff`` and is extended flat."""
    return float(curve.fpr[-1]) < far_cutoff


def nauc(curve, far_cutoff=1e-3):
    """Area under ``curve`` over fpr in [0, far_cutoff], divided by the cutoff.

    The curve is linear between vertices. If its last vertex lies below the
    cutoff the final tpr is carried horizontally to it.
    """
    tau = float(far_cutoff)
    if not tau > 0:
        raise ValidationError("far_cutoff must be positive")
    x, y = curve.fpr, curve.tpr
    area = 0.0
    for i in range(x.size - 1):
        x0, x1, y0, y1 = x[i], x[i + 1], y[i], y[i + 1]
        if x0 >= tau:
            break
        if x1 <= tau:
            area += (x1 - x0) * (y0 + y1) / 2.0
        else:
            y_tau = y0 + (y1 - y0) * (tau - x0) / (x1 - x0)
            area += (tau - x0) * (y0 + y_tau) / 2.0
            break
    if x[-1] < tau:
        area += (tau - x[-1]) * y[-1]
    return float(min(max(area / tau, 0.0), 1.0))


def _write(path, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def save_roc(curve, path):
    rows = [["threshold", "fpr", "tpr"]]
    rows += [[format_float(t), format_float(f), format_float(p)]
             for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr)]
    _write(path, rows)


def load_roc(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0] != ["threshold", "fpr", "tpr"]:
        raise ParseError("header must be 'threshold,fpr,tpr'", 1, path)
    table = np.array([[float(v) for v in r] for r in rows[1:]])
    return RocCurve(table[:, 1], table[:, 2], table[:, 0])


def save_summary(metrics, path):
    """Write ``(metric, value)`` pairs as ``metric,value`` CSV."""
    rows = [["metric", "value"]]
    for k, v in metrics:
        rows.append([k, format_float(v) if isinstance(v, float) else v])
    _write(path, rows)


def save_plot_data(curve, path, far_cutoff=1e-3):
    """ROC vertices up to the cutoff with fpr expressed in units of the cutoff."""
    tau = float(far_cutoff)
    x, y = curve.fpr, curve.tpr
    keep = x <= tau
    fx, fy = list(x[keep]), list(y[keep])
    if fx[-1] < tau:
        nxt = np.flatnonzero(x > tau)
        if nxt.size:
            i = nxt[0]
            fy.append(y[i - 1] + (y[i] - y[i - 1]) * (tau - x[i - 1]) / (x[i] - x[i - 1]))
        else:
            fy.append(y[-1])
        fx.append(tau)
    rows = [[f"fpr_per_{format(tau, 'g')}", "tpr"]]
    rows += [[format_float(a / tau), format_float(b)] for a, b in zip(fx, fy)]
    _write(path, rows)
