"""Generalized zero-shot metrics from a calibration-bias sweep.

A scalar bias is added to every unseen-composition column before taking the
row argmax (ties go to the lowest column index). Sweeping the bias from -inf
(only seen columns can win) to +inf (only unseen columns can win) traces the
seen-accuracy / unseen-accuracy curve; AUC is its trapezoidal area.

For one sample the winner can only change where its best unseen score plus
the bias crosses its best seen score, so those per-sample thresholds are the
curve's breakpoints. The sweep evaluates every breakpoint (where the index
tie-break decides) and one bias inside each gap between consecutive
breakpoints, which visits every distinct operating point in bias order.
"""
import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError, EmptyPartition


@dataclass
class EvalCurve:
    biases: np.ndarray
    seen_acc: np.ndarray
    unseen_acc: np.ndarray
    auc: float
    best_hm: float
    best_hm_bias: float
    best_seen: float
    best_unseen: float

    @property
    def hm(self):
        return harmonic_mean(self.seen_acc, self.unseen_acc)

    @property
    def points(self):
        return list(zip(self.biases.tolist(), self.seen_acc.tolist(), self.unseen_acc.tolist()))

    def summary(self):
        return {"auc": self.auc, "best_hm": self.best_hm, "best_hm_bias": self.best_hm_bias,
                "best_seen": self.best_seen, "best_unseen": self.best_unseen}


def harmonic_mean(s, u):
    s, u = np.asarray(s, dtype=np.float64), np.asarray(u, dtype=np.float64)
    total = s + u
    with np.errstate(invalid="ignore", divide="ignore"):
        hm = np.where(total > 0, 2 * s * u / np.where(total > 0, total, 1), 0.0)
    return hm


def trapezoid_auc(seen_acc, unseen_acc):
    """Area under seen accuracy as a function of unseen accuracy, points in sweep order."""
    s, u = np.asarray(seen_acc), np.asarray(unseen_acc)
    return float(np.sum((u[1:] - u[:-1]) * (s[1:] + s[:-1]) * 0.5))


class _Prepared:
    """Per-sample quantities the sweep needs; independent of the bias."""

    def __init__(self, scores, labels, unseen_mask, need_both=True):
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.intp)
        unseen_mask = np.asarray(unseen_mask, dtype=bool)
        if scores.ndim != 2 or scores.shape[1] != unseen_mask.shape[0]:
            raise DataError(
                f"scores {scores.shape} do not match {unseen_mask.shape[0]} column flags")
        if labels.shape != (scores.shape[0],):
            raise DataError("need one label per score row")
        if labels.size and (labels.min() < 0 or labels.max() >= scores.shape[1]):
            raise DataError("label outside the score columns")
        if not np.all(np.isfinite(scores)):
            raise DataError("scores must be finite")
        if unseen_mask.all() or not unseen_mask.any():
            raise DataError("need at least one seen and one unseen column")
        label_seen = ~unseen_mask[labels]
        self.n_seen_samples = int(label_seen.sum())
        self.n_unseen_samples = int(labels.size - self.n_seen_samples)
        if need_both and self.n_seen_samples == 0:
            raise EmptyPartition("no samples labelled with a seen composition")
        if need_both and self.n_unseen_samples == 0:
            raise EmptyPartition("no samples labelled with an unseen composition")
        seen_cols = np.flatnonzero(~unseen_mask)
        unseen_cols = np.flatnonzero(unseen_mask)
        s_block, u_block = scores[:, seen_cols], scores[:, unseen_cols]
        best_seen = seen_cols[np.argmax(s_block, axis=1)]
        best_unseen = unseen_cols[np.argmax(u_block, axis=1)]
        rows = np.arange(scores.shape[0])
        self.max_seen = scores[rows, best_seen]
        self.max_unseen = scores[rows, best_unseen]
        self.unseen_block = u_block
        self.tie_to_seen = best_seen < best_unseen
        self.hit_seen = best_seen == labels
        self.hit_unseen = best_unseen == labels
        self.label_seen = label_seen

    def accuracies(self, biases):
        seen_hits, unseen_hits = kernels.sweep_counts(
            self.max_seen, self.max_unseen, self.tie_to_seen, self.hit_seen,
            self.hit_unseen, self.label_seen, biases)
        return seen_hits / self.n_seen_samples, unseen_hits / self.n_unseen_samples


def _subsample(values, n_bias):
    if n_bias is None or len(values) <= n_bias:
        return values
    idx = np.unique(np.round(np.linspace(0, len(values) - 1, n_bias)).astype(np.intp))
    return values[idx]


def _sweep(prep, n_bias=None, mode="breakpoints"):
    if mode == "breakpoints":
        crit = prep.max_seen - prep.max_unseen
    elif mode == "all":
        crit = (prep.max_seen[:, None] - prep.unseen_block).ravel()
    else:
        raise ValueError(f"unknown sweep mode {mode!r}")
    crit = np.unique(crit)
    # at a critical value ties are broken by column index, so its state can
    # differ from both neighbouring open intervals; visit each interval too
    mids = 0.5 * (crit[:-1] + crit[1:])
    points = np.empty(crit.size + mids.size)
    points[0::2], points[1::2] = crit, mids
    points = _subsample(points, n_bias)
    return np.concatenate([[-np.inf], points, [np.inf]])


def sweep_biases(scores, labels, unseen_mask, n_bias=None, mode="breakpoints"):
    """Sorted biases to evaluate, bracketed by -inf and +inf.

    ``mode="all"`` returns every difference between a sample's best seen
    score and each of its unseen scores; ``"breakpoints"`` (default) keeps
    only each sample's best-seen minus best-unseen gap, which is where its
    prediction can change. Midpoints between consecutive values are
    interleaved. With ``n_bias`` the finite values are thinned to at most
    ``n_bias`` evenly spaced order statistics.
    """
    if n_bias is not None and n_bias < 2:
        raise ValueError("n_bias must be at least 2")
    return _sweep(_Prepared(scores, labels, unseen_mask, need_both=False), n_bias, mode)


def evaluate(scores, labels, unseen_mask, n_bias=None, mode="breakpoints", biases=None):
    """Sweep the calibration bias and summarise the seen/unseen trade-off.

    ``labels`` are column indices into ``scores``; ``unseen_mask`` flags the
    unseen columns. Samples whose label column is seen count towards seen
    accuracy, the rest towards unseen accuracy.
    """
    prep = _Prepared(scores, labels, unseen_mask)
    if biases is None:
        biases = _sweep(prep, n_bias, mode)
    else:
        biases = np.sort(np.asarray(biases, dtype=np.float64))
    seen_acc, unseen_acc = prep.accuracies(biases)
    hm = harmonic_mean(seen_acc, unseen_acc)
    k = int(np.argmax(hm))
    return EvalCurve(
        biases=biases, seen_acc=seen_acc, unseen_acc=unseen_acc,
        auc=trapezoid_auc(seen_acc, unseen_acc),
        best_hm=float(hm[k]), best_hm_bias=float(biases[k]),
        best_seen=float(seen_acc.max()), best_unseen=float(unseen_acc.max()))


def accuracy_at(scores, labels, unseen_mask, bias):
    """``(seen_acc, unseen_acc, hm)`` at one bias."""
    prep = _Prepared(scores, labels, unseen_mask)
    s, u = prep.accuracies(np.array([float(bias)]))
    return float(s[0]), float(u[0]), float(harmonic_mean(s, u)[0])


def write_curve_csv(path, curve):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bias", "seen_acc", "unseen_acc", "hm"])
        for b, s, u, h in zip(curve.biases, curve.seen_acc, curve.unseen_acc, curve.hm):
            w.writerow([repr(float(b)), repr(float(s)), repr(float(u)), repr(float(h))])


def format_summary(curve):
    return (f"AUC={curve.auc:.6f} best_HM={curve.best_hm:.6f} "
            f"best_seen={curve.best_seen:.6f} best_unseen={curve.best_unseen:.6f}")
