"""Cosine compatibility between images and compositions, and the training loss."""
import csv
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DataError, ParseError, UnseenLabelInTraining


def compatibility(features, Y_F, logit_scale=1.0):
    """Scores ``(B, C)``: cosine of every feature row with every composition row.

    A row with (near) zero norm raises :class:`~cape.errors.DegenerateNorm`
    instead of being silently regularised.
    """
    f = T.l2_normalize_rows(T.as_tensor(features))
    y = T.l2_normalize_rows(T.as_tensor(Y_F))
    scores = f @ y.T
    return scores if logit_scale == 1.0 else scores * logit_scale


def cross_entropy_loss(scores, labels, columns):
    """Mean negative log-likelihood of ``labels`` under a softmax over ``columns``.

    ``scores`` holds one column per composition id in ``columns`` (the seen
    compositions during training). A label outside ``columns`` raises
    :class:`~cape.errors.UnseenLabelInTraining`.
    """
    col_of = {int(c): j for j, c in enumerate(columns)}
    try:
        targets = np.array([col_of[int(l)] for l in labels], dtype=np.intp)
    except KeyError as exc:
        raise UnseenLabelInTraining(
            f"label {exc.args[0]} is not among the training compositions") from None
    logp = T.log_softmax_rows(scores)
    return -T.mean_all(T.pick(logp, targets))


@dataclass
class ScoreMatrix:
    """Plain score array with its composition columns, for export and evaluation."""

    scores: np.ndarray  # (N, C)
    columns: list  # composition names, "state+object"
    unseen: np.ndarray  # (C,) bool
    labels: np.ndarray | None = None  # (N,) column index of the true composition
    temperature: float = 1.0

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.unseen = np.asarray(self.unseen, dtype=bool)
        if self.scores.ndim != 2 or self.scores.shape[1] != len(self.columns):
            raise DataError("score matrix and column list disagree")
        if self.unseen.shape != (len(self.columns),):
            raise DataError("unseen mask must have one entry per column")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.intp)


def write_score_csv(path, sm):
    """Header ``label,<state+object>@<seen|unseen>,...``; one row per sample.

    Values use ``repr`` so a read-back is bit-exact.
    """
    header = ["label"] + [
        f"{c}@{'unseen' if u else 'seen'}" for c, u in zip(sm.columns, sm.unseen)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, row in enumerate(sm.scores):
            label = "" if sm.labels is None else sm.columns[sm.labels[i]]
            w.writerow([label] + [repr(float(x)) for x in row])


def read_score_csv(path, table=None):
    """Read a score CSV; split tags come from ``@seen``/``@unseen`` suffixes or ``table``.

    The ``label`` column is optional. Columns without a tag are looked up in
    ``table`` (a :class:`~cape.data.CompositionTable`).
    """
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty score file", 1)
    header = rows[0]
    has_label = bool(header) and header[0] == "label"
    cols = header[1:] if has_label else header
    names, unseen = [], []
    for c in cols:
        name, sep, tag = c.rpartition("@")
        if sep and tag in ("seen", "unseen"):
            names.append(name)
            unseen.append(tag == "unseen")
            continue
        if table is None:
            raise ParseError(f"column {c!r} has no @seen/@unseen tag and no pair table given", 1)
        cid = table.find(c)
        names.append(table.column_name(cid))
        unseen.append(not table.is_seen(cid))
    index = {n: j for j, n in enumerate(names)}
    scores, labels = [], []
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        vals = row[1:] if has_label else row
        if len(vals) != len(names):
            raise ParseError(f"expected {len(names)} scores, found {len(vals)}", lineno)
        try:
            scores.append([float(v) for v in vals])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if has_label:
            if row[0] not in index:
                raise ParseError(f"label {row[0]!r} is not a score column", lineno)
            labels.append(index[row[0]])
    return ScoreMatrix(np.array(scores, dtype=np.float64).reshape(-1, len(names)), names,
                       np.array(unseen, dtype=bool), np.array(labels) if has_label else None)
