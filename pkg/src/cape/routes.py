"""Ranked propagation routes from pre-softmax attention scores."""
import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError, KTooLarge, UnknownComposition

MAX_OVER_HEADS = "max"


@dataclass(frozen=True)
class RouteReport:
    query: str
    head: object  # int head index or "max"
    top: list  # [(name, score)], highest first
    bottom: list  # [(name, score)], lowest first


def _scores_for(output, head):
    if output.A_pre is None:
        raise DataError("this model output carries no attention scores")
    if head == MAX_OVER_HEADS:
        return output.A_pre.max(axis=0)
    if not 0 <= head < output.A_pre.shape[0]:
        raise ValueError(f"head {head} outside [0, {output.A_pre.shape[0]})")
    return output.A_pre[head]


def extract_routes(output, names, query, k=5, head=MAX_OVER_HEADS, exclude_self=True):
    """Top-``k`` and bottom-``k`` keys of composition row ``query``.

    ``names`` labels the composition rows of ``output`` (rows after
    ``output.row_offset``); ``query`` is a position in ``names``. Equal scores
    rank by ascending row index in both lists.
    """
    n = len(names)
    if not 0 <= query < n:
        raise UnknownComposition(f"query index {query} outside the {n} compositions")
    off = output.row_offset
    row = _scores_for(output, head)[off + query, off:off + n]
    cand = np.array([j for j in range(n) if not (exclude_self and j == query)], dtype=np.intp)
    if k < 0 or k > cand.size:
        raise KTooLarge(f"k={k} but only {cand.size} candidate compositions")
    vals = row[cand]
    top = cand[np.lexsort((cand, -vals))][:k]
    bottom = cand[np.lexsort((cand, vals))][:k]
    return RouteReport(
        query=names[query], head=head,
        top=[(names[j], float(row[j])) for j in top],
        bottom=[(names[j], float(row[j])) for j in bottom])


def all_head_reports(output, names, query, k=5, exclude_self=True):
    """One report per head followed by the max-over-heads view."""
    heads = list(range(output.A_pre.shape[0])) + [MAX_OVER_HEADS]
    return [extract_routes(output, names, query, k, h, exclude_self) for h in heads]


def format_report(reports):
    lines = []
    for r in reports:
        tag = "max-over-heads" if r.head == MAX_OVER_HEADS else f"head {r.head}"
        lines.append(f"query: {r.query} [{tag}]")
        lines.append("  top:    " + ", ".join(f"{n} ({s:.4f})" for n, s in r.top))
        lines.append("  bottom: " + ", ".join(f"{n} ({s:.4f})" for n, s in r.bottom))
    return "\n".join(lines) + "\n"


def write_routes_csv(path, reports):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query", "list", "rank", "name", "score", "head"])
        for r in reports:
            for which, items in (("top", r.top), ("bottom", r.bottom)):
                for rank, (name, score) in enumerate(items, 1):
                    w.writerow([r.query, which, rank, name, repr(score), r.head])


def shared_primitive_contrast(output, table, ids, reduce="mean"):
    """Mean pre-softmax score towards keys sharing a state or object vs disjoint keys.

    Averages over every (query, key) pair with query != key among the
    composition rows ``ids``; heads are combined with ``reduce`` ("mean" or
    "max"). Returns ``(shared_mean, disjoint_mean)``.
    """
    if reduce == "mean":
        A = output.A_pre.mean(axis=0)
    elif reduce == "max":
        A = output.A_pre.max(axis=0)
    else:
        raise ValueError(f"unknown head reduction {reduce!r}")
    off = output.row_offset
    n = len(ids)
    A = A[off:off + n, off:off + n]
    pairs = np.array([table.pairs[i] for i in ids])
    same_s = pairs[:, 0][:, None] == pairs[:, 0][None, :]
    same_o = pairs[:, 1][:, None] == pairs[:, 1][None, :]
    off_diag = ~np.eye(n, dtype=bool)
    shared = (same_s | same_o) & off_diag
    disjoint = ~(same_s | same_o)
    if not shared.any() or not disjoint.any():
        raise DataError("need both primitive-sharing and disjoint composition pairs")
    return float(A[shared].mean()), float(A[disjoint].mean())
