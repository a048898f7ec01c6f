"""Gallery ranking by euclidean distance, AP/mAP, rank-k and per-config reports."""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import model as M
from .errors import EvaluationError
from .numerics import pairwise_distances
from .store import dequantize, quantize_uniform, size_report


@dataclass(frozen=True)
class Ranking:
    query_index: int
    order: np.ndarray  # gallery indices, nearest first
    distances: np.ndarray  # sorted ascending


def _rank_row(dist_row):
    # stable sort: equal distances keep the lower gallery index first
    return np.argsort(dist_row, kind="stable")


def rank_gallery(query, gallery, query_index=0):
    gallery = np.asarray(gallery)
    if gallery.ndim != 2 or len(gallery) == 0:
        raise ValueError("gallery must be a non-empty matrix")
    dist = pairwise_distances(np.atleast_2d(query), gallery)[0]
    order = _rank_row(dist)
    return Ranking(query_index, order, dist[order])


def _ap_from_hits(hits):
    """AP of a boolean relevance vector in ranked order; None if nothing is relevant."""
    n_rel = int(hits.sum())
    if n_rel == 0:
        return None
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, n_rel + 1) / ranks
    # left-to-right summation keeps results independent of numpy's pairwise blocking
    return sum(precision.tolist()) / n_rel


def average_precision(ranking, query_label, gallery_labels):
    """Average precision over the whole ranked gallery.

    Returns None when no gallery item shares ``query_label``; such queries are
    excluded from mAP by the caller.
    """
    gallery_labels = np.asarray(gallery_labels)
    return _ap_from_hits(gallery_labels[ranking.order] == query_label)


def _scores(queries, query_labels, gallery, gallery_labels, ks=()):
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    dist = pairwise_distances(queries, gallery)
    aps, topk = [], {k: [] for k in ks}
    for i in range(len(dist)):
        hits = gallery_labels[_rank_row(dist[i])] == query_labels[i]
        ap = _ap_from_hits(hits)
        if ap is None:
            continue
        aps.append(ap)
        for k in ks:
            topk[k].append(bool(hits[:k].any()))
    if not aps:
        raise EvaluationError("no query has a relevant gallery item")
    return aps, topk, len(dist) - len(aps)


def mean_average_precision(queries, query_labels, gallery, gallery_labels):
    aps, _, _ = _scores(queries, query_labels, gallery, gallery_labels)
    return sum(aps) / len(aps)


def rank_k_accuracy(queries, query_labels, gallery, gallery_labels, k):
    """Fraction of scored queries with a correct match among the k nearest gallery items."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _, topk, _ = _scores(queries, query_labels, gallery, gallery_labels, ks=(k,))
    return sum(topk[k]) / len(topk[k])


CSV_COLUMNS = ("method", "dim", "bits", "ratio", "mAP", "rank1", "rank5",
               "num_queries", "dropped_queries")


@dataclass(frozen=True)
class EvalReport:
    method: str
    dim: int
    bits: int
    ratio: float
    mAP: float
    rank1: float
    rank5: float
    num_queries: int
    dropped_queries: int = 0

    def csv_header(self):
        return ",".join(CSV_COLUMNS)

    def csv_row(self):
        return (f"{self.method},{self.dim},{self.bits},{self.ratio:.4f},{self.mAP:.6f},"
                f"{self.rank1:.6f},{self.rank5:.6f},{self.num_queries},{self.dropped_queries}")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def evaluate_embeddings(queries, query_labels, gallery, gallery_labels):
    aps, topk, dropped = _scores(queries, query_labels, gallery, gallery_labels, ks=(1, 5))
    n = len(aps)
    return sum(aps) / n, sum(topk[1]) / n, sum(topk[5]) / n, n, dropped


def evaluate_config(tm, split, ds, mode=None, quantize_storage=False):
    """Embed queries and gallery with ``tm`` and score them.

    With ``quantize_storage`` both sides pass through int8. The scale is the
    one calibrated during QAT when the model has one, otherwise the gallery's
    own ``max|x| / 127``.
    """
    mode = tm.mode if mode is None else mode
    emb = tm.embed(ds.features, mode)
    q, g = emb[split.query_indices], emb[split.gallery_indices]
    bits = 32
    if quantize_storage:
        store = quantize_uniform(g, scale=tm.qat_scale)
        g = dequantize(store)
        q = dequantize(quantize_uniform(q, scale=store.scale))
        bits = 8
    d = emb.shape[1]
    mAP, r1, r5, n, dropped = evaluate_embeddings(
        q, ds.labels[split.query_indices], g, ds.labels[split.gallery_indices])
    ratio = size_report(tm.embed_dim, 32, d, bits).ratio
    method = mode.kind if mode.kind != M.PRUNED else "prune"
    return EvalReport(method, d, bits, ratio, mAP, r1, r5, n, dropped)
