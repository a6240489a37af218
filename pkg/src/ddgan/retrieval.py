"""Sketch-to-shape ranking and retrieval metrics.

Metrics follow the SHREC convention, per query with ``R`` relevant gallery
items: NN (relevance at rank 1), FT/ST (hits in the top ``R`` / ``2R``,
divided by ``R``), E-measure at cutoff 32, DCG normalized by the ideal
ranking, and average precision over the relevant ranks.  The PR curve is
the 11-point interpolated precision averaged over queries.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .data import Domain
from .errors import MissingLabelError
from .networks import invariant_features, specific_features

E_CUTOFF = 32
RECALL_LEVELS = tuple(i / 10 for i in range(11))
METRIC_NAMES = ("NN", "FT", "ST", "E", "DCG", "mAP")


@dataclass
class RankedList:
    query_id: str
    query_label: str
    gallery_ids: list
    relevance: np.ndarray
    distances: np.ndarray = field(repr=False, default=None)


@dataclass
class MetricsReport:
    nn: float
    ft: float
    st: float
    e: float
    dcg: float
    map: float
    pr_curve: list
    per_query: list = field(default_factory=list, repr=False)

    def scalars(self):
        return dict(zip(METRIC_NAMES, (self.nn, self.ft, self.st, self.e, self.dcg, self.map)))

    def to_json(self):
        return {
            **self.scalars(),
            "pr_curve": [{"recall": r, "precision": p} for r, p in self.pr_curve],
            "n_queries": len(self.per_query),
        }

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    def save_csv(self, path):
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(METRIC_NAMES)
            writer.writerow([repr(v) for v in self.scalars().values()])

    def save_pr_csv(self, path):
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("recall", "precision"))
            for r, p in self.pr_curve:
                writer.writerow((repr(r), repr(p)))

    def save_per_query_csv(self, path):
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("query_id", "label", "n_relevant") + METRIC_NAMES)
            for row in self.per_query:
                writer.writerow([row["query_id"], row["label"], row["n_relevant"]]
                                + [repr(row[m]) for m in METRIC_NAMES])


# ---------------------------------------------------------------- ranking

def distance_matrix(queries, gallery, metric="euclidean"):
    queries = np.atleast_2d(queries)
    gallery = np.atleast_2d(gallery)
    if metric == "euclidean":
        out = np.empty((len(queries), len(gallery)))
        step = max(1, 4_000_000 // max(1, gallery.size))
        for start in range(0, len(queries), step):
            diff = queries[start:start + step, None, :] - gallery[None, :, :]
            out[start:start + step] = np.sqrt((diff * diff).sum(axis=2))
        return out
    if metric == "cosine":
        qn = np.linalg.norm(queries, axis=1, keepdims=True)
        gn = np.linalg.norm(gallery, axis=1, keepdims=True)
        return 1.0 - (queries @ gallery.T) / np.maximum(qn * gn.T, 1e-12)
    raise ValueError(f"unknown distance {metric!r}; expected 'euclidean' or 'cosine'")


def order_by_distance(distances, gallery_ids):
    """Indices sorting each row by distance, ties broken by gallery id."""
    distances = np.atleast_2d(distances)
    id_rank = np.empty(len(gallery_ids), dtype=np.intp)
    id_rank[np.argsort(np.array(gallery_ids, dtype=object), kind="stable")] = np.arange(len(gallery_ids))
    return np.stack([np.lexsort((id_rank, row)) for row in distances])


def rank_features(query_feats, query_ids, query_labels, gallery_feats, gallery_ids, gallery_labels,
                  metric="euclidean"):
    if len(gallery_ids) == 0:
        raise ValueError("cannot rank against an empty gallery")
    dist = distance_matrix(query_feats, gallery_feats, metric)
    order = order_by_distance(dist, gallery_ids)
    gallery_ids = np.array(gallery_ids, dtype=object)
    gallery_labels = np.array(gallery_labels, dtype=object)
    ranked = []
    for qi, row in enumerate(order):
        ranked.append(RankedList(
            query_ids[qi], query_labels[qi], list(gallery_ids[row]),
            (gallery_labels[row] == query_labels[qi]).astype(np.uint8),
            dist[qi, row],
        ))
    return ranked


def rank_all(model, queries, gallery, metric="euclidean"):
    """Rank ``gallery`` shapes for every sketch in ``queries`` by invariant features."""
    queries, gallery = list(queries), list(gallery)
    if not gallery:
        raise ValueError("cannot rank against an empty gallery")
    for r in queries:
        if r.domain is not Domain.SKETCH:
            raise ValueError(f"query {r.id} is not a sketch")
    for r in gallery:
        if r.domain is not Domain.SHAPE:
            raise ValueError(f"gallery item {r.id} is not a 3D shape")
    if not queries:
        return []
    q = invariant_features(model, np.stack([r.feature for r in queries]), Domain.SKETCH)
    g = invariant_features(model, np.stack([r.feature for r in gallery]), Domain.SHAPE)
    return rank_features(q, [r.id for r in queries], [r.label for r in queries],
                         g, [r.id for r in gallery], [r.label for r in gallery], metric)


def rank(model, query, gallery, metric="euclidean"):
    return rank_all(model, [query], gallery, metric)[0]


# ---------------------------------------------------------------- metrics

def relevance_scores(relevance, n_relevant, e_cutoff=E_CUTOFF):
    """Per-query ``(scores, pr)`` arrays from stacked relevance rows."""
    relevance = np.ascontiguousarray(np.atleast_2d(relevance), dtype=np.uint8)
    n_relevant = np.ascontiguousarray(n_relevant, dtype=np.int64).reshape(-1)
    if np.any(n_relevant < 1):
        raise ValueError("every query needs at least one relevant gallery item")
    return kernels.query_scores(relevance, n_relevant, int(e_cutoff))


def metrics(ranked, class_sizes, e_cutoff=E_CUTOFF):
    ranked = list(ranked)
    if not ranked:
        raise ValueError("no ranked lists to evaluate")
    missing = {r.query_label for r in ranked if r.query_label not in class_sizes}
    if missing:
        raise MissingLabelError(missing, what="gallery class size")
    lengths = {len(r.relevance) for r in ranked}
    if len(lengths) == 1:
        scores, pr = relevance_scores(
            np.stack([r.relevance for r in ranked]),
            [class_sizes[r.query_label] for r in ranked], e_cutoff,
        )
    else:
        parts = [relevance_scores(r.relevance.reshape(1, -1), [class_sizes[r.query_label]], e_cutoff)
                 for r in ranked]
        scores = np.vstack([p[0] for p in parts])
        pr = np.vstack([p[1] for p in parts])
    per_query = []
    for r, row in zip(ranked, scores):
        per_query.append({"query_id": r.query_id, "label": r.query_label,
                          "n_relevant": class_sizes[r.query_label],
                          **{m: float(v) for m, v in zip(METRIC_NAMES, row)}})
    means = scores.mean(axis=0)
    curve = pr.mean(axis=0)
    return MetricsReport(*(float(m) for m in means),
                         pr_curve=[(r, float(p)) for r, p in zip(RECALL_LEVELS, curve)],
                         per_query=per_query)


def evaluate(model, queries, gallery, metric="euclidean"):
    gallery = list(gallery)
    sizes = {}
    for r in gallery:
        sizes[r.label] = sizes.get(r.label, 0) + 1
    return metrics(rank_all(model, queries, gallery, metric), sizes)


# ---------------------------------------------------------------- export

def export_embeddings(model, dataset, path):
    records = list(dataset)
    latent = model.config.latent_dim
    header = (["id", "domain", "label"] + [f"inv{i}" for i in range(latent)]
              + [f"spec{i}" for i in range(latent)])
    inv = np.zeros((len(records), latent))
    spec = np.zeros((len(records), latent))
    for domain in (Domain.SHAPE, Domain.SKETCH):
        idx = [i for i, r in enumerate(records) if r.domain is domain]
        if idx:
            feats = np.stack([records[i].feature for i in idx])
            inv[idx] = invariant_features(model, feats, domain)
            spec[idx] = specific_features(model, feats, domain)
    try:
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for r, a, b in zip(records, inv, spec):
                writer.writerow([r.id, r.domain.value, r.label or ""]
                                + [repr(float(v)) for v in a] + [repr(float(v)) for v in b])
    except OSError as exc:
        raise OSError(f"cannot write embeddings to {path}: {exc}") from exc


def read_embeddings_export(path):
    """Parse an export back into ``(rows, invariant, specific)``."""
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        latent = (len(header) - 3) // 2
        rows, inv, spec = [], [], []
        for row in reader:
            rows.append(tuple(row[:3]))
            values = [float(v) for v in row[3:]]
            inv.append(values[:latent])
            spec.append(values[latent:])
    return rows, np.array(inv), np.array(spec)
