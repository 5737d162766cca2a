"""Triple ranking, Recall@K with and without graph constraint, and confusion analysis."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import PREDCLS, SGCLS, TASKS, RelationTransformer

CONSTRAINTS = ("graph", "no-graph")
DEFAULT_KS = (20, 50, 100)
REPORT_FORMAT_VERSION = "1.0"


@dataclass
class RelationPrediction:
    subject_idx: int
    object_idx: int
    predicate: int
    score: float
    subject_label: int
    object_label: int


@dataclass
class RankedPredictions:
    """Candidate triples for one scene, sorted best first (parallel arrays)."""

    subject: np.ndarray
    object: np.ndarray
    predicate: np.ndarray
    score: np.ndarray
    labels: np.ndarray  # predicted class per node

    def __len__(self) -> int:
        return len(self.score)

    def to_list(self) -> list[RelationPrediction]:
        return [RelationPrediction(int(s), int(o), int(r), float(sc), int(self.labels[s]), int(self.labels[o]))
                for s, o, r, sc in zip(self.subject, self.object, self.predicate, self.score)]


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def rank_triples(subject, obj, fg_probs: np.ndarray, labels, node_scores=None) -> RankedPredictions:
    """Score every (ordered pair, foreground predicate) and sort deterministically.

    ``fg_probs`` is P x R (background column removed).  With ``node_scores``
    the score is P(subject label) * P(object label) * P(predicate).
    Ties break on subject, object, then predicate index (all ascending).
    """
    subject = np.asarray(subject, dtype=np.int64)
    obj = np.asarray(obj, dtype=np.int64)
    num_pairs, num_fg = fg_probs.shape
    scores = fg_probs
    if node_scores is not None:
        scores = fg_probs * (node_scores[subject] * node_scores[obj])[:, None]
    s = np.repeat(subject, num_fg)
    o = np.repeat(obj, num_fg)
    r = np.tile(np.arange(1, num_fg + 1), num_pairs)
    sc = scores.reshape(-1)
    order = np.lexsort((r, o, s, -sc))
    return RankedPredictions(s[order], o[order], r[order], sc[order], np.asarray(labels))


def predict(model: RelationTransformer, sample, mode: str, out=None) -> RankedPredictions:
    """Ranked foreground triples for every ordered node pair."""
    out = out if out is not None else model.forward(sample, mode, training=False)
    if out.relation_logits is None:
        empty = np.zeros(0, dtype=np.int64)
        return RankedPredictions(empty, empty, empty, np.zeros(0), out.labels)
    probs = _softmax(out.relation_logits.data)[:, 1:]
    node_scores = None
    if mode == SGCLS:
        node_scores = _softmax(out.object_logits.data).max(axis=1)
    return rank_triples(out.directed[:, 0], out.directed[:, 1], probs, out.labels, node_scores)


def _kept(preds: RankedPredictions, graph_constraint: bool) -> np.ndarray:
    if not graph_constraint:
        return np.arange(len(preds))
    seen = set()
    keep = []
    for idx, (s, o) in enumerate(zip(preds.subject.tolist(), preds.object.tolist())):
        if (s, o) not in seen:
            seen.add((s, o))
            keep.append(idx)
    return np.array(keep, dtype=np.int64)


def recall_at_k(preds: RankedPredictions, sample, k: int, graph_constraint: bool, task: str):
    """Fraction of gt triples hit by the top-k kept predictions; None if the scene has no gt.

    With the graph constraint only the best predicate of each ordered pair is
    ranked.  SGCLS additionally requires both predicted node labels to be right.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if not sample.gt_triples:
        return None
    top = _kept(preds, graph_constraint)[:k]
    hits = set(zip(preds.subject[top].tolist(), preds.predicate[top].tolist(), preds.object[top].tolist()))
    gt_classes = sample.gt_classes()
    matched = 0
    for s, r, o in sample.gt_triples:
        if (s, r, o) not in hits:
            continue
        if task == SGCLS and (preds.labels[s] != gt_classes[s] or preds.labels[o] != gt_classes[o]):
            continue
        matched += 1
    return matched / len(sample.gt_triples)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    """Recall per (task, constraint, K), macro-averaged over scenes with gt triples."""

    cells: dict = field(default_factory=dict)  # (task, constraint, k) -> recall
    num_samples: int = 0
    num_scored: int = 0

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.cells.values()))) if self.cells else 0.0

    def get(self, task: str, constraint: str, k: int) -> float:
        return self.cells[(task, constraint, k)]

    def ordering_violations(self) -> list[str]:
        """Cells breaking monotone-in-K, no-graph >= graph, or PREDCLS >= SGCLS."""
        bad = []
        tasks = sorted({t for t, _, _ in self.cells})
        cons = sorted({c for _, c, _ in self.cells})
        ks = sorted({k for _, _, k in self.cells})
        for t in tasks:
            for c in cons:
                for k1, k2 in zip(ks, ks[1:]):
                    if self.cells[(t, c, k1)] > self.cells[(t, c, k2)]:
                        bad.append(f"{t}/{c}: R@{k1} > R@{k2}")
            for k in ks:
                if set(CONSTRAINTS) <= set(cons):
                    if self.cells[(t, "graph", k)] > self.cells[(t, "no-graph", k)]:
                        bad.append(f"{t}/R@{k}: graph > no-graph")
        if {SGCLS, PREDCLS} <= set(tasks):
            for c in cons:
                for k in ks:
                    if self.cells[(SGCLS, c, k)] > self.cells[(PREDCLS, c, k)]:
                        bad.append(f"{c}/R@{k}: sgcls > predcls")
        return bad

    def to_dict(self, config: dict | None = None) -> dict:
        rows = [{"task": t, "constraint": c, "k": k, "recall": v}
                for (t, c, k), v in sorted(self.cells.items(),
                                           key=lambda kv: (CONSTRAINTS.index(kv[0][1]),
                                                           TASKS.index(kv[0][0]), kv[0][2]))]
        return {
            "format": "reltr-eval-report",
            "format_version": REPORT_FORMAT_VERSION,
            "config": config or {},
            "num_samples": self.num_samples,
            "num_scored_samples": self.num_scored,
            "cells": rows,
            "mean": self.mean,
            "mean_over": f"{len(self.cells)} enabled cells",
        }

    def table(self) -> str:
        """Text table: constraint groups, tasks within, one column per K, plus the mean."""
        lines = []
        cons = [c for c in CONSTRAINTS if any(k[1] == c for k in self.cells)]
        header, values = [], []
        for c in cons:
            for t in TASKS:
                for k in sorted(k for (tt, cc, k) in self.cells if tt == t and cc == c):
                    header.append(f"{c}:{t.upper()}@{k}")
                    values.append(f"{100 * self.cells[(t, c, k)]:.1f}")
        header.append("Mean")
        values.append(f"{100 * self.mean:.2f}")
        widths = [max(len(h), len(v)) for h, v in zip(header, values)]
        lines.append(" | ".join(h.rjust(w) for h, w in zip(header, widths)))
        lines.append(" | ".join(v.rjust(w) for v, w in zip(values, widths)))
        return "\n".join(lines)

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        cells = {(r["task"], r["constraint"], int(r["k"])): float(r["recall"]) for r in doc["cells"]}
        return cls(cells, doc.get("num_samples", 0), doc.get("num_scored_samples", 0))


def evaluate(model: RelationTransformer, samples: Sequence, ks: Iterable[int] = DEFAULT_KS,
             tasks: Iterable[str] = TASKS, constraints: Iterable[str] = CONSTRAINTS) -> EvalReport:
    ks = sorted(set(int(k) for k in ks))
    tasks = [t for t in TASKS if t in set(tasks)]
    constraints = [c for c in CONSTRAINTS if c in set(constraints)]
    sums = {(t, c, k): 0.0 for t in tasks for c in constraints for k in ks}
    scored = 0
    for sample in samples:
        if not sample.gt_triples:
            continue
        scored += 1
        for t in tasks:
            preds = predict(model, sample, t)
            for c in constraints:
                for k in ks:
                    sums[(t, c, k)] += recall_at_k(preds, sample, k, c == "graph", t)
    cells = {key: (v / scored if scored else 0.0) for key, v in sums.items()}
    return EvalReport(cells, len(samples), scored)


@dataclass
class ConfusionReport:
    predicate_names: list
    counts: np.ndarray  # R x R over foreground predicates (gt row, predicted column)

    def rows(self) -> dict:
        """gt predicate -> distribution over predicted predicates (rows with support only)."""
        out = {}
        for i, name in enumerate(self.predicate_names):
            total = self.counts[i].sum()
            if total:
                out[name] = {p: float(self.counts[i, j] / total) for j, p in enumerate(self.predicate_names)}
        return out

    def top_confusions(self, limit: int = 3) -> dict:
        out = {}
        for gt, dist in self.rows().items():
            wrong = sorted(((rate, p) for p, rate in dist.items() if p != gt and rate > 0),
                           key=lambda x: (-x[0], x[1]))[:limit]
            out[gt] = [{"predicted": p, "rate": rate} for rate, p in wrong]
        return out

    def to_dict(self, config: dict | None = None) -> dict:
        return {
            "format": "reltr-confusion-report",
            "format_version": REPORT_FORMAT_VERSION,
            "config": config or {},
            "predicates": self.predicate_names,
            "counts": self.counts.tolist(),
            "rows": self.rows(),
            "top_confusions": self.top_confusions(),
        }

    def lines(self) -> list[str]:
        out = []
        for gt, confusions in self.top_confusions().items():
            for c in confusions:
                out.append(f"'{gt}' predicted as '{c['predicted']}' {100 * c['rate']:.1f}% of the time")
        return out


def confusion(model: RelationTransformer, samples: Sequence, mode: str = PREDCLS) -> ConfusionReport:
    """Rank-1 foreground predicate for every gt (subject, object) pair."""
    num_fg = model.cfg.num_predicates
    counts = np.zeros((num_fg, num_fg), dtype=np.int64)
    for sample in samples:
        if not sample.gt_triples:
            continue
        out = model.forward(sample, mode, training=False)
        probs = _softmax(out.relation_logits.data)[:, 1:]
        row_of = {(int(s), int(o)): i for i, (s, o) in enumerate(out.directed)}
        for s, r, o in sample.gt_triples:
            predicted = int(np.argmax(probs[row_of[(s, o)]]))
            counts[r - 1, predicted] += 1
    return ConfusionReport(list(model.predicate_names[1:]), counts)


def write_json(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
