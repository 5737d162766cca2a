"""Empirical predicate statistics per (subject class, object class)."""

from __future__ import annotations

from typing import Iterable

import numpy as np


class FrequencyTable:
    """Counts of predicates per class pair, turned into a smoothed log-probability bias."""

    def __init__(self, counts: np.ndarray, eps: float = 1.0):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 3 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"counts must be C x C x (R+1), got {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if eps <= 0:
            raise ValueError("smoothing eps must be positive")
        self.counts = counts
        self.eps = float(eps)
        totals = counts.sum(axis=2, keepdims=True).astype(np.float64)
        num_rel = counts.shape[2]
        self.log_probs = np.log((counts + self.eps) / (totals + self.eps * num_rel))

    @classmethod
    def empty(cls, num_classes: int, num_relations: int, eps: float = 1.0) -> "FrequencyTable":
        return cls(np.zeros((num_classes, num_classes, num_relations), dtype=np.int64), eps)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def num_relations(self) -> int:
        """R + 1 (background included)."""
        return self.counts.shape[2]

    def bias(self, sub_class, obj_class) -> np.ndarray:
        return self.log_probs[sub_class, obj_class]

    def __eq__(self, other) -> bool:
        return (isinstance(other, FrequencyTable) and self.eps == other.eps
                and np.array_equal(self.counts, other.counts))


def freq_bias(table: FrequencyTable, sub_class, obj_class) -> np.ndarray:
    return table.bias(sub_class, obj_class)


def build_frequency_table(samples: Iterable, num_classes: int, num_relations: int,
                          eps: float = 1.0) -> FrequencyTable:
    """Count ground-truth triples using ground-truth classes. Background stays at zero."""
    counts = np.zeros((num_classes, num_classes, num_relations), dtype=np.int64)
    for sample in samples:
        classes = [node.gt_class for node in sample.nodes]
        for s, r, o in sample.gt_triples:
            counts[classes[s], classes[o], r] += 1
    return FrequencyTable(counts, eps)
