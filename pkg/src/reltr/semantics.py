"""Deterministic unit-norm class vectors, standing in for word embeddings."""

from __future__ import annotations

import hashlib

import numpy as np


def class_vector(name: str, d_sem: int, seed: int = 0) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    gen = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))
    v = gen.standard_normal(d_sem)
    return v / np.linalg.norm(v)


def class_semantic_vectors(names, d_sem: int, seed: int = 0) -> np.ndarray:
    """One row per class name; identical names map to identical rows in any process."""
    if d_sem < 2:
        raise ValueError(f"d_sem must be at least 2, got {d_sem}")
    return np.stack([class_vector(n, d_sem, seed) for n in names])
