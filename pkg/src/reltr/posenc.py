"""Sinusoidal position codes for nodes and for (source, target) node pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PosEncConfig:
    d_model: int = 64
    m: float = 10000.0

    def __post_init__(self):
        if self.d_model <= 0 or self.d_model % 4:
            raise ValueError(f"d_model must be a positive multiple of 4, got {self.d_model}")
        if self.m <= 0:
            raise ValueError(f"wavelength base m must be positive, got {self.m}")


def node_pos_enc(p: int, cfg: PosEncConfig) -> np.ndarray:
    """Channels (2k, 2k+1) hold sin/cos of p / m^(2k/d)."""
    return node_pos_table(np.array([p]), cfg)[0]


def node_pos_table(positions, cfg: PosEncConfig) -> np.ndarray:
    positions = np.asarray(positions, dtype=np.float64)
    if np.any(positions < 0):
        raise ValueError("positions must be non-negative")
    d = cfg.d_model
    k = np.arange(d // 2)
    inv_freq = cfg.m ** (-(2.0 * k) / d)
    angles = positions[:, None] * inv_freq[None, :]
    out = np.empty((positions.shape[0], d))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def pair_pos_enc(p_i: int, p_j: int, cfg: PosEncConfig) -> np.ndarray:
    return pair_pos_table(np.array([p_i]), np.array([p_j]), cfg)[0]


def pair_pos_table(p_i, p_j, cfg: PosEncConfig) -> np.ndarray:
    """Edge codes in groups of four channels starting at k = 0, 4, 8, ...

    Within a group, (k, k+1) encode the source position and (k+2, k+3) the
    target position, both at the frequency 1 / m^(2k/d) set by the group start.
    """
    p_i = np.asarray(p_i, dtype=np.float64)
    p_j = np.asarray(p_j, dtype=np.float64)
    if np.any(p_i < 0) or np.any(p_j < 0):
        raise ValueError("positions must be non-negative")
    d = cfg.d_model
    starts = np.arange(0, d, 4)
    inv_freq = cfg.m ** (-(2.0 * starts) / d)
    a_i = p_i[:, None] * inv_freq[None, :]
    a_j = p_j[:, None] * inv_freq[None, :]
    out = np.empty((p_i.shape[0], d))
    out[:, 0::4] = np.sin(a_i)
    out[:, 1::4] = np.cos(a_i)
    out[:, 2::4] = np.sin(a_j)
    out[:, 3::4] = np.cos(a_j)
    return out
