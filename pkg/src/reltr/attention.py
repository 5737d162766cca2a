"""Unmasked multi-head attention, the node encoder layer and the edge decoder layer.

The decoder differs from the textbook transformer decoder in two ways that
matter here: there is no causal mask anywhere, and edges first attend to the
nodes (E2N cross-attention) and only then to each other (E2E self-attention).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .layers import LayerNorm, Linear, Module
from .rng import Rng
from .tensor import DimensionError, Tensor, dropout, matmul, relu, reshape, softmax, transpose, weighted_sum


class ConfigError(ValueError):
    """Inconsistent layer hyper-parameters."""


@dataclass
class AttentionTrace:
    """Head-averaged attention matrices, one entry per layer (last = top-most)."""

    n2n: list = field(default_factory=list)
    e2n: list = field(default_factory=list)
    e2e: list = field(default_factory=list)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """softmax(q k^T / sqrt(d_k)) v over the last two axes; returns (output, weights)."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention shape mismatch: Q{q.shape} K{k.shape} V{v.shape}")
    d_k = q.shape[-1]
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scores = matmul(q, transpose(k, axes)) * (1.0 / np.sqrt(d_k))
    weights = softmax(scores, axis=-1, order_free=True)
    return weighted_sum(weights, v), weights


class MultiHeadAttention(Module):
    _children = ("w_q", "w_k", "w_v", "w_o")

    def __init__(self, d_model: int, num_heads: int, rng: Rng):
        if num_heads < 1 or d_model % num_heads:
            raise ConfigError(f"d_model={d_model} is not divisible by num_heads={num_heads}")
        self.d_model, self.num_heads = d_model, num_heads
        self.d_k = d_model // num_heads
        self.w_q = Linear(d_model, d_model, rng)
        self.w_k = Linear(d_model, d_model, rng)
        self.w_v = Linear(d_model, d_model, rng)
        self.w_o = Linear(d_model, d_model, rng)

    def _split(self, x: Tensor) -> Tensor:
        rows = x.shape[0]
        return transpose(reshape(x, (rows, self.num_heads, self.d_k)), (1, 0, 2))

    def __call__(self, x_query: Tensor, x_keyval: Tensor) -> tuple[Tensor, np.ndarray]:
        """Return the attended output and the head-averaged weight matrix."""
        for x in (x_query, x_keyval):
            if x.shape[-1] != self.d_model:
                raise DimensionError(f"expected width {self.d_model}, got {x.shape}")
        q = self._split(self.w_q(x_query))
        k = self._split(self.w_k(x_keyval))
        v = self._split(self.w_v(x_keyval))
        heads, weights = scaled_dot_attention(q, k, v)
        merged = reshape(transpose(heads, (1, 0, 2)), (x_query.shape[0], self.d_model))
        return self.w_o(merged), weights.data.mean(axis=0)


def multi_head_attention(x_query: Tensor, x_keyval: Tensor, params: MultiHeadAttention):
    return params(x_query, x_keyval)


class FeedForward(Module):
    _children = ("lin1", "lin2")

    def __init__(self, d_model: int, d_ff: int, rng: Rng):
        self.lin1 = Linear(d_model, d_ff, rng)
        self.lin2 = Linear(d_ff, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(relu(self.lin1(x)))


class EncoderLayer(Module):
    """Post-norm transformer layer with N2N self-attention over nodes."""

    _children = ("self_attn", "ffn", "norm1", "norm2")

    def __init__(self, d_model: int, num_heads: int, d_ff: int, rng: Rng):
        self.self_attn = MultiHeadAttention(d_model, num_heads, rng)
        self.ffn = FeedForward(d_model, d_ff, rng)
        self.norm1 = LayerNorm(d_model)
        self.norm2 = LayerNorm(d_model)


class DecoderLayer(Module):
    """Post-norm layer: E2N cross-attention, then E2E self-attention, then FFN."""

    _children = ("cross_attn", "self_attn", "ffn", "norm1", "norm2", "norm3")

    def __init__(self, d_model: int, num_heads: int, d_ff: int, rng: Rng):
        self.cross_attn = MultiHeadAttention(d_model, num_heads, rng)
        self.self_attn = MultiHeadAttention(d_model, num_heads, rng)
        self.ffn = FeedForward(d_model, d_ff, rng)
        self.norm1 = LayerNorm(d_model)
        self.norm2 = LayerNorm(d_model)
        self.norm3 = LayerNorm(d_model)


def encoder_layer(nodes: Tensor, params: EncoderLayer, training: bool = False,
                  p_drop: float = 0.0, rng: Rng | None = None) -> tuple[Tensor, np.ndarray]:
    attn, n2n = params.self_attn(nodes, nodes)
    y1 = params.norm1(nodes + dropout(attn, p_drop, training, rng))
    y = params.norm2(y1 + dropout(params.ffn(y1), p_drop, training, rng))
    return y, n2n


def decoder_layer(edges: Tensor, nodes: Tensor, params: DecoderLayer, training: bool = False,
                  p_drop: float = 0.0, rng: Rng | None = None):
    """Returns (edges', e2n weights E x n, e2e weights E x E)."""
    cross, e2n = params.cross_attn(edges, nodes)
    y1 = params.norm1(edges + dropout(cross, p_drop, training, rng))
    self_out, e2e = params.self_attn(y1, y1)
    y2 = params.norm2(y1 + dropout(self_out, p_drop, training, rng))
    y = params.norm3(y2 + dropout(params.ffn(y2), p_drop, training, rng))
    return y, e2n, e2e


def encoder_stack(nodes: Tensor, layers: Sequence[EncoderLayer], training: bool = False,
                  p_drop: float = 0.0, rng: Rng | None = None,
                  trace: AttentionTrace | None = None) -> tuple[Tensor, AttentionTrace]:
    if not layers:
        raise ConfigError("encoder stack needs at least one layer")
    trace = trace if trace is not None else AttentionTrace()
    x = nodes
    for layer in layers:
        x, n2n = encoder_layer(x, layer, training, p_drop, rng)
        trace.n2n.append(n2n)
    return x, trace


def decoder_stack(edges: Tensor, nodes: Tensor, layers: Sequence[DecoderLayer],
                  training: bool = False, p_drop: float = 0.0, rng: Rng | None = None,
                  trace: AttentionTrace | None = None) -> tuple[Tensor, AttentionTrace]:
    if not layers:
        raise ConfigError("decoder stack needs at least one layer")
    trace = trace if trace is not None else AttentionTrace()
    x = edges
    for layer in layers:
        x, e2n, e2e = decoder_layer(x, nodes, layer, training, p_drop, rng)
        trace.e2n.append(e2n)
        trace.e2e.append(e2e)
    return x, trace
