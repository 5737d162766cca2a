"""Parameter containers for the affine and normalisation layers."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .rng import Rng
from .tensor import Tensor, layer_norm, linear


class Module:
    """Anything holding named parameters; children are listed in ``_children``."""

    _children: tuple[str, ...] = ()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name in self._children:
            child = getattr(self, name)
            path = f"{prefix}{name}"
            if isinstance(child, Tensor):
                yield path, child
            elif isinstance(child, Module):
                yield from child.named_parameters(path + ".")
            else:
                for i, sub in enumerate(child):
                    yield from sub.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def _uniform(rng: Rng, fan_in: int, shape) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(shape, -bound, bound), requires_grad=True)


class Linear(Module):
    """``y = x @ weight + bias`` with weight stored as (in, out)."""

    _children = ("weight", "bias")

    def __init__(self, d_in: int, d_out: int, rng: Rng):
        self.d_in, self.d_out = d_in, d_out
        self.weight = _uniform(rng, d_in, (d_in, d_out))
        self.bias = _uniform(rng, d_in, (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ValueError(f"linear layer expects width {self.d_in}, got {x.shape[-1]}")
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    _children = ("gamma", "beta")

    def __init__(self, width: int, eps: float = 1e-5):
        self.eps = eps
        self.gamma = Tensor(np.ones(width), requires_grad=True)
        self.beta = Tensor(np.zeros(width), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)
