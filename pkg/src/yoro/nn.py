"""
Parameter containers built on :mod:`yoro._tensor`.

:class:`Module` discovers its parameters from attributes (tensors that
require gradients, sub-modules, and lists of sub-modules) in attribute
definition order, giving stable dotted names for checkpoints.
"""

from typing import Dict, Iterator, List, Tuple

import numpy as np

from yoro._errors import DimensionError, StateError
from yoro._tensor import Tensor, gelu, layer_norm, matmul


class Module:
    """Base class for anything that owns trainable tensors."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{name}.{i}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Copy values into the parameters; names and shapes must match exactly."""
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise StateError(f"parameter names differ: missing {missing}, unexpected {extra}",
                             missing=missing, unexpected=extra)
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"{name}: shape {value.shape} vs {p.shape}", name=name)
            p.data = value.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def normal_param(rng: np.random.Generator, shape, std: float, name: str = "") -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True, name=name)


def zeros_param(shape, name: str = "") -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def ones_param(shape, name: str = "") -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, name=name)


class Linear(Module):
    """``y = x W + b`` with ``W`` of shape (in, out)."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, std: float = 0.02,
                 bias: bool = True):
        self.weight = normal_param(rng, (d_in, d_out), std)
        self.bias = zeros_param((d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = ones_param((d,))
        self.bias = zeros_param((d,))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


class MLP(Module):
    """Two fully connected layers with GELU in between."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int,
                 std: float = 0.02):
        self.fc1 = Linear(rng, d_in, d_hidden, std)
        self.fc2 = Linear(rng, d_hidden, d_out, std)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))
