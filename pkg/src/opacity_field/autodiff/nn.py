"""Parameter containers and the small layer set used by the field and renderer."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import Tensor, conv2d, get_default_dtype, matmul


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=get_default_dtype()), requires_grad=True)


class Module:
    """Attribute-registered parameter tree, torch-like naming (``a.b.weight``)."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data) for name, p in self.named_parameters(prefix))

    def load_state_dict(self, state: dict, prefix: str = "", strict: bool = True) -> None:
        own = dict(self.named_parameters(prefix))
        missing = [k for k in own if k not in state]
        if strict and missing:
            raise KeyError(f"missing parameters: {missing[:5]}")
        for name, p in own.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.astype(p.dtype).copy()
            p.zero_grad()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False):
        bound = np.sqrt(6.0 / n_in) if not zero else 0.0
        # He-uniform for relu stacks
        self.weight = parameter(rng.uniform(-bound, bound, size=(n_in, n_out)) if not zero else np.zeros((n_in, n_out)))
        self.bias = parameter(np.zeros(n_out))

    def forward(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1,
                 padding: int | None = None, zero: bool = False, gain: float = 2.0):
        fan_in = c_in * k * k
        if zero:
            w = np.zeros((c_out, c_in, k, k))
        else:
            bound = np.sqrt(3.0 * gain / fan_in)
            w = rng.uniform(-bound, bound, size=(c_out, c_in, k, k))
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(c_out))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)
