"""Named trainable parameters and their initialisers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import Tensor, get_dtype


@dataclass
class Parameter:
    name: str
    tensor: Tensor
    init_spec: str


def init_array(shape: tuple[int, ...], spec: str, rng: np.random.Generator) -> np.ndarray:
    """Draw initial values.

    ``xavier``: uniform(+-sqrt(6 / (fan_in + fan_out))) for matrices;
    ``normal``: N(0, 0.02) for embedding tables; ``zeros``/``ones`` constant.
    """
    if spec == "xavier":
        fan_in, fan_out = shape[0], shape[-1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape)
    if spec == "normal":
        return rng.normal(0.0, 0.02, size=shape)
    if spec == "zeros":
        return np.zeros(shape)
    if spec == "ones":
        return np.ones(shape)
    raise ValueError(f"unknown init spec {spec!r}")


class ParameterStore:
    """Ordered, uniquely named collection of trainable tensors."""

    def __init__(self, seed: int = 0):
        self._params: dict[str, Parameter] = {}
        self.rng = np.random.default_rng(seed)

    def create(self, name: str, shape, init: str = "xavier") -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ValueError(f"{name}: shape {shape} must be positive")
        data = init_array(shape, init, self.rng)
        t = Tensor(data, requires_grad=True, name=name, dtype=get_dtype())
        self._params[name] = Parameter(name, t, init)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return ((k, p.tensor) for k, p in self._params.items())

    def tensors(self) -> list[Tensor]:
        return [p.tensor for p in self._params.values()]

    def parameter(self, name: str) -> Parameter:
        return self._params[name]

    def zero_grad(self):
        for p in self._params.values():
            p.tensor.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.tensor.data.copy() for k, p in self._params.items()}

    def num_values(self) -> int:
        return sum(p.tensor.data.size for p in self._params.values())
