"""Parameter containers and multilayer perceptrons."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import ContractError, ShapeError, Tensor, matmul, relu, sigmoid


class ParamSet:
    """Named trainable tensors plus the global optimisation step."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.step = 0

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ContractError(f"parameter {name!r} already exists")
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise ContractError(f"parameter {name!r} has non-finite entries")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def fill_missing_grads(self) -> None:
        """Unreached parameters get an explicit all-zero gradient."""
        for t in self._params.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            if self._params[k].shape != np.shape(v):
                raise ShapeError(f"{k}: expected shape {self._params[k].shape}, got {np.shape(v)}")
            self._params[k].data = np.array(v, dtype=np.float64)

    def checksum(self, prefix: str = "") -> str:
        h = hashlib.sha256()
        for k in sorted(self._params):
            if k.startswith(prefix):
                h.update(k.encode())
                h.update(self._params[k].data.tobytes())
        return h.hexdigest()


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass(frozen=True)
class MLPSpec:
    """Layer widths and activations of an MLP stored under ``prefix``.

    ``hidden`` applies between layers, ``out`` after the last one
    (``None`` keeps the output linear).
    """

    prefix: str
    sizes: tuple[int, ...]
    hidden: str = "relu"
    out: str | None = None

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def in_width(self) -> int:
        return self.sizes[0]

    @property
    def out_width(self) -> int:
        return self.sizes[-1]

    def weight(self, i: int) -> str:
        return f"{self.prefix}.W{i}"

    def bias(self, i: int) -> str:
        return f"{self.prefix}.b{i}"


def init_mlp(params: ParamSet, spec: MLPSpec, rng: np.random.Generator,
             zero: bool = False) -> None:
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.sizes[i], spec.sizes[i + 1]
        w = np.zeros((fan_in, fan_out)) if zero else glorot_uniform(rng, fan_in, fan_out)
        params.add(spec.weight(i), w)
        params.add(spec.bias(i), np.zeros(fan_out))


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, None: lambda t: t, "linear": lambda t: t}


def mlp_apply(params: ParamSet, spec: MLPSpec, x: Tensor) -> Tensor:
    """Apply the MLP to the last axis of ``x`` (any leading batch shape)."""
    if x.shape[-1] != spec.in_width:
        raise ShapeError(f"{spec.prefix}: input width {x.shape[-1]} != {spec.in_width}")
    h = x
    for i in range(spec.n_layers):
        h = matmul(h, params[spec.weight(i)]) + params[spec.bias(i)]
        act = spec.out if i == spec.n_layers - 1 else spec.hidden
        h = _ACTIVATIONS[act](h)
    return h

