"""Named parameter storage and seeded initialization.

Parameters live in a flat, insertion-ordered name -> Tensor map. Models
are built by creating every parameter up front in a fixed order from one
seeded generator, which is what makes runs bit-reproducible.
"""

from __future__ import annotations

import numpy as np

from salfuse.errors import ShapeError
from salfuse.tensor import Tensor


class ParamStore:
    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=trainable, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def trainable(self):
        return ((n, p) for n, p in self._params.items() if p.requires_grad)

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self._params.items()}

    def astype(self, dtype) -> "ParamStore":
        """Copy of the store in another float precision (gradcheck runs in 64-bit)."""
        out = ParamStore()
        for n, p in self._params.items():
            out.add(n, p.data.astype(dtype), trainable=p.requires_grad)
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place; names and shapes must match exactly."""
        missing = [n for n in self._params if n not in arrays]
        extra = [n for n in arrays if n not in self._params]
        if missing or extra:
            raise ShapeError(f"parameter set mismatch: missing={missing[:5]} "
                             f"extra={extra[:5]}")
        for n, p in self._params.items():
            a = arrays[n]
            if tuple(a.shape) != p.data.shape:
                raise ShapeError(f"parameter {n!r} has shape {tuple(a.shape)}, "
                                 f"expected {p.data.shape}")
            p.data[...] = a.astype(p.data.dtype)


def he_uniform(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    """Uniform fan-in init: U(-sqrt(6/fan_in), sqrt(6/fan_in))."""
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def init_conv(store: ParamStore, name: str, cout: int, cin: int, k: int,
              rng: np.random.Generator, bias: bool = False) -> None:
    store.add(f"{name}.w", he_uniform(rng, (cout, cin, k, k)))
    if bias:
        store.add(f"{name}.b", np.zeros(cout, dtype=np.float32))


def init_bn(store: ParamStore, name: str, c: int) -> None:
    store.add(f"{name}.gamma", np.ones(c, dtype=np.float32))
    store.add(f"{name}.beta", np.zeros(c, dtype=np.float32))
    store.add(f"{name}.running_mean", np.zeros(c, dtype=np.float32), trainable=False)
    store.add(f"{name}.running_var", np.ones(c, dtype=np.float32), trainable=False)


def init_linear(store: ParamStore, name: str, out_features: int, in_features: int,
                rng: np.random.Generator) -> None:
    store.add(f"{name}.w", he_uniform(rng, (out_features, in_features)))
    store.add(f"{name}.b", np.zeros(out_features, dtype=np.float32))
