"""Seeded Philox streams with deterministic, named sub-streams."""

from __future__ import annotations

import zlib

import numpy as np

from ..exceptions import DimensionError
from .tensor import Tensor

ALGORITHM = "philox4x64-10"


def _key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode("utf-8"))


class SeededRng:
    """Counter-based random stream identified by ``(seed, path)``.

    ``child("init")`` and ``child(3)`` derive independent streams whose
    output depends only on the seed and the child path, never on how much
    the parent has been consumed.
    """

    algorithm = ALGORITHM

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed) % (1 << 64)
        self.path = tuple(path)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.Philox(seq))

    def child(self, name) -> "SeededRng":
        return SeededRng(self.seed, self.path + (_key(name),))

    def normal(self, shape) -> np.ndarray:
        return self.generator.standard_normal(shape)

    def uniform(self, shape=None) -> np.ndarray:
        return self.generator.random(shape)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self.generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def get_state(self) -> dict:
        state = self.generator.bit_generator.state
        return {"seed": self.seed, "path": list(self.path), "bit_generator": _jsonable(state)}

    def set_state(self, state: dict) -> None:
        self.generator.bit_generator.state = _from_jsonable(state["bit_generator"])

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, path={self.path}, algorithm={self.algorithm!r})"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__array__": [int(v) for v in obj.tolist()], "dtype": str(obj.dtype)}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _from_jsonable(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            return np.array(obj["__array__"], dtype=obj["dtype"])
        return {k: _from_jsonable(v) for k, v in obj.items()}
    return obj


def gaussian(rng: SeededRng, shape) -> Tensor:
    """I.i.d. standard-normal samples as a constant tensor."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    if int(np.prod(shape)) == 0:
        raise DimensionError(f"gaussian needs a non-empty shape, got {shape}")
    return Tensor._wrap(rng.normal(shape))
