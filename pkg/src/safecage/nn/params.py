from __future__ import annotations

from collections.abc import Iterator

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class ParameterSet:
    """Named float64 tensors with same-shape gradient buffers.

    All values live in one flat buffer (``data``) and all gradients in
    another (``grad_data``); the named tensors are views into them, which
    keeps optimizer and target-network updates to a handful of vector ops.
    ``version`` is bumped on every in-place mutation of the values so that
    forward caches can detect that they are stale. Optimizer moments live in
    ``opt_state``.
    """

    def __init__(self, entries: dict[str, np.ndarray] | None = None):
        self._shapes: dict[str, tuple[int, ...]] = {}
        self._slices: dict[str, slice] = {}
        self.data = np.zeros(0)
        self.grad_data = np.zeros(0)
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        self.opt_state: dict = {}
        self.version = 0
        for name, arr in (entries or {}).items():
            self.add(name, arr)

    def add(self, name: str, values: np.ndarray) -> None:
        if name in self._shapes:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.array(values, dtype=np.float64)
        start = self.data.size
        self._shapes[name] = arr.shape
        self._slices[name] = slice(start, start + arr.size)
        self.data = np.concatenate([self.data, arr.ravel()])
        self.grad_data = np.zeros_like(self.data)
        self._rebuild_views()

    def _rebuild_views(self) -> None:
        self._values = {k: self.data[s].reshape(self._shapes[k]) for k, s in self._slices.items()}
        self._grads = {k: self.grad_data[s].reshape(self._shapes[k]) for k, s in self._slices.items()}

    @property
    def names(self) -> list[str]:
        return list(self._shapes)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return dict(self._shapes)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __contains__(self, name: str) -> bool:
        return name in self._shapes

    def __iter__(self) -> Iterator[str]:
        return iter(self._shapes)

    def __len__(self) -> int:
        return len(self._shapes)

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def items(self):
        return self._values.items()

    def grads(self):
        return self._grads.items()

    def set(self, name: str, values: np.ndarray) -> None:
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != self._shapes[name]:
            raise ShapeError(f"{name}: expected shape {self._shapes[name]}, got {arr.shape}")
        self._values[name][...] = arr
        self.touch()

    def touch(self) -> None:
        self.version += 1

    def zero_grad(self) -> None:
        self.grad_data.fill(0.0)

    def grad_norm(self) -> float:
        return float(np.sqrt(np.dot(self.grad_data, self.grad_data)))

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        out._shapes = dict(self._shapes)
        out._slices = dict(self._slices)
        out.data = self.data.copy()
        out.grad_data = np.zeros_like(self.data)
        out._rebuild_views()
        return out

    def assert_compatible(self, other: "ParameterSet") -> None:
        if self._shapes != other._shapes or list(self._shapes) != list(other._shapes):
            raise ShapeError(f"parameter layouts differ: {self.shapes()} vs {other.shapes()}")

    def check_finite(self) -> None:
        if np.all(np.isfinite(self.data)):
            return
        for name, v in self._values.items():
            if not np.all(np.isfinite(v)):
                raise NonFiniteError(f"non-finite values in parameter {name!r}")

    def flat(self) -> np.ndarray:
        return self.data.copy()

    def equals(self, other: "ParameterSet") -> bool:
        """Bitwise equality of names, shapes and values."""
        return list(self._shapes.items()) == list(other._shapes.items()) and np.array_equal(self.data, other.data)
