"""Feedforward / recurrent networks with hand-written backpropagation.

Non-recurrent networks take inputs shaped ``(..., input_dim)``. Networks
containing a memory layer take time-major sequences ``(T, B, input_dim)``
and an explicit :class:`RecurrentState` per memory layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from safecage.nn import _kernels
from safecage.nn.params import ParameterSet, ShapeError


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class Dense:
    width: int
    activation: str = "relu"


@dataclass(frozen=True)
class Memory:
    """LSTM layer of the given width."""

    width: int


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    layers: tuple = ()
    output_dim: int = 1
    output_activation: str = "linear"
    output_init_scale: float = 1.0

    def __post_init__(self):
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ValueError("input_dim and output_dim must be positive")
        for layer in self.layers:
            if layer.width <= 0:
                raise ValueError(f"layer width must be positive: {layer}")
        if self.output_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.output_activation!r}")

    @property
    def recurrent(self) -> bool:
        return any(isinstance(layer, Memory) for layer in self.layers)

    @property
    def all_layers(self) -> tuple:
        return tuple(self.layers) + (Dense(self.output_dim, self.output_activation),)


@dataclass
class RecurrentState:
    cell: np.ndarray
    hidden: np.ndarray

    @classmethod
    def zeros(cls, width: int, batch: int = 1) -> "RecurrentState":
        return cls(np.zeros((batch, width)), np.zeros((batch, width)))

    def copy(self) -> "RecurrentState":
        return RecurrentState(self.cell.copy(), self.hidden.copy())


def _relu(z):
    return np.maximum(z, 0.0)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


# (forward, derivative expressed through the activation output)
_ACTIVATIONS = {
    "relu": (_relu, lambda y: (y > 0.0).astype(np.float64)),
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "sigmoid": (_sigmoid, lambda y: y * (1.0 - y)),
    "linear": (None, None),
}


@dataclass
class Cache:
    version: int
    params_id: int
    layers: list = field(default_factory=list)
    input_shape: tuple = ()


class Network:
    def __init__(self, spec: NetworkSpec, prefix: str = ""):
        self.spec = spec
        self.prefix = prefix
        self._layers = []
        fan_in = spec.input_dim
        for idx, layer in enumerate(spec.all_layers):
            name = f"{prefix}l{idx}"
            if isinstance(layer, Memory):
                self._layers.append(("memory", name, fan_in, layer.width, None))
            else:
                if layer.activation not in _ACTIVATIONS:
                    raise ValueError(f"unknown activation {layer.activation!r}")
                self._layers.append(("dense", name, fan_in, layer.width, layer.activation))
            fan_in = layer.width
        # per-layer (kind, parameter keys, width, activation fn) for the hot path
        self._plan = []
        self._derivs = []
        for kind, name, _, n_out, act in self._layers:
            if kind == "dense":
                fn, deriv = _ACTIVATIONS[act]
                self._plan.append((0, (f"{name}.W", f"{name}.b"), n_out, fn))
                self._derivs.append(deriv)
            else:
                self._plan.append((1, (f"{name}.Wx", f"{name}.Wh", f"{name}.b"), n_out, None))
                self._derivs.append(None)
        self._recurrent = spec.recurrent
        self._n_memory = len(self.memory_widths)

    @property
    def memory_widths(self) -> list[int]:
        return [w for kind, _, _, w, _ in self._layers if kind == "memory"]

    def init_params(self, rng: np.random.Generator) -> ParameterSet:
        """Uniform fan-in initialisation; the output layer is scaled by ``output_init_scale``."""
        params = ParameterSet()
        last = len(self._layers) - 1
        for idx, (kind, name, n_in, n_out, _) in enumerate(self._layers):
            if kind == "dense":
                bound = 1.0 / np.sqrt(n_in)
                scale = self.spec.output_init_scale if idx == last else 1.0
                params.add(f"{name}.W", rng.uniform(-bound, bound, (n_in, n_out)) * scale)
                params.add(f"{name}.b", rng.uniform(-bound, bound, n_out) * scale)
            else:
                bound = 1.0 / np.sqrt(n_out)
                params.add(f"{name}.Wx", rng.uniform(-bound, bound, (n_in, 4 * n_out)))
                params.add(f"{name}.Wh", rng.uniform(-bound, bound, (n_out, 4 * n_out)))
                b = rng.uniform(-bound, bound, 4 * n_out)
                b[n_out:2 * n_out] += 1.0  # forget-gate bias
                params.add(f"{name}.b", b)
        return params

    def check_params(self, params: ParameterSet) -> None:
        expected = self.init_params(np.random.default_rng(0)).shapes()
        if params.shapes() != expected:
            raise ShapeError(f"parameter layout {params.shapes()} does not match network {expected}")

    def initial_state(self, batch: int = 1) -> list[RecurrentState] | None:
        if not self.spec.recurrent:
            return None
        return [RecurrentState.zeros(w, batch) for w in self.memory_widths]

    def forward(self, params: ParameterSet, x: np.ndarray, state=None):
        """Returns ``(output, next_state, cache)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.spec.input_dim:
            raise ShapeError(f"expected input dim {self.spec.input_dim}, got shape {x.shape}")
        recurrent = self._recurrent
        if recurrent:
            if x.ndim != 3:
                raise ShapeError(f"recurrent network expects (T, B, F) input, got {x.shape}")
            if state is None or len(state) != self._n_memory:
                raise ShapeError("recurrent network requires one RecurrentState per memory layer")
        elif state is not None:
            raise ShapeError("state supplied to a network without memory layers")
        entries = []
        new_state = []
        mem_idx = 0
        h = x
        for kind, keys, n_out, fn in self._plan:
            if kind == 0:
                z = (h.reshape(-1, h.shape[-1]) @ params[keys[0]] + params[keys[1]]).reshape(h.shape[:-1] + (n_out,))
                y = z if fn is None else fn(z)
                entries.append((h, y))
                h = y
            else:
                st = state[mem_idx]
                if st.hidden.shape != (x.shape[1], n_out):
                    raise ShapeError(f"recurrent state shape {st.hidden.shape} != {(x.shape[1], n_out)}")
                mem_idx += 1
                xproj = (h.reshape(-1, h.shape[-1]) @ params[keys[0]] + params[keys[2]]).reshape(h.shape[:-1] + (4 * n_out,))
                hs, cs, gates = _kernels.lstm_forward(xproj, params[keys[1]], st.hidden, st.cell)
                entries.append((h, hs, cs, gates, st.hidden, st.cell))
                new_state.append(RecurrentState(cs[-1].copy(), hs[-1].copy()))
                h = hs
        cache = Cache(params.version, id(params), entries, x.shape)
        return h, (new_state if recurrent else None), cache

    def backward(self, params: ParameterSet, cache: Cache, output_grad: np.ndarray, accumulate: bool = False):
        """Backpropagate ``output_grad``; returns ``(param_grads, input_grad)``.

        Parameter gradients are written into ``params``' gradient buffers
        (added to them when ``accumulate`` is set).
        """
        if cache.params_id != id(params) or cache.version != params.version:
            raise StaleCacheError("cache does not match the current parameter values")
        if not accumulate:
            params.zero_grad()
        d = np.asarray(output_grad, dtype=np.float64)
        for (kind, keys, n_out, _), deriv, entry in zip(
            reversed(self._plan), reversed(self._derivs), reversed(cache.layers)
        ):
            if kind == 0:
                h_in, y = entry
                dz = d if deriv is None else d * deriv(y)
                dz2 = dz.reshape(-1, n_out)
                params.grad(keys[0])[...] += h_in.reshape(-1, h_in.shape[-1]).T @ dz2
                params.grad(keys[1])[...] += dz2.sum(axis=0)
                d = (dz2 @ params[keys[0]].T).reshape(h_in.shape)
            else:
                h_in, hs, cs, gates, h0, c0 = entry
                dz, _, _ = _kernels.lstm_backward(np.ascontiguousarray(d), gates, cs, c0, params[keys[1]])
                h_prev = np.concatenate([h0[None], hs[:-1]], axis=0)
                dz2 = dz.reshape(-1, 4 * n_out)
                params.grad(keys[0])[...] += h_in.reshape(-1, h_in.shape[-1]).T @ dz2
                params.grad(keys[1])[...] += h_prev.reshape(-1, n_out).T @ dz2
                params.grad(keys[2])[...] += dz2.sum(axis=0)
                d = (dz2 @ params[keys[0]].T).reshape(h_in.shape)
        return dict(params.grads()), d


def actor_spec(variant: str = "deep", hidden: int = 50, lstm_units: int = 16) -> NetworkSpec:
    if variant == "deep":
        layers = (Dense(hidden), Dense(hidden), Dense(hidden), Memory(lstm_units))
    elif variant == "shallow":
        layers = (Dense(hidden),)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return NetworkSpec(4, layers, 1, "tanh", output_init_scale=0.1)


def critic_spec(hidden: int = 50) -> NetworkSpec:
    # state features and action are concatenated at the input of the hidden layer
    return NetworkSpec(5, (Dense(hidden),), 1, "linear")
