from __future__ import annotations

import numpy as np

from safecage.nn.params import NonFiniteError, ParameterSet

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def clip_global_norm(params: ParameterSet, max_norm: float = 0.5) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``."""
    g = params.grad_norm()
    if not np.isfinite(g):
        raise NonFiniteError("non-finite gradient norm")
    if g <= max_norm:
        return 1.0
    scale = max_norm / g
    params.grad_data *= scale
    return scale


def optimizer_step(params: ParameterSet, learning_rate: float, method: str = "adam") -> None:
    """One in-place update from the populated gradients.

    Adam moments and the step counter persist in ``params.opt_state``.
    """
    g = params.grad_data
    if method == "sgd":
        params.data -= learning_rate * g
    elif method == "adam":
        st = params.opt_state
        if not st:
            st["t"] = 0
            st["m"] = np.zeros_like(params.data)
            st["v"] = np.zeros_like(params.data)
        st["t"] += 1
        t = st["t"]
        m, v = st["m"], st["v"]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        params.data -= learning_rate * (m / (1.0 - BETA1 ** t)) / (np.sqrt(v / (1.0 - BETA2 ** t)) + EPS)
    else:
        raise ValueError(f"unknown optimizer {method!r}")
    params.touch()
    params.check_finite()


def soft_update(target: ParameterSet, source: ParameterSet, tau: float = 1e-3) -> None:
    """Move ``target`` a fraction ``tau`` of the way towards ``source``."""
    target.assert_compatible(source)
    target.data *= 1.0 - tau
    target.data += tau * source.data
    target.touch()


def hard_update(target: ParameterSet, source: ParameterSet) -> None:
    target.assert_compatible(source)
    target.data[...] = source.data
    target.touch()
