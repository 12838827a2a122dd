"""First-order optimizers over named float64 parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"optimizer kind must be sgd or adam, got {self.kind!r}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")


def optimizer_step(state: OptimizerState, params: dict[str, np.ndarray],
                   grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Return updated copies of ``params``; ``state`` is advanced in place.

    Parameters without an entry in ``grads`` are left untouched.
    """
    for name, g in grads.items():
        if name not in params:
            raise ContractError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != params[name].shape:
            raise ContractError(
                f"gradient shape {np.shape(g)} does not match parameter {name!r} {params[name].shape}")
    state.step += 1
    lr = state.learning_rate
    out = dict(params)
    if state.kind == "sgd":
        for name, g in grads.items():
            out[name] = params[name] - lr * np.asarray(g)
        return out

    t = state.step
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for name, g in grads.items():
        g = np.asarray(g)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(params[name])
            v = np.zeros_like(params[name])
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        state.m[name] = m
        state.v[name] = v
        out[name] = params[name] - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return out
