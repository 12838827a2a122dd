"""Dense-layer helpers over named parameter dictionaries."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .rng import stream


def init_linear(seed: int, name: str, fan_in: int, fan_out: int, bias: bool = True,
                gain: float = 2.0) -> dict[str, np.ndarray]:
    """He-style normal init; stream keyed by the layer name so layers are independent."""
    rng = stream(seed, "init", name)
    params = {f"{name}.w": rng.normal_array((fan_in, fan_out)) * np.sqrt(gain / fan_in)}
    if bias:
        params[f"{name}.b"] = np.zeros(fan_out)
    return params


def linear(x: T.Tensor, p: dict, name: str) -> T.Tensor:
    out = x @ p[f"{name}.w"]
    b = p.get(f"{name}.b")
    return out if b is None else out + b


def mlp(x: T.Tensor, p: dict, names: list[str]) -> T.Tensor:
    """Linear layers joined by ReLU; no activation after the last."""
    for i, name in enumerate(names):
        x = linear(x, p, name)
        if i < len(names) - 1:
            x = T.relu(x)
    return x


def watch_all(tape: T.Tape, params: dict[str, np.ndarray]) -> dict[str, T.Tensor]:
    return {k: tape.watch(v) for k, v in sorted(params.items())}


def constants(params: dict[str, np.ndarray]) -> dict[str, T.Tensor]:
    return {k: T.Tensor(v) for k, v in params.items()}


def grads_by_name(grads: dict[int, T.Tensor], watched: dict[str, T.Tensor],
                  names=None) -> dict[str, np.ndarray]:
    names = watched.keys() if names is None else names
    return {k: grads[watched[k].node_id].numpy() for k in names}


def pool_images(images, grid: int) -> np.ndarray:
    """Average-pool (N,H,W,C) images onto a grid x grid raster and flatten."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    n, h, w, c = images.shape
    if h % grid or w % grid:
        from .errors import ShapeError

        raise ShapeError(f"image {h}x{w} is not divisible into a {grid}x{grid} grid")
    pooled = images.reshape(n, grid, h // grid, grid, w // grid, c).mean(axis=(2, 4))
    return pooled.reshape(n, grid * grid * c)
