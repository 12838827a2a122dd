"""Dense float64 tensors with a reverse-mode gradient tape.

A :class:`Tape` records every operation whose inputs include a tensor watched
by that tape. ``Tape.gradient(loss)`` walks the records backwards once and
returns the gradient of ``loss`` with respect to every watched leaf.

Tensors that are not attached to a tape are plain immutable values.
"""

from __future__ import annotations

import math
import struct
import warnings
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DataError, DomainError, ShapeError

NORM_EPS = 1e-12


class ZeroNormWarning(RuntimeWarning):
    """Raised (as a warning) when normalizing a vector with norm <= eps."""


class Tensor:
    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: "Tape | None" = None, node_id: int | None = None):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def taped(self) -> bool:
        return self.tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", node={self.node_id}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


class Tape:
    """Append-only record of taped operations for one forward pass."""

    def __init__(self):
        self._records: list[tuple[int, tuple[int | None, ...], Callable]] = []
        self._leaf_shapes: dict[int, tuple[int, ...]] = {}
        self._next_id = 0

    def __len__(self) -> int:
        return len(self._records)

    def _new_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def watch(self, value) -> Tensor:
        """Attach a copy of ``value`` to this tape as a differentiable leaf."""
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        nid = self._new_id()
        self._leaf_shapes[nid] = arr.shape
        return Tensor(arr, self, nid)

    def _record(self, out: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
        nid = self._new_id()
        parents = tuple(t.node_id if t.tape is self else None for t in inputs)
        self._records.append((nid, parents, vjp))
        return Tensor(out, self, nid)

    def gradient(self, loss: Tensor) -> dict[int, Tensor]:
        if loss.tape is not self:
            raise ContractError("loss is not recorded on this tape")
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape)}
        for nid, parents, vjp in reversed(self._records):
            g = grads.pop(nid, None)
            if g is None:
                continue
            for pid, pg in zip(parents, vjp(g)):
                if pid is None or pg is None:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        out = {}
        for lid, shape in self._leaf_shapes.items():
            g = grads.get(lid)
            out[lid] = Tensor(np.zeros(shape) if g is None else g)
        return out


def backward(loss: Tensor) -> dict[int, Tensor]:
    """Gradient of a taped scalar w.r.t. every leaf on its tape."""
    if loss.tape is None:
        raise ContractError("backward needs a taped loss")
    return loss.tape.gradient(loss)


def tensor_new(shape: Sequence[int], data: Sequence[float]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeError(f"extents must be positive, got {shape}")
    flat = np.asarray(data, dtype=np.float64).reshape(-1)
    if math.prod(shape) != flat.size:
        raise ShapeError(f"shape {shape} needs {math.prod(shape)} values, got {flat.size}")
    return Tensor(flat.reshape(shape))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(inputs: Sequence[Tensor]) -> Tape | None:
    tape = None
    for t in inputs:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise ContractError("operands belong to different tapes")
    return tape


def _apply(out: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = _tape_of(inputs)
    if tape is None:
        return Tensor(out)
    return tape._record(out, inputs, vjp)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# -- binary ops ----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return _apply(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return _apply(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    ad, bd = a.data, b.data
    return _apply(ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    ad, bd = a.data, b.data
    return _apply(ad / bd, (a, b),
                  lambda g: (_unbroadcast(g / bd, ad.shape),
                             _unbroadcast(-g * ad / (bd * bd), bd.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _apply(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


# -- unary ops -----------------------------------------------------------------

def neg(x) -> Tensor:
    x = as_tensor(x)
    return _apply(-x.data, (x,), lambda g: (-g,))


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _apply(c * x.data, (x,), lambda g: (c * g,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _apply(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _apply(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of a non-positive entry")
    xd = x.data
    return _apply(np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt of a negative entry")
    out = np.sqrt(x.data)
    return _apply(out, (x,), lambda g: (g * 0.5 / out,))


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _apply(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def absolute(x) -> Tensor:
    x = as_tensor(x)
    sign = np.sign(x.data)
    return _apply(np.abs(x.data), (x,), lambda g: (g * sign,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _apply(out, (x,), lambda g: (g * out * (1.0 - out),))


def softplus(x) -> Tensor:
    """log(1 + exp(x)), stable for large |x|."""
    x = as_tensor(x)
    xd = x.data
    out = np.maximum(xd, 0.0) + np.log1p(np.exp(-np.abs(xd)))
    e = np.exp(-np.abs(xd))
    sig = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _apply(out, (x,), lambda g: (g * sig,))


_UNARY = {"relu": relu, "exp": exp, "log": log, "neg": neg}


def map_unary(x, fn) -> Tensor:
    """Apply ``fn`` elementwise: one of relu/exp/log/neg, or ("scale", c)."""
    if isinstance(fn, tuple) and len(fn) == 2 and fn[0] == "scale":
        return scale(x, fn[1])
    try:
        return _UNARY[fn](x)
    except (KeyError, TypeError):
        raise ContractError(f"unknown unary op {fn!r}") from None


# -- reductions and shape ops --------------------------------------------------

def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    ax = axis + ndim if axis < 0 else axis
    if not 0 <= ax < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return ax


def reduce(x, kind: str = "sum", axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    ax = _norm_axis(axis, x.ndim)
    shape = x.shape
    if kind == "max":
        return _reduce_max(x, ax, keepdims)
    if kind == "sum":
        factor = 1.0
    elif kind == "mean":
        factor = 1.0 / (x.size if ax is None else shape[ax])
    else:
        raise ContractError(f"unknown reduction {kind!r}")
    out = x.data.sum(axis=ax, keepdims=keepdims) * factor

    def vjp(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g * factor, shape).copy(),)

    return _apply(out, (x,), vjp)


def _reduce_max(x: Tensor, ax, keepdims: bool) -> Tensor:
    """Max reduction; the gradient goes to the first maximal entry only."""
    flat = x.data.reshape(-1) if ax is None else np.moveaxis(x.data, ax, -1)
    idx = np.argmax(flat, axis=-1)
    out = np.max(x.data, axis=ax, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g).reshape(np.shape(idx))
        if ax is None:
            gx = np.zeros(x.size)
            gx[idx] = g
            return (gx.reshape(x.shape),)
        gx = np.zeros(flat.shape)
        np.put_along_axis(gx, idx[..., None], g[..., None], axis=-1)
        return (np.moveaxis(gx, -1, ax),)

    return _apply(out, (x,), vjp)


def amax(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return reduce(x, "max", axis, keepdims)


def sum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return reduce(x, "sum", axis, keepdims)


def mean(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return reduce(x, "mean", axis, keepdims)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _apply(out, (x,), lambda g: (g.reshape(old),))


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError("transpose needs a 2-d tensor")
    return _apply(x.data.T, (x,), lambda g: (g.T,))


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _apply(x.data[index], (x,), vjp)


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ax = _norm_axis(axis, xs[0].ndim)
    sizes = [x.shape[ax] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=ax)
                     for i in range(len(xs)))

    return _apply(np.concatenate([x.data for x in xs], axis=ax), xs, vjp)


# -- composite ops with fused gradients ---------------------------------------

def l2_normalize(v, axis: int = -1, eps: float = NORM_EPS) -> Tensor:
    """v / (||v|| + eps) along ``axis``. Warns when some norm is <= eps."""
    v = as_tensor(v)
    ax = _norm_axis(axis, v.ndim)
    vd = v.data
    n = np.sqrt((vd * vd).sum(axis=ax, keepdims=True))
    if np.any(n <= eps):
        warnings.warn("l2_normalize on a (near-)zero vector", ZeroNormWarning, stacklevel=2)
    d = n + eps
    out = vd / d
    n_safe = np.where(n > 0, n, 1.0)

    def vjp(g):
        dot = (vd * g).sum(axis=ax, keepdims=True)
        return (g / d - vd * dot / (n_safe * d * d),)

    return _apply(out, (v,), vjp)


def logsumexp(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    ax = _norm_axis(axis, x.ndim)
    xd = x.data
    m = xd.max(axis=ax, keepdims=True)
    e = np.exp(xd - m)
    s = e.sum(axis=ax, keepdims=True)
    out = (np.log(s) + m).squeeze(ax)
    soft = e / s
    return _apply(out, (x,), lambda g: (np.expand_dims(g, ax) * soft,))


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    ax = _norm_axis(axis, x.ndim)
    xd = x.data
    m = xd.max(axis=ax, keepdims=True)
    shifted = xd - m
    lse = np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _apply(out, (x,),
                  lambda g: (g - soft * g.sum(axis=ax, keepdims=True),))


# -- RTEN serialization --------------------------------------------------------

RTEN_MAGIC = b"RTEN"
RTEN_VERSION = 1


def to_rten_bytes(x) -> bytes:
    arr = np.ascontiguousarray(x.data if isinstance(x, Tensor) else x, dtype="<f8")
    head = RTEN_MAGIC + struct.pack("<II", RTEN_VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes(order="C")


def from_rten_bytes(buf: bytes) -> Tensor:
    if buf[:4] != RTEN_MAGIC:
        raise DataError("not an RTEN buffer (bad magic)")
    version, rank = struct.unpack_from("<II", buf, 4)
    if version != RTEN_VERSION:
        raise DataError(f"unsupported RTEN version {version}")
    shape = struct.unpack_from(f"<{rank}Q", buf, 12)
    offset = 12 + 8 * rank
    count = math.prod(shape)
    if len(buf) != offset + 8 * count:
        raise DataError("RTEN payload length does not match its header")
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
    return Tensor(arr.astype(np.float64).reshape(shape))


def save_rten(path, x) -> None:
    Path(path).write_bytes(to_rten_bytes(x))


def load_rten(path) -> Tensor:
    return from_rten_bytes(Path(path).read_bytes())
