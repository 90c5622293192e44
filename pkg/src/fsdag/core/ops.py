"""Differentiable operations over Tensor.

Every function computes its forward value with numpy and, when a tape is
active and some input requires a gradient, records a closure that maps the
upstream gradient to one gradient per input.
"""

from __future__ import annotations

from collections.abc import Sequence
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from fsdag.core.tensor import BackwardFn
from fsdag.core.tensor import DimensionError
from fsdag.core.tensor import RankError
from fsdag.core.tensor import Tensor
from fsdag.core.tensor import active_tape

INSTANCE_NORM_EPS = 1e-5
L2_NORM_EPS = 1e-12


def as_tensor(value: Any) -> Tensor:
    """Return value unchanged if it is a Tensor, else a constant Tensor."""
    return value if isinstance(value, Tensor) else Tensor(value)


def _emit(op: str, out: np.ndarray, inputs: tuple[Tensor, ...], grad_fn: BackwardFn) -> Tensor:
    tape = active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor.wrap(out, requires_grad=needs_grad)
    if needs_grad:
        tape.record(op, inputs, result, grad_fn)
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --- arithmetic ---


def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _emit(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _emit(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _emit(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, factor: float) -> Tensor:
    return _emit("scale", a.data * factor, (a,), lambda g: (g * factor,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an m×k and a k×n tensor."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _emit("matmul", a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias, bias broadcast over rows."""
    return add(matmul(x, weight), bias)


# --- products used by fusion ---


def kron(a: Tensor, b: Tensor) -> Tensor:
    """Kronecker product of two rank-1 tensors: out[i*q + j] = a[i]*b[j]."""
    if a.ndim != 1 or b.ndim != 1:
        raise RankError(f"kron: expected rank-1 operands, got shapes {a.shape} and {b.shape}")
    p, q = a.shape[0], b.shape[0]

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        block = g.reshape(p, q)
        return block @ b.data, a.data @ block

    return _emit("kron", np.outer(a.data, b.data).reshape(p * q), (a, b), grad_fn)


def kron_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise Kronecker product: row i of the result is kron(a[i], b[i])."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DimensionError(f"kron_rows: incompatible shapes {a.shape} and {b.shape}")
    rows, p = a.shape
    q = b.shape[1]

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        block = g.reshape(rows, p, q)
        return np.einsum("ipq,iq->ip", block, b.data), np.einsum("ipq,ip->iq", block, a.data)

    out = np.einsum("ip,iq->ipq", a.data, b.data).reshape(rows, p * q)
    return _emit("kron_rows", out, (a, b), grad_fn)


# --- nonlinearities and normalization ---


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    active = x.data > 0
    return _emit("relu", np.where(active, x.data, 0.0), (x,), lambda g: (g * active,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax along axis.

    Positions where mask is False get probability 0 and no gradient. Every
    slice along axis must keep at least one position.
    """
    keep = np.ones(x.shape, dtype=bool) if mask is None else np.broadcast_to(mask, x.shape)
    if not np.all(keep.any(axis=axis)):
        raise DimensionError("softmax: a slice has every position masked")
    shifted = x.data - np.max(np.where(keep, x.data, -np.inf), axis=axis, keepdims=True)
    exp = np.where(keep, np.exp(np.where(keep, shifted, 0.0)), 0.0)
    y = exp / exp.sum(axis=axis, keepdims=True)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _emit("softmax", y, (x,), grad_fn)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - log_norm
    probs = np.exp(y)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _emit("log_softmax", y, (x,), grad_fn)


def instance_norm(x: Tensor, eps: float = INSTANCE_NORM_EPS) -> Tensor:
    """Normalize each row of an n×d tensor to zero mean and unit variance."""
    if x.ndim != 2:
        raise RankError(f"instance_norm: expected an n×d tensor, got shape {x.shape}")
    mean = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mean
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    y = centered * inv_std

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        g_mean = g.mean(axis=1, keepdims=True)
        gy_mean = (g * y).mean(axis=1, keepdims=True)
        return (inv_std * (g - g_mean - y * gy_mean),)

    return _emit("instance_norm", y, (x,), grad_fn)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = L2_NORM_EPS) -> Tensor:
    """x / (||x||_2 + eps) along axis; zero vectors stay zero."""
    norm = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    denom = norm + eps
    y = x.data / denom

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        dot = np.sum(g * x.data, axis=axis, keepdims=True)
        safe_norm = np.where(norm > 0, norm, 1.0)
        radial = np.where(norm > 0, dot / (denom * denom * safe_norm), 0.0)
        return (g / denom - x.data * radial,)

    return _emit("l2_normalize", y, (x,), grad_fn)


# --- shape manipulation ---


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[d] != tensors[0].shape[d] for d in range(ndim) if d != axis
        ):
            shapes = ", ".join(str(s.shape) for s in tensors)
            raise DimensionError(f"concat: shapes {shapes} disagree off axis {axis}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g: np.ndarray) -> list[np.ndarray]:
        return np.split(g, bounds, axis=axis)

    return _emit("concat", np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), grad_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    original = x.shape
    return _emit("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather x[index] along axis 0; repeated indices accumulate gradient."""
    index = np.asarray(index, dtype=np.intp)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros_like(x.data)
        np.add.at(grad, index, g)
        return (grad,)

    return _emit("take_rows", x.data[index], (x,), grad_fn)


def sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", np.sum(x.data, axis=axis, keepdims=keepdims), (x,), grad_fn)


def mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def elementwise(name: str, *args: Any) -> Tensor:
    """Dispatch one of relu, tanh, add, concat by name."""
    if name == "relu":
        return relu(*args)
    if name == "tanh":
        return tanh(*args)
    if name == "add":
        return add(*args)
    if name == "concat":
        return concat(args)
    raise ValueError(f"unknown elementwise operation: {name}")


# --- vision ---


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of a C_in×H×W map with C_out×C_in×k×k filters."""
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[1] != x.shape[0]:
        raise DimensionError(f"conv2d: input {x.shape} does not match filters {weight.shape}")
    c_out, c_in, k, _ = weight.shape
    padded = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(padded, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    out_h, out_w = windows.shape[1], windows.shape[2]
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(out_h * out_w, c_in * k * k)
    kernel = weight.data.reshape(c_out, c_in * k * k)
    out = (cols @ kernel.T + bias.data).T.reshape(c_out, out_h, out_w)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        flat = g.reshape(c_out, out_h * out_w).T
        grad_w = (flat.T @ cols).reshape(weight.shape)
        grad_b = flat.sum(axis=0)
        grad_cols = (flat @ kernel).reshape(out_h, out_w, c_in, k, k)
        grad_padded = np.zeros_like(padded)
        for di in range(k):
            for dj in range(k):
                grad_padded[
                    :, di : di + stride * out_h : stride, dj : dj + stride * out_w : stride
                ] += grad_cols[:, :, :, di, dj].transpose(2, 0, 1)
        h, w = x.shape[1], x.shape[2]
        return grad_padded[:, padding : padding + h, padding : padding + w], grad_w, grad_b

    return _emit("conv2d", out, (x, weight, bias), grad_fn)


def bilinear_gather(fmap: Tensor, ys: np.ndarray, xs: np.ndarray) -> Tensor:
    """Sample a C×h×w map at n fractional points; returns n×C.

    Points are clamped to the map. Interpolation weights are constants, so the
    gradient flows to the map only.
    """
    _, h, w = fmap.shape
    ys = np.clip(np.asarray(ys, dtype=np.float64), 0.0, h - 1)
    xs = np.clip(np.asarray(xs, dtype=np.float64), 0.0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = ys - y0
    wx = xs - x0
    corners = (
        (y0, x0, (1 - wy) * (1 - wx)),
        (y0, x1, (1 - wy) * wx),
        (y1, x0, wy * (1 - wx)),
        (y1, x1, wy * wx),
    )
    out = np.zeros((fmap.shape[0], ys.shape[0]))
    for yi, xi, weight in corners:
        out = out + fmap.data[:, yi, xi] * weight

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros_like(fmap.data)
        upstream = g.T
        for yi, xi, weight in corners:
            np.add.at(grad, (slice(None), yi, xi), upstream * weight)
        return (grad,)

    return _emit("bilinear_gather", out.T, (fmap,), grad_fn)
