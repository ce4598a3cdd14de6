"""Differentiable operations on :class:`~ssformer.tensor.Tensor`.

Every function takes tensors (or array-likes, treated as constants) and
returns a new tensor. Backward closures receive the upstream gradient as a
numpy array and return one gradient per parent, ``None`` for parents that do
not need one.
"""
from __future__ import annotations

import builtins
import math
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import ContractError, DataError, DimensionError, NumericError
from .tensor import Tensor, make_result, record_macs

GELU_K = 0.7978845608  # sqrt(2 / pi)
GELU_C = 0.044715


def _t(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


def _scalar_like(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = _t(a) if isinstance(a, Tensor) or not isinstance(b, Tensor) else _scalar_like(a, b)
    b = _scalar_like(b, a)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc

    def _backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(out, (a, b), _backward, "add")


def sub(a, b) -> Tensor:
    a = _t(a) if isinstance(a, Tensor) or not isinstance(b, Tensor) else _scalar_like(a, b)
    b = _scalar_like(b, a)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}") from exc

    def _backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result(out, (a, b), _backward, "sub")


def mul(a, b) -> Tensor:
    a = _t(a) if isinstance(a, Tensor) or not isinstance(b, Tensor) else _scalar_like(a, b)
    b = _scalar_like(b, a)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc

    def _backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), _backward, "mul")


def gelu(x) -> Tensor:
    """GELU, tanh approximation with constant 0.7978845608."""
    x = _t(x)
    d = x.data
    inner = GELU_K * (d + GELU_C * d ** 3)
    th = np.tanh(inner)
    out = 0.5 * d * (1.0 + th)
    record_macs("gelu", d.size)

    def _backward(g):
        dinner = GELU_K * (1.0 + 3.0 * GELU_C * d ** 2)
        return (g * (0.5 * (1.0 + th) + 0.5 * d * (1.0 - th ** 2) * dinner),)

    return make_result(out.astype(d.dtype, copy=False), (x,), _backward, "gelu")


# ---------------------------------------------------------------- reductions

def sum(x, axis=None, keepdims=False) -> Tensor:
    x = _t(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(out, dtype=x.dtype), (x,), _backward, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = _t(x)
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    n = x.data.size // max(np.asarray(out).size, 1)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype),)

    return make_result(np.asarray(out, dtype=x.dtype), (x,), _backward, "mean")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes."""
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise DimensionError(f"matmul batch dims not broadcastable: {a.shape} @ {b.shape}") from exc
    out = np.matmul(a.data, b.data)
    m, k = a.shape[-2:]
    n = b.shape[-1]
    record_macs("matmul", math.prod(batch) * m * k * n)

    def _backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_result(out, (a, b), _backward, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` shaped (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# ---------------------------------------------------------------- shape ops

def reshape(x, shape) -> Tensor:
    x = _t(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} to {tuple(shape)}") from exc

    def _backward(g):
        return (g.reshape(x.shape),)

    return make_result(out, (x,), _backward, "reshape")


def permute(x, axes) -> Tensor:
    x = _t(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"invalid permutation {axes} for shape {x.shape}")
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    inverse = tuple(np.argsort(axes))

    def _backward(g):
        return (np.ascontiguousarray(np.transpose(g, inverse)),)

    return make_result(out, (x,), _backward, "permute")


def swap_last(x) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(x, axes)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [_t(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"cannot concatenate shapes {shapes} on axis {axis}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, tuple(tensors), _backward, "concat")


def getitem(x, index) -> Tensor:
    x = _t(x)
    out = np.array(x.data[index], copy=True)
    parts = index if isinstance(index, tuple) else (index,)
    advanced = any(isinstance(p, (list, np.ndarray)) for p in parts)

    def _backward(g):
        full = np.zeros_like(x.data)
        if advanced:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return make_result(out, (x,), _backward, "getitem")


def take(table, index: np.ndarray) -> Tensor:
    """Gather rows of ``table`` (first axis) by an integer index array."""
    table = _t(table)
    index = np.asarray(index)
    out = table.data[index]

    def _backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, index, g)
        return (full,)

    return make_result(out, (table,), _backward, "take")


def pad(x, pad_width) -> Tensor:
    """Zero-pad; ``pad_width`` follows :func:`numpy.pad`."""
    x = _t(x)
    pad_width = [tuple(p) for p in pad_width]
    if all(p == (0, 0) for p in pad_width):
        return x
    out = np.pad(x.data, pad_width)
    slices = tuple(builtins.slice(lo, lo + n) for (lo, _), n in zip(pad_width, x.shape))

    def _backward(g):
        return (np.ascontiguousarray(g[slices]),)

    return make_result(out, (x,), _backward, "pad")


def cyclic_roll(x, shifts, axes) -> Tensor:
    x = _t(x)
    shifts, axes = tuple(shifts), tuple(axes)
    out = np.roll(x.data, shifts, axis=axes)

    def _backward(g):
        return (np.roll(g, tuple(-s for s in shifts), axis=axes),)

    return make_result(out, (x,), _backward, "cyclic_roll")


# ---------------------------------------------------------------- normalization

def softmax(x, axis: int = -1) -> Tensor:
    x = _t(x)
    if np.isnan(x.data).any():
        raise NumericError("softmax received NaN input")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    record_macs("softmax", y.size)

    def _backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), _backward, "softmax")


def layernorm(x, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gamma * xhat + beta``."""
    if eps <= 0:
        raise ContractError("layernorm eps must be positive")
    x = _t(x)
    c = x.shape[-1]
    for name, p in (("gamma", gamma), ("beta", beta)):
        if p is not None and tuple(p.shape) != (c,):
            raise DimensionError(f"layernorm {name} shape {tuple(p.shape)} does not match channels {c}")
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    centered = d - mu
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data
    record_macs("layernorm", d.size)
    parents = tuple(p for p in (x, gamma, beta) if p is not None)

    def _backward(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gamma.data if gamma is not None else g
        dx = inv_std * (
            dxhat - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        grads = [dx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=lead) if gamma.requires_grad else None)
        if beta is not None:
            grads.append(g.sum(axis=lead) if beta.requires_grad else None)
        return tuple(grads)

    return make_result(out.astype(d.dtype, copy=False), parents, _backward, "layernorm")


# ---------------------------------------------------------------- losses

def cross_entropy(logits, labels, ignore_index: int = 255) -> Tensor:
    """Mean cross-entropy over positions whose label is not ``ignore_index``.

    ``logits`` has shape (..., N); ``labels`` is an integer array of the
    leading shape. An input where every label is ignored yields a zero loss.
    """
    logits = _t(logits)
    labels = np.asarray(labels)
    n_cls = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise DimensionError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    flat = logits.data.reshape(-1, n_cls)
    lab = labels.reshape(-1).astype(np.int64)
    valid = lab != ignore_index
    bad = valid & ((lab < 0) | (lab >= n_cls))
    if bad.any():
        pos = int(np.flatnonzero(bad)[0])
        raise DataError(f"label {lab[pos]} out of range [0, {n_cls}) at flat position {pos}")
    count = int(valid.sum())
    shifted = flat - flat.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    safe = np.where(valid, lab, 0)
    picked = logp[np.arange(lab.size), safe]
    loss = -(picked * valid).sum() / max(count, 1)

    def _backward(g):
        p = np.exp(logp)
        p[np.arange(lab.size), safe] -= 1.0
        p *= valid[:, None]
        p *= g / max(count, 1)
        return (p.reshape(logits.shape).astype(logits.dtype, copy=False),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), _backward, "cross_entropy")


# ---------------------------------------------------------------- resampling

@lru_cache(maxsize=256)
def interpolation_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) half-pixel bilinear weights with edge clamping."""
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for dst in range(n_out):
        src = (dst + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1)
        i0 = int(math.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        mat[dst, i0] += 1.0 - frac
        mat[dst, i1] += frac
    mat.setflags(write=False)
    return mat


def bilinear_upsample(x, target_h: int, target_w: int) -> Tensor:
    """Upsample a channel-last map (..., H, W, C) to (..., target_h, target_w, C)."""
    x = _t(x)
    if x.ndim < 3:
        raise DimensionError(f"bilinear_upsample expects (..., H, W, C), got {x.shape}")
    h, w = x.shape[-3], x.shape[-2]
    if target_h < h or target_w < w:
        raise ContractError(f"bilinear_upsample only upsamples: {(h, w)} -> {(target_h, target_w)}")
    if (target_h, target_w) == (h, w):
        return make_result(x.data.copy(), (x,), lambda g: (g,), "bilinear_upsample")
    ah = interpolation_matrix(h, target_h).astype(x.dtype)
    aw = interpolation_matrix(w, target_w).astype(x.dtype)
    # rows: (..., H, W, C) -> (..., tH, W, C); then columns -> (..., tH, tW, C)
    tmp = np.einsum("ih,...hwc->...iwc", ah, x.data)
    out = np.einsum("jw,...iwc->...ijc", aw, tmp)
    record_macs("bilinear_upsample", 4 * out.size)

    def _backward(g):
        gt = np.einsum("jw,...ijc->...iwc", aw, g)
        return (np.einsum("ih,...iwc->...hwc", ah, gt),)

    return make_result(np.ascontiguousarray(out), (x,), _backward, "bilinear_upsample")
