"""Differentiable tensor kernels.

Every function takes and returns :class:`~unetr.tensor.Tensor` objects. When a
tape is active and any input requires a gradient, the operation records a
backward closure on it.

Volumetric kernels use channel-first layout ``[C, H, W, D]`` and the
cross-correlation convention (no kernel flip).
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigurationError, NumericalError, ShapeError
from .tensor import Tensor, active_tape

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _emit(op: str, inputs: Sequence[Tensor], data: np.ndarray, backward) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f'{op}: shapes {a.shape} and {b.shape} are not broadcastable') from None


# elementwise arithmetic

def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape('add', a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _emit('add', (a, b), a.data + b.data, backward)


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape('sub', a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _emit('sub', (a, b), a.data - b.data, backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape('mul', a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _emit('mul', (a, b), a.data * b.data, backward)


def div(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape('div', a, b)
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)
    return _emit('div', (a, b), out, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes with broadcast batch axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f'matmul shape mismatch: {a.shape} x {b.shape}')
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f'matmul batch dimensions not broadcastable: {a.shape} x {b.shape}') from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb
    return _emit('matmul', (a, b), np.matmul(a.data, b.data), backward)


# reductions and shape manipulation

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _emit('sum', (x,), np.asarray(out), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else math.prod(np.array(x.shape)[np.atleast_1d(axis)])
    return div(sum(x, axis=axis, keepdims=keepdims), float(count))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f'cannot reshape {x.shape} into {tuple(shape)}') from None

    def backward(g):
        return (g.reshape(x.shape),)
    return _emit('reshape', (x,), out, backward)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)
    return _emit('transpose', (x,), np.transpose(x.data, axes), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f'cannot concatenate shapes {[t.shape for t in tensors]} on axis {axis}') from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _emit('concat', tensors, out, backward)


def getitem(x: Tensor, key) -> Tensor:
    """Basic (slice) indexing."""
    out = x.data[key]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)
    return _emit('getitem', (x,), out, backward)


# activations and normalization

def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)
    return _emit('gelu', (x,), (x.data * cdf).astype(x.dtype, copy=False), backward)


def leaky_relu(x: Tensor, negative_slope: float = 0.01) -> Tensor:
    positive = x.data > 0

    def backward(g):
        return (np.where(positive, g, g * negative_slope),)
    return _emit('leaky_relu', (x,), np.where(positive, x.data, x.data * negative_slope), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if np.isnan(x.data).any():
        raise NumericalError(f'softmax input of shape {x.shape} contains NaN')
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return _emit('softmax', (x,), y, backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if np.isnan(x.data).any():
        raise NumericalError(f'log_softmax input of shape {x.shape} contains NaN')
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
    return _emit('log_softmax', (x,), out, backward)


def _normalize(op: str, x: Tensor, gamma: Tensor, beta: Tensor, axes: tuple[int, ...],
               param_shape: tuple[int, ...], eps: float) -> Tensor:
    mu = x.data.mean(axis=axes, keepdims=True)
    centred = x.data - mu
    inv = 1.0 / np.sqrt((centred * centred).mean(axis=axes, keepdims=True) + eps)
    xhat = centred * inv
    g_b = gamma.data.reshape(param_shape)
    out = xhat * g_b + beta.data.reshape(param_shape)

    def backward(g):
        gx = ggamma = gbeta = None
        if x.requires_grad:
            gxhat = g * g_b
            gx = inv * (
                gxhat
                - gxhat.mean(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True)
            )
        if gamma.requires_grad:
            ggamma = _unbroadcast(g * xhat, param_shape).reshape(gamma.shape)
        if beta.requires_grad:
            gbeta = _unbroadcast(g, param_shape).reshape(beta.shape)
        return gx, ggamma, gbeta
    return _emit(op, (x, gamma, beta), out.astype(x.dtype, copy=False), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last (embedding) axis, then apply the affine map."""
    width = x.shape[-1] if x.ndim else 0
    if width == 0:
        raise ShapeError(f'layer_norm needs a non-empty last axis, got shape {x.shape}')
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ShapeError(f'layer_norm parameters {gamma.shape}/{beta.shape} do not match width {width}')
    return _normalize('layer_norm', x, gamma, beta, (-1,), (width,), eps)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over the spatial axes of a ``[C, H, W, D]`` map."""
    channels = x.shape[0]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f'instance_norm parameters {gamma.shape}/{beta.shape} do not match {channels} channels')
    spatial = tuple(range(1, x.ndim))
    return _normalize('instance_norm', x, gamma, beta, spatial, (channels,) + (1,) * len(spatial), eps)


def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-voxel normalization across the channel axis of a ``[C, H, W, D]`` map."""
    channels = x.shape[0]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f'channel_norm parameters {gamma.shape}/{beta.shape} do not match {channels} channels')
    return _normalize('channel_norm', x, gamma, beta, (0,), (channels,) + (1,) * (x.ndim - 1), eps)


# volumetric convolution

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv3d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Direct 3D cross-correlation.

    x is ``[C_in, H, W, D]``, w is ``[C_out, C_in, kh, kw, kd]``; the output extent
    per axis is ``floor((n + 2*padding - k) / stride) + 1``.
    """
    if x.ndim != 4 or w.ndim != 5:
        raise ShapeError(f'conv3d expects [C,H,W,D] input and 5D kernel, got {x.shape} and {w.shape}')
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f'conv3d channel mismatch: input {x.shape} vs kernel {w.shape}')
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeError(f'conv3d bias {bias.shape} does not match kernel {w.shape}')
    kernel = w.shape[2:]
    out_size = tuple(conv_output_size(n, k, stride, padding) for n, k in zip(x.shape[1:], kernel))
    if min(out_size) <= 0:
        raise ConfigurationError(
            f'conv3d output extent {out_size} is not positive for input {x.shape[1:]}, '
            f'kernel {kernel}, stride {stride}, padding {padding}'
        )
    pad = ((0, 0),) + ((padding, padding),) * 3
    xp = np.pad(x.data, pad) if padding else x.data

    def window(a, b, c):
        return (
            slice(None),
            slice(a, a + stride * (out_size[0] - 1) + 1, stride),
            slice(b, b + stride * (out_size[1] - 1) + 1, stride),
            slice(c, c + stride * (out_size[2] - 1) + 1, stride),
        )

    offsets = [(a, b, c) for a in range(kernel[0]) for b in range(kernel[1]) for c in range(kernel[2])]
    out = np.zeros((w.shape[0],) + out_size, dtype=x.dtype)
    for a, b, c in offsets:
        out += np.tensordot(w.data[:, :, a, b, c], xp[window(a, b, c)], axes=(1, 0))
    if bias is not None:
        out += bias.data[:, None, None, None]

    def backward(g):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(w.data) if w.requires_grad else None
        for a, b, c in offsets:
            sl = window(a, b, c)
            if gw is not None:
                gw[:, :, a, b, c] = np.tensordot(g, xp[sl], axes=([1, 2, 3], [1, 2, 3]))
            if gxp is not None:
                gxp[sl] += np.tensordot(w.data[:, :, a, b, c], g, axes=(0, 0))
        gx = None
        if gxp is not None:
            gx = gxp[:, padding:padding + x.shape[1], padding:padding + x.shape[2], padding:padding + x.shape[3]]
        gb = g.sum(axis=(1, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, w) if bias is None else (x, w, bias)
    return _emit('conv3d', inputs, out, backward)


def conv_transpose3d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 2) -> Tensor:
    """Transposed convolution with kernel size equal to stride.

    x is ``[C_in, H, W, D]``, w is ``[C_in, C_out, s, s, s]``; the output is
    ``[C_out, H*s, W*s, D*s]``. Each input voxel scatters into its own s³ block, so
    this is the exact adjoint of the stride-s, kernel-s :func:`conv3d` sharing w.
    """
    s = stride
    if x.ndim != 4 or w.ndim != 5:
        raise ShapeError(f'conv_transpose3d expects [C,H,W,D] input and 5D kernel, got {x.shape} and {w.shape}')
    if w.shape[0] != x.shape[0]:
        raise ShapeError(f'conv_transpose3d channel mismatch: input {x.shape} vs kernel {w.shape}')
    if w.shape[2:] != (s, s, s):
        raise ShapeError(f'conv_transpose3d kernel {w.shape[2:]} must equal the stride {s} per axis')
    c_out = w.shape[1]
    _, H, W, D = x.shape
    out = np.tensordot(w.data, x.data, axes=(0, 0))
    out = out.transpose(0, 4, 1, 5, 2, 6, 3).reshape(c_out, H * s, W * s, D * s)
    if bias is not None:
        out = out + bias.data[:, None, None, None]

    def backward(g):
        gr = g.reshape(c_out, H, s, W, s, D, s)
        gx = np.tensordot(w.data, gr, axes=([1, 2, 3, 4], [0, 2, 4, 6])) if x.requires_grad else None
        gw = np.tensordot(x.data, gr, axes=([1, 2, 3], [1, 3, 5])) if w.requires_grad else None
        gb = g.sum(axis=(1, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, w) if bias is None else (x, w, bias)
    return _emit('conv_transpose3d', inputs, np.ascontiguousarray(out), backward)
