"""Differentiable dense-tensor operations: 3D convolutions and friends.

Layouts: activations are (N, C, D, H, W); conv weights are
(C_out, C_in, kd, kh, kw); deconv weights are (C_in, C_out, kd, kh, kw),
mirroring the convention of transposed convolutions.  `deconv3d` is the
exact adjoint of `conv3d` for a shared weight, which the gradient
formulas below exploit in both directions.

All forward kernels loop over the k^3 kernel offsets and reduce each
offset with one matrix product, which keeps peak memory at one input
slice instead of a full im2col buffer.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import NumericalError, ShapeError
from .autograd import Tensor, make_op

_CHECK_FINITE = [True]


class numeric_checks:
    """Context manager toggling the per-op finiteness check."""

    def __init__(self, enabled: bool):
        self._enabled = enabled

    def __enter__(self):
        self._prev = _CHECK_FINITE[0]
        _CHECK_FINITE[0] = self._enabled
        return self

    def __exit__(self, *exc):
        _CHECK_FINITE[0] = self._prev
        return False


def _ensure_finite(arr: np.ndarray, what: str):
    if _CHECK_FINITE[0] and not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {what} output")


def _out_and_pads(in_size: int, k: int, stride: int, padding: str) -> tuple[int, int, int]:
    if padding == "same":
        out = -(-in_size // stride)
        total = max((out - 1) * stride + k - in_size, 0)
        return out, total // 2, total - total // 2
    if padding == "valid":
        if in_size < k:
            raise ShapeError(f"input size {in_size} smaller than kernel {k}")
        return (in_size - k) // stride + 1, 0, 0
    raise ShapeError(f"padding must be 'same' or 'valid', got {padding!r}")


def _geometry(x_shape, w_shape, stride, padding):
    n, c, d, h, w = x_shape
    co, ci, kd, kh, kw = w_shape
    if ci != c:
        raise ShapeError(f"conv input has {c} channels, weight expects {ci}")
    od, pd0, pd1 = _out_and_pads(d, kd, stride, padding)
    oh, ph0, ph1 = _out_and_pads(h, kh, stride, padding)
    ow, pw0, pw1 = _out_and_pads(w, kw, stride, padding)
    return (od, oh, ow), ((pd0, pd1), (ph0, ph1), (pw0, pw1))


def _pad(x, pads):
    if not any(p0 or p1 for p0, p1 in pads):
        return x
    return np.pad(x, ((0, 0), (0, 0), *pads))


def _conv_fwd(x, w, stride, padding):
    (od, oh, ow), pads = _geometry(x.shape, w.shape, stride, padding)
    n = x.shape[0]
    co, _, kd, kh, kw = w.shape
    xp = _pad(x, pads)
    out = np.zeros((n, co, od, oh, ow), dtype=x.dtype)
    s = stride
    for i in range(kd):
        for j in range(kh):
            for l in range(kw):
                xs = xp[:, :, i : i + s * od : s, j : j + s * oh : s, l : l + s * ow : s]
                out += np.tensordot(xs, w[:, :, i, j, l], axes=([1], [1])).transpose(
                    0, 4, 1, 2, 3
                )
    return out


def _conv_grad_w(x, gy, w_shape, stride, padding):
    _, pads = _geometry(x.shape, w_shape, stride, padding)
    _, _, kd, kh, kw = w_shape
    _, _, od, oh, ow = gy.shape
    xp = _pad(x, pads)
    gw = np.zeros(w_shape, dtype=x.dtype)
    s = stride
    for i in range(kd):
        for j in range(kh):
            for l in range(kw):
                xs = xp[:, :, i : i + s * od : s, j : j + s * oh : s, l : l + s * ow : s]
                gw[:, :, i, j, l] = np.tensordot(gy, xs, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return gw


def _conv_grad_x(gy, w, x_shape, stride, padding):
    _, pads = _geometry(x_shape, w.shape, stride, padding)
    n, c, d, h, wd = x_shape
    _, _, kd, kh, kw = w.shape
    _, _, od, oh, ow = gy.shape
    padded = (
        n,
        c,
        d + pads[0][0] + pads[0][1],
        h + pads[1][0] + pads[1][1],
        wd + pads[2][0] + pads[2][1],
    )
    gxp = np.zeros(padded, dtype=gy.dtype)
    s = stride
    for i in range(kd):
        for j in range(kh):
            for l in range(kw):
                contrib = np.tensordot(gy, w[:, :, i, j, l], axes=([1], [0])).transpose(
                    0, 4, 1, 2, 3
                )
                gxp[:, :, i : i + s * od : s, j : j + s * oh : s, l : l + s * ow : s] += contrib
    return gxp[:, :, pads[0][0] : pads[0][0] + d, pads[1][0] : pads[1][0] + h, pads[2][0] : pads[2][0] + wd]


def _check_bias(b, channels):
    if b.shape != (channels,):
        raise ShapeError(f"bias shape {b.shape} does not match {channels} channels")


def conv3d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """Strided 3D cross-correlation plus bias."""
    _check_bias(b.data, w.data.shape[0])
    out = _conv_fwd(x.data, w.data, stride, padding)
    out += b.data.reshape(1, -1, 1, 1, 1)
    _ensure_finite(out, "conv3d")
    x_shape, w_shape = x.data.shape, w.data.shape

    def backward_fn(gy):
        gx = _conv_grad_x(gy, w.data, x_shape, stride, padding) if x.requires_grad else None
        gw = _conv_grad_w(x.data, gy, w_shape, stride, padding) if w.requires_grad else None
        gb = gy.sum(axis=(0, 2, 3, 4)) if b.requires_grad else None
        return gx, gw, gb

    return make_op(out, (x, w, b), backward_fn)


def deconv3d(x: Tensor, w: Tensor, b: Tensor, stride: int = 2) -> Tensor:
    """Transposed 3D convolution; output spatial dims are input * stride.

    For a shared weight this is the exact adjoint of ``conv3d`` with the
    same stride and 'same' padding (up to the bias term).
    """
    n, ci, d, h, wd = x.data.shape
    ci_w, co, kd, kh, kw = w.data.shape
    if ci_w != ci:
        raise ShapeError(f"deconv input has {ci} channels, weight expects {ci_w}")
    _check_bias(b.data, co)
    big_shape = (n, co, d * stride, h * stride, wd * stride)
    conv_w_shape = (ci, co, kd, kh, kw)
    out = _conv_grad_x(x.data, w.data, big_shape, stride, "same")
    out += b.data.reshape(1, -1, 1, 1, 1)
    _ensure_finite(out, "deconv3d")

    def backward_fn(gy):
        gx = _conv_fwd(gy, w.data, stride, "same") if x.requires_grad else None
        gw = (
            _conv_grad_w(gy, x.data, conv_w_shape, stride, "same")
            if w.requires_grad
            else None
        )
        gb = gy.sum(axis=(0, 2, 3, 4)) if b.requires_grad else None
        return gx, gw, gb

    return make_op(out, (x, w, b), backward_fn)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward_fn(gy):
        return (gy * (x.data > 0),)

    return make_op(out, (x,), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; shapes must match exactly."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    out = a.data + b.data

    def backward_fn(gy):
        return gy, gy

    return make_op(out, (a, b), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along the channel axis."""
    shapes = [t.data.shape for t in tensors]
    base = shapes[0][:axis] + shapes[0][axis + 1 :]
    for s in shapes[1:]:
        if s[:axis] + s[axis + 1 :] != base:
            raise ShapeError(f"concat shapes incompatible: {shapes}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [s[axis] for s in shapes]
    bounds = np.cumsum([0] + sizes)

    def backward_fn(gy):
        slicer = [slice(None)] * gy.ndim
        grads = []
        for k in range(len(sizes)):
            slicer[axis] = slice(bounds[k], bounds[k + 1])
            grads.append(gy[tuple(slicer)])
        return tuple(grads)

    return make_op(out, tuple(tensors), backward_fn)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbor upsampling of the three spatial axes."""
    if factor < 1:
        raise ShapeError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3).repeat(factor, axis=4)
    n, c, d, h, w = x.data.shape

    def backward_fn(gy):
        g = gy.reshape(n, c, d, factor, h, factor, w, factor).sum(axis=(3, 5, 7))
        return (g,)

    return make_op(out, (x,), backward_fn)


def sum_squared_error(pred: Tensor, target: np.ndarray) -> Tensor:
    """Scalar sum of squared differences against a constant target."""
    if pred.data.shape != target.shape:
        raise ShapeError(f"loss shapes differ: {pred.data.shape} vs {target.shape}")
    diff = pred.data - target
    out = np.asarray((diff * diff).sum(), dtype=pred.data.dtype)
    _ensure_finite(out, "sum_squared_error")

    def backward_fn(gy):
        return (2.0 * gy * diff,)

    return make_op(out, (pred,), backward_fn)


def dense_block(x: Tensor, layers: Sequence[tuple[Tensor, Tensor]], activation=relu) -> Tensor:
    """Stack of 3x3x3 convolutions, each concatenated onto the features.

    Every layer maps the running stack to `growth` channels (given by its
    weight shape), so the output carries in + L*growth channels.  An empty
    layer list is the identity.
    """
    out = x
    for w, b in layers:
        h = activation(conv3d(out, w, b, stride=1, padding="same"))
        out = concat([out, h], axis=1)
    return out
