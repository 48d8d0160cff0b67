"""Dense rank-4 tensor arithmetic and the neural primitives used by the toy
networks and the loss kernels.

Conventions, fixed for interchange with the dump format:

* tensors are contiguous float64 arrays laid out row-major as
  (batch, channel, rows, columns);
* label maps are int64 arrays (batch, rows, columns) with ``IGNORE_LABEL``
  marking pixels excluded from losses and metrics;
* softmax always subtracts the per-slice maximum before exponentiating, so
  dumps from different implementations compare bit-identically only when
  both follow this convention;
* ``bilinear_upsample`` uses the align-corners=false convention: output
  pixel i samples the source at (i + 0.5) / factor - 0.5, clamped to the
  valid range.

All operations are pure functions over their inputs.
"""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

from .errors import ParameterError, ShapeError

IGNORE_LABEL = np.iinfo(np.int64).max

CWT1_MAGIC = b"CWT1"


def as_tensor4(x, name: str = "tensor") -> np.ndarray:
    """Coerce to a C-contiguous float64 rank-4 array, validating rank."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (n, c, h, w), got shape {arr.shape}")
    return arr


def as_labelmap(labels, name: str = "labels") -> np.ndarray:
    arr = np.ascontiguousarray(labels, dtype=np.int64)
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be rank 3 (n, h, w), got shape {arr.shape}")
    return arr


def require_same_shape(a: np.ndarray, b: np.ndarray, what: str = "tensors") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what} must share a shape, got {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------

def softmax_over_axis(x, axis: str, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax along the channel axis or jointly over all
    spatial positions of each channel.

    ``axis="spatial"`` normalizes each (sample, channel) slice over its
    h*w positions; ``axis="channel"`` normalizes each pixel's channel
    vector.  Rows of the result sum to 1 within 1e-12.
    """
    return np.exp(log_softmax_over_axis(x, axis, temperature))


def log_softmax_over_axis(x, axis: str, temperature: float = 1.0) -> np.ndarray:
    """Log of :func:`softmax_over_axis`, computed stably (max subtraction)."""
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    x4 = as_tensor4(x)
    n, c, h, w = x4.shape
    z = x4 / temperature
    if axis == "spatial":
        flat = z.reshape(n, c, h * w)
        shifted = flat - flat.max(axis=2, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=2, keepdims=True))
        return (shifted - lse).reshape(n, c, h, w)
    if axis == "channel":
        shifted = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return shifted - lse
    raise ParameterError(f"axis must be 'channel' or 'spatial', got {axis!r}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _conv_geometry(x, weights, stride, pad):
    if stride < 1 or int(stride) != stride:
        raise ParameterError(f"stride must be a positive integer, got {stride}")
    if pad < 0 or int(pad) != pad:
        raise ParameterError(f"pad must be a non-negative integer, got {pad}")
    n, c_in, h, w = x.shape
    if weights.ndim != 4:
        raise ShapeError(f"weights must be rank 4 (c_out, c_in, kh, kw), got {weights.shape}")
    c_out, wc_in, kh, kw = weights.shape
    if wc_in != c_in:
        raise ShapeError(f"weight input channels {wc_in} != input channels {c_in}")
    oh = (h + 2 * pad - kh) // int(stride) + 1
    ow = (w + 2 * pad - kw) // int(stride) + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"kernel {kh}x{kw} with pad {pad} does not fit input {h}x{w}")
    return n, c_in, h, w, c_out, kh, kw, oh, ow


def _pad_input(x, pad):
    if not pad:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    out[:, :, pad:pad + h, pad:pad + w] = x
    return out


def im2col(x, kh, kw, stride, pad, oh, ow):
    """Per-sample patch matrices, shape (n, oh*ow, c_in*kh*kw)."""
    n, c_in, h, w = x.shape
    x = _pad_input(x, pad)
    sn, sc, sh, sw = x.strides
    patches = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, oh, ow, c_in, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
        writeable=False,
    )
    return np.ascontiguousarray(patches).reshape(n, oh * ow, c_in * kh * kw)


def conv2d(x, weights, bias=None, stride: int = 1, pad: int = 0,
           cols_out: list | None = None) -> np.ndarray:
    """2-D cross-correlation with square or rectangular kernels.

    Output spatial size is floor((h + 2*pad - k) / stride) + 1 per axis.
    If ``cols_out`` is given, the internal patch matrix is appended to it
    so a following :func:`conv2d_backward` can reuse it.
    """
    x = as_tensor4(x, "input")
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    n, c_in, h, w, c_out, kh, kw, oh, ow = _conv_geometry(x, weights, stride, pad)
    out = np.empty((n, c_out, oh, ow))
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        wmat = weights.reshape(c_out, c_in)
        flat = x.reshape(n, c_in, h * w)
        for i in range(n):
            np.dot(wmat, flat[i], out=out[i].reshape(c_out, oh * ow))
        if cols_out is not None:
            cols_out.append(None)
    else:
        cols = im2col(x, kh, kw, int(stride), int(pad), oh, ow)
        wmat = weights.reshape(c_out, c_in * kh * kw)
        for i in range(n):
            np.dot(wmat, cols[i].T, out=out[i].reshape(c_out, oh * ow))
        if cols_out is not None:
            cols_out.append(cols)
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (c_out,):
            raise ShapeError(f"bias must have shape ({c_out},), got {bias.shape}")
        out += bias[None, :, None, None]
    return out


def conv2d_backward(x, weights, grad_out, stride: int = 1, pad: int = 0,
                    cols=None, need_input_grad: bool = True):
    """Gradients of ``sum(conv2d(x, w, b) * grad_out)`` w.r.t. x, w and b.

    ``cols`` may pass the patch matrix captured from the forward call;
    ``need_input_grad=False`` skips the input gradient (returned as None).
    """
    x = as_tensor4(x, "input")
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    grad_out = as_tensor4(grad_out, "grad_out")
    n, c_in, h, w, c_out, kh, kw, oh, ow = _conv_geometry(x, weights, stride, pad)
    if grad_out.shape != (n, c_out, oh, ow):
        raise ShapeError(
            f"grad_out must have shape {(n, c_out, oh, ow)}, got {grad_out.shape}")
    stride = int(stride)
    pad = int(pad)

    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        g = grad_out.reshape(n, c_out, oh * ow)
        flat = x.reshape(n, c_in, h * w)
        wmat = weights.reshape(c_out, c_in)
        grad_w = np.zeros((c_out, c_in))
        grad_x = np.empty_like(x) if need_input_grad else None
        for i in range(n):
            grad_w += np.dot(g[i], flat[i].T)
            if need_input_grad:
                np.dot(wmat.T, g[i], out=grad_x[i].reshape(c_in, h * w))
        grad_b = grad_out.sum(axis=(0, 2, 3))
        return grad_x, grad_w.reshape(c_out, c_in, 1, 1), grad_b

    if cols is None:
        cols = im2col(x, kh, kw, stride, pad, oh, ow)
    wmat = weights.reshape(c_out, c_in * kh * kw)
    g = grad_out.reshape(n, c_out, oh * ow)
    grad_w = np.zeros((c_out, c_in * kh * kw))
    grad_cols = np.empty((n, oh * ow, c_in * kh * kw)) if need_input_grad else None
    for i in range(n):
        grad_w += np.dot(g[i], cols[i])
        if need_input_grad:
            np.dot(g[i].T, wmat, out=grad_cols[i])
    grad_b = grad_out.sum(axis=(0, 2, 3))
    if not need_input_grad:
        return None, grad_w.reshape(c_out, c_in, kh, kw), grad_b

    # col2im: scatter patch gradients back with one vectorized add per tap
    grad_cols = grad_cols.reshape(n, oh, ow, c_in, kh, kw)
    grad_padded = np.zeros((n, c_in, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            grad_padded[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride] += \
                grad_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    grad_x = grad_padded[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(grad_x), grad_w.reshape(c_out, c_in, kh, kw), grad_b


# ---------------------------------------------------------------------------
# elementwise / resampling / reductions
# ---------------------------------------------------------------------------

def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x, grad_out) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if x.shape != grad_out.shape:
        raise ShapeError(f"relu_backward shapes differ: {x.shape} vs {grad_out.shape}")
    return grad_out * (x > 0.0)


def bilinear_upsample(x, factor: int) -> np.ndarray:
    """Upsample by an integer factor (align-corners=false, edges clamped)."""
    if factor < 1 or int(factor) != factor:
        raise ParameterError(f"factor must be a positive integer, got {factor}")
    x = as_tensor4(x)
    factor = int(factor)
    n, c, h, w = x.shape

    def _axis(src, out):
        pos = (np.arange(out) + 0.5) / factor - 0.5
        lo = np.clip(np.floor(pos), 0, src - 1).astype(np.int64)
        hi = np.minimum(lo + 1, src - 1)
        frac = np.clip(pos - lo, 0.0, 1.0)
        return lo, hi, frac

    y0, y1, fy = _axis(h, h * factor)
    x0, x1, fx = _axis(w, w * factor)
    rows = x[:, :, y0, :] * (1.0 - fy)[None, None, :, None] \
        + x[:, :, y1, :] * fy[None, None, :, None]
    out = rows[:, :, :, x0] * (1.0 - fx)[None, None, None, :] \
        + rows[:, :, :, x1] * fx[None, None, None, :]
    return np.ascontiguousarray(out)


def reduce(x, op: str, axes: Sequence[int]) -> np.ndarray:
    """Reduce over the given (non-empty) axes with sum, mean, or max."""
    x = np.asarray(x, dtype=np.float64)
    axes = tuple(int(a) for a in axes)
    if not axes:
        raise ParameterError("reduction axes must be non-empty")
    if len(set(a % x.ndim for a in axes)) != len(axes):
        raise ParameterError(f"duplicate reduction axes {axes}")
    for a in axes:
        if not -x.ndim <= a < x.ndim:
            raise ParameterError(f"axis {a} out of range for rank {x.ndim}")
    if op == "sum":
        return x.sum(axis=axes)
    if op == "mean":
        return x.mean(axis=axes)
    if op == "max":
        return x.max(axis=axes)
    raise ParameterError(f"op must be one of sum|mean|max, got {op!r}")


# ---------------------------------------------------------------------------
# CWT1 binary dump format
# ---------------------------------------------------------------------------
# magic "CWT1", four little-endian uint32 dims (n, c, h, w), then n*c*h*w
# little-endian float64 values in row-major (n, c, h, w) order.

def write_cwt1(path, tensor) -> None:
    arr = as_tensor4(tensor, "dump tensor")
    with open(path, "wb") as fh:
        fh.write(CWT1_MAGIC)
        fh.write(struct.pack("<4I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_cwt1(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CWT1_MAGIC:
            raise ParameterError(f"{path}: bad magic {magic!r}, expected {CWT1_MAGIC!r}")
        dims = struct.unpack("<4I", fh.read(16))
        count = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(fh.read(count * 8), dtype="<f8")
        if data.size != count:
            raise ParameterError(f"{path}: truncated dump, expected {count} values")
    return data.astype(np.float64).reshape(dims)
