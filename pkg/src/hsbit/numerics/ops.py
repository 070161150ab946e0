"""Differentiable operations used by the U-net.

Layout is NCHW throughout. Convolutions are cross-correlations computed by
unfolding windows into a matrix and doing one GEMM; their backward passes
fold the column gradients back with one strided add per kernel tap.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, UsageError
from .tensor import Tensor, as_tensor, record

_TANH_LIMIT32 = np.float32(1.0) - np.float32(2.0**-24)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_4d(name: str, t: Tensor) -> None:
    if t.ndim != 4:
        raise DimensionError(f"{name} expects a 4-d NCHW tensor, got shape {t.shape}")


# elementwise and reductions ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError as exc:
        raise DimensionError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc

    def grad(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", (a, b), out, grad)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError as exc:
        raise DimensionError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc

    def grad(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record("mul", (a, b), out, grad)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)

    def grad(g):
        if b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return record("matmul", (a, b), out, grad)


def sum(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))

    def grad(g):
        return (np.full(x.shape, g, dtype=x.dtype),)

    return record("sum", (x,), out, grad)


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    out = Tensor(np.asarray(x.data.mean(), dtype=x.dtype))

    def grad(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return record("mean", (x,), out, grad)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def grad(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return record("concat", tuple(tensors), out, grad)


# activations -------------------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0).astype(x.dtype, copy=False))

    def grad(g):
        return (g * mask,)

    return record("relu", (x,), out, grad)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    if y.dtype == np.float32:
        # float32 tanh rounds to exactly +-1 for |x| > ~9; keep the range open
        np.clip(y, -_TANH_LIMIT32, _TANH_LIMIT32, out=y)
    out = Tensor(y)

    def grad(g):
        return (g * (1 - y * y),)

    return record("tanh", (x,), out, grad)


def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis: int = 1) -> Tensor:
    x = as_tensor(x)
    y = _softmax(x.data, axis)
    out = Tensor(y)

    def grad(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", (x,), out, grad)


# losses -----------------------------------------------------------------------

def mse_loss(pred, target, weight=None) -> Tensor:
    """Mean squared error over all elements.

    ``weight`` is an optional per-pixel mask shaped like ``pred`` without its
    channel axis (N, H, W). Masked pixels do not contribute, and the mean is
    taken over the remaining elements only.
    """
    pred = as_tensor(pred)
    t = np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise DimensionError(f"mse_loss: pred shape {pred.shape} != target shape {t.shape}")
    diff = pred.data - t
    if weight is None:
        w = None
        denom = diff.size
    else:
        w = np.asarray(weight, dtype=pred.dtype)
        if pred.ndim == 4:
            w = w[:, None, :, :]
        try:
            w = np.broadcast_to(w, pred.shape)
        except ValueError as exc:
            raise DimensionError(f"mse_loss: weight {np.shape(weight)} does not fit {pred.shape}") from exc
        denom = max(float(w.sum()), 1.0)
    sq = diff * diff if w is None else w * diff * diff
    out = Tensor(np.asarray(sq.sum() / denom, dtype=pred.dtype))

    def grad(g):
        d = 2.0 * diff / denom
        if w is not None:
            d = d * w
        return ((g * d).astype(pred.dtype, copy=False),)

    return record("mse_loss", (pred,), out, grad)


def cross_entropy(logits, classes, weight=None) -> Tensor:
    """Mean negative log-softmax probability of the true class.

    ``logits`` is (N, C) or (N, C, H, W) with classes along axis 1;
    ``classes`` holds integer indices shaped like ``logits`` minus that axis.
    """
    logits = as_tensor(logits)
    cls = np.asarray(classes)
    if logits.ndim < 2:
        raise DimensionError(f"cross_entropy: logits need a class axis, got {logits.shape}")
    expected = logits.shape[:1] + logits.shape[2:]
    if cls.shape != expected:
        raise DimensionError(f"cross_entropy: classes shape {cls.shape} != expected {expected}")
    n_cls = logits.shape[1]
    if cls.size and (cls.min() < 0 or cls.max() >= n_cls):
        raise DimensionError(f"cross_entropy: class index out of range [0, {n_cls})")
    cls = cls.astype(np.int64)

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    picked = np.take_along_axis(logp, cls[:, None, ...], axis=1)[:, 0, ...]
    if weight is None:
        w = np.ones_like(picked)
    else:
        w = np.asarray(weight, dtype=logits.dtype)
        if w.shape != picked.shape:
            raise DimensionError(f"cross_entropy: weight shape {w.shape} != {picked.shape}")
    denom = max(float(w.sum()), 1.0)
    out = Tensor(np.asarray(-(w * picked).sum() / denom, dtype=logits.dtype))

    def grad(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, cls[:, None, ...], 1.0, axis=1)
        d = (p - onehot) * (w[:, None, ...] / denom)
        return ((g * d).astype(logits.dtype, copy=False),)

    return record("cross_entropy", (logits,), out, grad)


# convolution and pooling ------------------------------------------------------

def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, C, Ho, Wo, kh, kw) strided view
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _scatter_taps(cols: np.ndarray, out: np.ndarray, stride: int) -> None:
    """Add (N, Ho, Wo, C, kh, kw) tap values into ``out`` (N, C, H, W) in place."""
    _, ho, wo, _, kh, kw = cols.shape
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation. ``kernel`` is (F, C, kh, kw)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_4d("conv2d input", x)
    _check_4d("conv2d kernel", kernel)
    if stride < 1 or padding < 0:
        raise UsageError(f"conv2d: stride must be >= 1 and padding >= 0 (got {stride}, {padding})")
    n, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise DimensionError(f"conv2d: input {x.shape} has {c} channels but kernel {kernel.shape} expects {kc}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(f"conv2d: kernel {kernel.shape} larger than padded input {x.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (f,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} != ({f},)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = _windows(xp, kh, kw, stride)
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = kernel.data.reshape(f, -1)
    y = cols @ wmat.T
    if bias is not None:
        y += bias.data
    out = Tensor(y.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))

    def grad(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, f)
        dk = (g2.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            _scatter_taps(dcols, dxp, stride)
            dx = dxp[:, :, padding:padding + h, padding:padding + w]
        if bias is None:
            return dx, dk
        return dx, dk, g2.sum(axis=0)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv2d", inputs, out, grad)


def conv_transpose2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d` with respect to its input. ``kernel`` is (C_in, F, kh, kw).

    Output extent is ``(H - 1) * stride - 2 * padding + kh``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_4d("conv_transpose2d input", x)
    _check_4d("conv_transpose2d kernel", kernel)
    if stride < 1 or padding < 0:
        raise UsageError(f"conv_transpose2d: stride must be >= 1 and padding >= 0 (got {stride}, {padding})")
    n, c, h, w = x.shape
    kc, f, kh, kw = kernel.shape
    if kc != c:
        raise DimensionError(
            f"conv_transpose2d: input {x.shape} has {c} channels but kernel {kernel.shape} expects {kc}"
        )
    hf, wf = (h - 1) * stride + kh, (w - 1) * stride + kw
    if hf - 2 * padding < 1 or wf - 2 * padding < 1:
        raise DimensionError(f"conv_transpose2d: padding {padding} leaves an empty output")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (f,):
            raise DimensionError(f"conv_transpose2d: bias shape {bias.shape} != ({f},)")

    xf = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    wmat = kernel.data.reshape(c, -1)
    cols = (xf @ wmat).reshape(n, h, w, f, kh, kw)
    full = np.zeros((n, f, hf, wf), dtype=np.result_type(x.dtype, kernel.dtype))
    _scatter_taps(cols, full, stride)
    y = full[:, :, padding:hf - padding, padding:wf - padding]
    if bias is not None:
        y = y + bias.data[None, :, None, None]
    out = Tensor(np.ascontiguousarray(y))

    def grad(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else g
        gcols = _windows(gp, kh, kw, stride).transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, f * kh * kw)
        dx = (gcols @ wmat.T).reshape(n, h, w, c).transpose(0, 3, 1, 2) if x.requires_grad else None
        dk = (xf.T @ gcols).reshape(kernel.shape) if kernel.requires_grad else None
        if bias is None:
            return dx, dk
        return dx, dk, g.sum(axis=(0, 2, 3))

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv_transpose2d", inputs, out, grad)


def maxpool2d(x, window: int = 2, stride: int | None = None) -> tuple[Tensor, np.ndarray]:
    """Window maximum. Returns the pooled tensor and, per output cell, the flat
    index (row * window + col) of the winning element inside its window.
    Ties go to the first element in row-major order.
    """
    x = as_tensor(x)
    _check_4d("maxpool2d input", x)
    stride = window if stride is None else stride
    if window < 1 or stride < 1:
        raise UsageError(f"maxpool2d: window and stride must be >= 1 (got {window}, {stride})")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise DimensionError(f"maxpool2d: window {window} exceeds spatial extent {(h, w)}")
    win = _windows(x.data, window, window, stride)
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, ho, wo, window * window)
    idx = flat.argmax(axis=-1)
    out = Tensor(np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0])

    def grad(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        for i in range(window):
            for j in range(window):
                hit = idx == i * window + j
                dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g * hit
        return (dx,)

    return record("maxpool2d", (x,), out, grad), idx
