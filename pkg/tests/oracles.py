"""Slow reference implementations used only by the tests."""

import math

import numpy as np


def conv2d_loops(x, k, b, stride, pad):
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for ni in range(n):
        for fi in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = b[fi]
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[ni, ci, i * stride + u, j * stride + v] * k[fi, ci, u, v]
                    out[ni, fi, i, j] = acc
    return out


def conv_transpose2d_scatter(x, k, b, stride, pad):
    n, c, h, w = x.shape
    _, f, kh, kw = k.shape
    hf, wf = (h - 1) * stride + kh, (w - 1) * stride + kw
    full = np.zeros((n, f, hf, wf))
    for ni in range(n):
        for ci in range(c):
            for i in range(h):
                for j in range(w):
                    for fi in range(f):
                        for u in range(kh):
                            for v in range(kw):
                                full[ni, fi, i * stride + u, j * stride + v] += x[ni, ci, i, j] * k[ci, fi, u, v]
    out = full[:, :, pad:hf - pad, pad:wf - pad]
    return out + np.asarray(b)[None, :, None, None]


def maxpool_loops(x, window, stride):
    n, c, h, w = x.shape
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for ni in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    out[ni, ci, i, j] = max(
                        x[ni, ci, i * stride + u, j * stride + v] for u in range(window) for v in range(window)
                    )
    return out


def tanh_series(x, terms=60):
    """tanh from exp via the Taylor series of exp, in exact float arithmetic on floats."""
    def exp(z):
        s, t = 1.0, 1.0
        for n in range(1, terms):
            t *= z / n
            s += t
        return s
    e2 = exp(2 * x)
    return (e2 - 1) / (e2 + 1)


def ln(x):
    return math.log(x)
