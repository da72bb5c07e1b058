"""Hot numeric kernels, each with a numba build and a pure-numpy fallback.

Dispatch is per call via backend.numba_enabled(). The jitted and numpy
variants implement the same arithmetic; uint8 kernels (block permutation,
resize) agree byte-for-byte, float kernels agree to rounding because the
reduction order differs (sequential loop vs numpy pairwise).
"""

import math

import numpy as np

from . import backend

if backend.HAVE_NUMBA:
    from numba import njit
else:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap(args[0]) if args and callable(args[0]) else wrap

# tanh-approximation GELU constants, pinned
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


# ---------------------------------------------------------------- gelu

def gelu_forward_numpy(x):
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_backward_numpy(x, g):
    inner = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(inner)
    sech2 = 1.0 - t * t
    local = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return g * local


@njit(cache=True)
def _gelu_forward_jit(x, out):
    flat_x = x.ravel()
    flat_out = out.ravel()
    for i in range(flat_x.size):
        v = flat_x[i]
        inner = _GELU_C * (v + _GELU_A * v * v * v)
        flat_out[i] = 0.5 * v * (1.0 + math.tanh(inner))


@njit(cache=True)
def _gelu_backward_jit(x, g, out):
    flat_x = x.ravel()
    flat_g = g.ravel()
    flat_out = out.ravel()
    for i in range(flat_x.size):
        v = flat_x[i]
        inner = _GELU_C * (v + _GELU_A * v * v * v)
        t = math.tanh(inner)
        sech2 = 1.0 - t * t
        local = 0.5 * (1.0 + t) + 0.5 * v * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * v * v)
        flat_out[i] = flat_g[i] * local


def gelu_forward(x):
    if backend.numba_enabled():
        out = np.empty_like(x)
        _gelu_forward_jit(np.ascontiguousarray(x), out)
        return out
    return gelu_forward_numpy(x)


def gelu_backward(x, g):
    if backend.numba_enabled():
        out = np.empty_like(x)
        _gelu_backward_jit(np.ascontiguousarray(x), np.ascontiguousarray(g), out)
        return out
    return gelu_backward_numpy(x, g)


# ---------------------------------------------------------------- softmax
# rows-of-a-2D-view layout: callers reshape (-1, n) over the reduced axis

def softmax_forward_numpy(x2d):
    shifted = x2d - x2d.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward_numpy(y2d, g2d):
    dot = (g2d * y2d).sum(axis=1, keepdims=True)
    return (g2d - dot) * y2d


@njit(cache=True)
def _softmax_forward_jit(x2d, out):
    rows, n = x2d.shape
    for r in range(rows):
        m = x2d[r, 0]
        for j in range(1, n):
            if x2d[r, j] > m:
                m = x2d[r, j]
        s = 0.0
        for j in range(n):
            e = math.exp(x2d[r, j] - m)
            out[r, j] = e
            s += e
        inv = 1.0 / s
        for j in range(n):
            out[r, j] *= inv


@njit(cache=True)
def _softmax_backward_jit(y2d, g2d, out):
    rows, n = y2d.shape
    for r in range(rows):
        dot = 0.0
        for j in range(n):
            dot += g2d[r, j] * y2d[r, j]
        for j in range(n):
            out[r, j] = (g2d[r, j] - dot) * y2d[r, j]


def softmax_forward(x2d):
    if backend.numba_enabled():
        out = np.empty_like(x2d)
        _softmax_forward_jit(np.ascontiguousarray(x2d), out)
        return out
    return softmax_forward_numpy(x2d)


def softmax_backward(y2d, g2d):
    if backend.numba_enabled():
        out = np.empty_like(y2d)
        _softmax_backward_jit(np.ascontiguousarray(y2d), np.ascontiguousarray(g2d), out)
        return out
    return softmax_backward_numpy(y2d, g2d)


# ---------------------------------------------------------------- layer norm
# normalizes the last axis; callers pass a (rows, n) view

def layer_norm_forward_numpy(x2d, gamma, beta, eps):
    mu = x2d.mean(axis=1, keepdims=True)
    centered = x2d - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return gamma * xhat + beta, xhat, inv_std[:, 0]


def layer_norm_backward_numpy(xhat, inv_std, gamma, g2d):
    n = xhat.shape[1]
    dxhat = g2d * gamma
    s1 = dxhat.sum(axis=1, keepdims=True)
    s2 = (dxhat * xhat).sum(axis=1, keepdims=True)
    dx = (inv_std[:, None] / n) * (n * dxhat - s1 - xhat * s2)
    dgamma = (g2d * xhat).sum(axis=0)
    dbeta = g2d.sum(axis=0)
    return dx, dgamma, dbeta


@njit(cache=True)
def _layer_norm_forward_jit(x2d, gamma, beta, eps, out, xhat, inv_std):
    rows, n = x2d.shape
    for r in range(rows):
        mu = 0.0
        for j in range(n):
            mu += x2d[r, j]
        mu /= n
        var = 0.0
        for j in range(n):
            c = x2d[r, j] - mu
            var += c * c
        var /= n
        istd = 1.0 / math.sqrt(var + eps)
        inv_std[r] = istd
        for j in range(n):
            h = (x2d[r, j] - mu) * istd
            xhat[r, j] = h
            out[r, j] = gamma[j] * h + beta[j]


@njit(cache=True)
def _layer_norm_backward_jit(xhat, inv_std, gamma, g2d, dx, dgamma, dbeta):
    rows, n = xhat.shape
    for j in range(n):
        dgamma[j] = 0.0
        dbeta[j] = 0.0
    for r in range(rows):
        s1 = 0.0
        s2 = 0.0
        for j in range(n):
            dh = g2d[r, j] * gamma[j]
            s1 += dh
            s2 += dh * xhat[r, j]
        for j in range(n):
            dh = g2d[r, j] * gamma[j]
            dx[r, j] = (inv_std[r] / n) * (n * dh - s1 - xhat[r, j] * s2)
            dgamma[j] += g2d[r, j] * xhat[r, j]
            dbeta[j] += g2d[r, j]


def layer_norm_forward(x2d, gamma, beta, eps):
    if backend.numba_enabled():
        out = np.empty_like(x2d)
        xhat = np.empty_like(x2d)
        inv_std = np.empty(x2d.shape[0], dtype=x2d.dtype)
        _layer_norm_forward_jit(np.ascontiguousarray(x2d), gamma, beta, eps,
                                out, xhat, inv_std)
        return out, xhat, inv_std
    return layer_norm_forward_numpy(x2d, gamma, beta, eps)


def layer_norm_backward(xhat, inv_std, gamma, g2d):
    if backend.numba_enabled():
        dx = np.empty_like(xhat)
        dgamma = np.empty_like(gamma)
        dbeta = np.empty_like(gamma)
        _layer_norm_backward_jit(np.ascontiguousarray(xhat), inv_std, gamma,
                                 np.ascontiguousarray(g2d), dx, dgamma, dbeta)
        return dx, dgamma, dbeta
    return layer_norm_backward_numpy(xhat, inv_std, gamma, g2d)


# ---------------------------------------------------------------- adam

def adam_update_numpy(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / bc1
    vhat = v / bc2
    param -= lr * mhat / (np.sqrt(vhat) + eps)


@njit(cache=True)
def _adam_update_jit(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    p = param.ravel()
    g = grad.ravel()
    mf = m.ravel()
    vf = v.ravel()
    for i in range(p.size):
        gi = g[i]
        mf[i] = beta1 * mf[i] + (1.0 - beta1) * gi
        vf[i] = beta2 * vf[i] + (1.0 - beta2) * gi * gi
        mhat = mf[i] / bc1
        vhat = vf[i] / bc2
        p[i] -= lr * mhat / (math.sqrt(vhat) + eps)


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, step):
    """In-place bias-corrected Adam update; `step` is the 1-based step count."""
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    if backend.numba_enabled():
        _adam_update_jit(param, np.ascontiguousarray(grad), m, v,
                         lr, beta1, beta2, eps, bc1, bc2)
    else:
        adam_update_numpy(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2)


# ---------------------------------------------------------------- codec gather

def permute_columns_numpy(blocks, perm):
    return np.ascontiguousarray(blocks[:, perm])


@njit(cache=True)
def _permute_columns_jit(blocks, perm, out):
    nb, n = blocks.shape
    for b in range(nb):
        for k in range(n):
            out[b, k] = blocks[b, perm[k]]


def permute_columns(blocks, perm):
    """Gather out[b, k] = blocks[b, perm[k]] for per-block scrambling."""
    if backend.numba_enabled():
        out = np.empty_like(blocks)
        _permute_columns_jit(np.ascontiguousarray(blocks), perm, out)
        return out
    return permute_columns_numpy(blocks, perm)


# ---------------------------------------------------------------- resize
# half-pixel-centers mapping (align_corners=False); half-up rounding, pinned

def _src_coords(target, source):
    s = np.arange(target, dtype=np.float64)
    # multiply before dividing: (s + 0.5) * source is exact in f64, so ties
    # at representable half-integers round the same way as exact arithmetic
    coords = (s + 0.5) * source / target - 0.5
    return np.clip(coords, 0.0, source - 1.0)


def bilinear_resize_numpy(img, target):
    c, h, w = img.shape
    ys = _src_coords(target, h)
    xs = _src_coords(target, w)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    out = np.empty((c, target, target), dtype=np.uint8)
    for ch in range(c):
        plane = img[ch].astype(np.float64)
        top = plane[y0][:, x0] * (1.0 - fx) + plane[y0][:, x1] * fx
        bot = plane[y1][:, x0] * (1.0 - fx) + plane[y1][:, x1] * fx
        val = top * (1.0 - fy[:, :]) + bot * fy[:, :]
        out[ch] = np.floor(val + 0.5).astype(np.uint8)
    return out


@njit(cache=True)
def _bilinear_resize_jit(img, target, out):
    c, h, w = img.shape
    for dy in range(target):
        sy = (dy + 0.5) * h / target - 0.5
        if sy < 0.0:
            sy = 0.0
        if sy > h - 1.0:
            sy = h - 1.0
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for dx in range(target):
            sx = (dx + 0.5) * w / target - 0.5
            if sx < 0.0:
                sx = 0.0
            if sx > w - 1.0:
                sx = w - 1.0
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            for ch in range(c):
                top = img[ch, y0, x0] * (1.0 - fx) + img[ch, y0, x1] * fx
                bot = img[ch, y1, x0] * (1.0 - fx) + img[ch, y1, x1] * fx
                val = top * (1.0 - fy) + bot * fy
                out[ch, dy, dx] = np.uint8(math.floor(val + 0.5))


def bilinear_resize(img, target):
    if backend.numba_enabled():
        out = np.empty((img.shape[0], target, target), dtype=np.uint8)
        _bilinear_resize_jit(np.ascontiguousarray(img).astype(np.float64), target, out)
        return out
    return bilinear_resize_numpy(img, target)


def nearest_resize_numpy(img, target):
    c, h, w = img.shape
    ys = np.floor(_src_coords(target, h) + 0.5).astype(np.int64)
    xs = np.floor(_src_coords(target, w) + 0.5).astype(np.int64)
    np.clip(ys, 0, h - 1, out=ys)
    np.clip(xs, 0, w - 1, out=xs)
    return np.ascontiguousarray(img[:, ys][:, :, xs])


@njit(cache=True)
def _nearest_resize_jit(img, target, out):
    c, h, w = img.shape
    for dy in range(target):
        sy = (dy + 0.5) * h / target - 0.5
        if sy < 0.0:
            sy = 0.0
        if sy > h - 1.0:
            sy = h - 1.0
        y = min(int(math.floor(sy + 0.5)), h - 1)
        for dx in range(target):
            sx = (dx + 0.5) * w / target - 0.5
            if sx < 0.0:
                sx = 0.0
            if sx > w - 1.0:
                sx = w - 1.0
            x = min(int(math.floor(sx + 0.5)), w - 1)
            for ch in range(c):
                out[ch, dy, dx] = img[ch, y, x]


def nearest_resize(img, target):
    if backend.numba_enabled():
        out = np.empty((img.shape[0], target, target), dtype=np.uint8)
        _nearest_resize_jit(np.ascontiguousarray(img), target, out)
        return out
    return nearest_resize_numpy(img, target)
