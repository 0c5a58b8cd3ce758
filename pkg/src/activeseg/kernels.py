"""Hot numeric kernels: 2-D convolution forward/backward and sliding-window
class counts.

Every kernel has two interchangeable implementations: a numba ``@njit`` loop
version (default) and a vectorized pure-numpy fallback. Set ``ACTIVESEG_JIT=0``
in the environment to force the numpy path (useful for debugging and for the
kernel benchmark). The numpy path is also selected automatically when numba is
not importable.

All arrays are float64 (images, weights, gradients) or int64 (class ids,
counts). Convolutions are stride 1 with zero padding, so spatial shape is
preserved and kernel size must be odd.
"""

from __future__ import annotations

import os

import numpy as np

JIT_ENABLED = os.environ.get("ACTIVESEG_JIT", "1").lower() not in ("0", "false", "off")

if JIT_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        JIT_ENABLED = False


# ---------------------------------------------------------------------------
# numpy implementations (fallback path, and the reference the jit path is
# tested against)
# ---------------------------------------------------------------------------

def _pad_input(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    h, w, cin = x.shape
    xp = np.zeros((h + 2 * ph, w + 2 * pw, cin), dtype=x.dtype)
    xp[ph:ph + h, pw:pw + w] = x
    return xp


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(H, W, Cin) -> (H*W, kh*kw*Cin) patch matrix under zero padding."""
    h, w, cin = x.shape
    xp = _pad_input(x, kh // 2, kw // 2)
    cols = np.empty((h, w, kh, kw, cin), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            cols[:, :, di, dj, :] = xp[di:di + h, dj:dj + w]
    return cols.reshape(h * w, kh * kw * cin)


def _conv2d_forward_np(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    h, wd, _ = x.shape
    kh, kw, cin, cout = w.shape
    cols = _im2col(x, kh, kw)
    y = cols @ w.reshape(kh * kw * cin, cout) + b
    return y.reshape(h, wd, cout)


def _conv2d_backward_np(x, w, gy):
    h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    ph, pw = kh // 2, kw // 2
    gy_mat = gy.reshape(h * wd, cout)
    cols = _im2col(x, kh, kw)
    gw = (cols.T @ gy_mat).reshape(kh, kw, cin, cout)
    gb = gy_mat.sum(axis=0)
    gcols = (gy_mat @ w.reshape(kh * kw * cin, cout).T).reshape(h, wd, kh, kw, cin)
    gxp = np.zeros((h + 2 * ph, wd + 2 * pw, cin), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            gxp[di:di + h, dj:dj + wd] += gcols[:, :, di, dj, :]
    gx = gxp[ph:ph + h, pw:pw + wd]
    return np.ascontiguousarray(gx), gw, gb


def _window_class_counts_np(pred: np.ndarray, k: int, num_classes: int):
    """Per-class counts in the (2k+1)^2 window around each pixel, windows
    clipped at image borders. Integral-image formulation, O(H*W*C) exact
    integer arithmetic."""
    h, w = pred.shape
    onehot = (pred[..., None] == np.arange(num_classes)).astype(np.int64)
    sat = np.zeros((h + 1, w + 1, num_classes), dtype=np.int64)
    np.cumsum(np.cumsum(onehot, axis=0), axis=1, out=sat[1:, 1:])
    r0 = np.maximum(np.arange(h) - k, 0)
    r1 = np.minimum(np.arange(h) + k, h - 1) + 1
    c0 = np.maximum(np.arange(w) - k, 0)
    c1 = np.minimum(np.arange(w) + k, w - 1) + 1
    counts = sat[r1][:, c1] - sat[r0][:, c1] - sat[r1][:, c0] + sat[r0][:, c0]
    sizes = (r1 - r0)[:, None] * (c1 - c0)[None, :]
    return counts, sizes


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if JIT_ENABLED:

    @njit(cache=True)
    def _conv2d_forward_jit(x, w, b):
        h, wd, cin = x.shape
        kh, kw, _, cout = w.shape
        ph = kh // 2
        pw = kw // 2
        y = np.empty((h, wd, cout))
        for i in range(h):
            for j in range(wd):
                for o in range(cout):
                    y[i, j, o] = b[o]
                for di in range(kh):
                    u = i + di - ph
                    if u < 0 or u >= h:
                        continue
                    for dj in range(kw):
                        v = j + dj - pw
                        if v < 0 or v >= wd:
                            continue
                        for ci in range(cin):
                            xv = x[u, v, ci]
                            for o in range(cout):
                                y[i, j, o] += xv * w[di, dj, ci, o]
        return y

    @njit(cache=True)
    def _conv2d_backward_jit(x, w, gy):
        h, wd, cin = x.shape
        kh, kw, _, cout = w.shape
        ph = kh // 2
        pw = kw // 2
        gx = np.zeros((h, wd, cin))
        gw = np.zeros((kh, kw, cin, cout))
        gb = np.zeros(cout)
        for i in range(h):
            for j in range(wd):
                for o in range(cout):
                    gb[o] += gy[i, j, o]
                for di in range(kh):
                    u = i + di - ph
                    if u < 0 or u >= h:
                        continue
                    for dj in range(kw):
                        v = j + dj - pw
                        if v < 0 or v >= wd:
                            continue
                        for ci in range(cin):
                            xv = x[u, v, ci]
                            acc = 0.0
                            for o in range(cout):
                                g = gy[i, j, o]
                                gw[di, dj, ci, o] += xv * g
                                acc += w[di, dj, ci, o] * g
                            gx[u, v, ci] += acc
        return gx, gw, gb

    @njit(cache=True)
    def _window_class_counts_jit(pred, k, num_classes):
        h, w = pred.shape
        sat = np.zeros((num_classes, h + 1, w + 1), dtype=np.int64)
        for c in range(num_classes):
            for i in range(h):
                for j in range(w):
                    inc = 1 if pred[i, j] == c else 0
                    sat[c, i + 1, j + 1] = (
                        inc + sat[c, i, j + 1] + sat[c, i + 1, j] - sat[c, i, j]
                    )
        counts = np.empty((h, w, num_classes), dtype=np.int64)
        sizes = np.empty((h, w), dtype=np.int64)
        for i in range(h):
            r0 = max(0, i - k)
            r1 = min(h - 1, i + k) + 1
            for j in range(w):
                c0 = max(0, j - k)
                c1 = min(w - 1, j + k) + 1
                sizes[i, j] = (r1 - r0) * (c1 - c0)
                for c in range(num_classes):
                    counts[i, j, c] = (
                        sat[c, r1, c1] - sat[c, r0, c1] - sat[c, r1, c0] + sat[c, r0, c0]
                    )
        return counts, sizes


# ---------------------------------------------------------------------------
# public dispatch
# ---------------------------------------------------------------------------

def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y[i,j,o] = b[o] + sum_{di,dj,ci} x[i+di-p, j+dj-p, ci] * w[di,dj,ci,o]."""
    if JIT_ENABLED:
        return _conv2d_forward_jit(x, w, b)
    return _conv2d_forward_np(x, w, b)


def conv2d_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray):
    """Gradients (gx, gw, gb) of a zero-padded stride-1 convolution."""
    if JIT_ENABLED:
        return _conv2d_backward_jit(x, w, gy)
    return _conv2d_backward_np(x, w, gy)


def window_class_counts(pred: np.ndarray, k: int, num_classes: int):
    """Counts of each hard-predicted class in the clipped (2k+1)x(2k+1)
    neighborhood of every pixel, plus the clipped window sizes."""
    if k < 0:
        raise ValueError(f"window radius must be >= 0, got {k}")
    pred = np.ascontiguousarray(pred, dtype=np.int64)
    if JIT_ENABLED:
        return _window_class_counts_jit(pred, k, num_classes)
    return _window_class_counts_np(pred, k, num_classes)
