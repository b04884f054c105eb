"""Slow, independent reference implementations used by tests and selftest.

Each oracle avoids the code path it checks: closed-form eigenvalues
against Jacobi, explicit loops against vectorized conv/attention/sampling,
and compensated summation against pairwise reductions.
"""

from __future__ import annotations

import math

import numpy as np


def kahan_sum(values) -> float:
    total = 0.0
    comp = 0.0
    for v in values:
        y = float(v) - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


def eigvalsh_cubic(a: np.ndarray) -> np.ndarray:
    """Descending eigenvalues of a symmetric 3x3 matrix via the trigonometric
    solution of its characteristic cubic."""
    a = np.asarray(a, dtype=np.float64)
    p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
    q = np.trace(a) / 3.0
    if p1 == 0.0:
        return np.sort(np.diag(a))[::-1].copy()
    p2 = (a[0, 0] - q) ** 2 + (a[1, 1] - q) ** 2 + (a[2, 2] - q) ** 2 + 2 * p1
    p = math.sqrt(p2 / 6.0)
    b = (a - q * np.eye(3)) / p
    r = np.linalg.det(b) / 2.0
    phi = math.acos(min(1.0, max(-1.0, r))) / 3.0
    e1 = q + 2 * p * math.cos(phi)
    e3 = q + 2 * p * math.cos(phi + 2 * math.pi / 3)
    return np.array([e1, 3 * q - e1 - e3, e3])


def scan_loop(a, u) -> np.ndarray:
    """Scalar-by-scalar evaluation of h_t = a_t h_{t-1} + u_t."""
    a = np.asarray(a, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    h = np.zeros_like(u)
    flat_a = a.reshape(a.shape[0], -1)
    flat_u = u.reshape(u.shape[0], -1)
    flat_h = h.reshape(u.shape[0], -1)
    for j in range(flat_u.shape[1]):
        prev = 0.0
        for t in range(flat_u.shape[0]):
            prev = flat_a[t, j] * prev + flat_u[t, j]
            flat_h[t, j] = prev
    return h


def raster_cells(H: int, W: int) -> list[tuple[int, int]]:
    return [(u, v) for u in range(H) for v in range(W)]


def zigzag_cells(H: int, W: int) -> list[tuple[int, int]]:
    cells = []
    for u in range(H):
        cols = range(W) if u % 2 == 0 else range(W - 1, -1, -1)
        cells.extend((u, v) for v in cols)
    return cells


def depthwise_conv_loop(x: np.ndarray, kernel: np.ndarray, bias=None) -> np.ndarray:
    """3x3 per-channel cross-correlation with zero padding, written as loops."""
    H, W, C = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for i in range(H):
        for j in range(W):
            for c in range(C):
                acc = 0.0
                for di in range(3):
                    for dj in range(3):
                        ii, jj = i + di - 1, j + dj - 1
                        if 0 <= ii < H and 0 <= jj < W:
                            acc += x[ii, jj, c] * kernel[c, di, dj]
                out[i, j, c] = acc + (0.0 if bias is None else bias[c])
    return out


def attention_loop(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Softmax(q k^T / sqrt(d)) v, one query at a time."""
    n, d = q.shape
    out = np.zeros((n, v.shape[1]))
    for i in range(n):
        s = [float(q[i] @ k[j]) / math.sqrt(d) for j in range(k.shape[0])]
        m = max(s)
        e = [math.exp(x - m) for x in s]
        z = sum(e)
        for j in range(k.shape[0]):
            out[i] += e[j] / z * v[j]
    return out


def bilinear_point(feat: np.ndarray, y: float, x: float) -> np.ndarray:
    """Sample an (H, W, C) map at continuous (y, x); integer coordinates are
    cell centers and neighbors outside the map contribute zero."""
    H, W, C = feat.shape
    y0, x0 = math.floor(y), math.floor(x)
    out = np.zeros(C)
    for yy in (y0, y0 + 1):
        for xx in (x0, x0 + 1):
            w = (1 - abs(y - yy)) * (1 - abs(x - xx))
            if 0 <= yy < H and 0 <= xx < W and w > 0:
                out += w * feat[yy, xx]
    return out


def pillar_reference(points: list[tuple[float, float, float, float, int]], center) -> list[float]:
    """Pooled maxima and reflectance statistics of one pillar in plain Python."""
    m = len(points)
    z_mean = kahan_sum(p[2] for p in points) / m
    maxima = [max(p[k] for p in points) for k in range(5)]
    maxima += [max(p[0] - center[0] for p in points), max(p[1] - center[1] for p in points),
               max(p[2] - z_mean for p in points)]
    r_mean = kahan_sum(p[3] for p in points) / m
    r_var = kahan_sum((p[3] - r_mean) ** 2 for p in points) / m
    return maxima + [r_mean, r_var]
