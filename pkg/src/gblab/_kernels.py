"""Hot numeric loops: label contingency tables and sprite rasterisation.

Each kernel has a numba ``@njit`` implementation and a pure-numpy one.
``GBLAB_DISABLE_NUMBA=1`` (read at import) selects the numpy path; it is also
used automatically when numba is unavailable. Both paths give identical
results.
"""
from __future__ import annotations

import os

import numpy as np

SQUARE, ELLIPSE, TRIANGLE = 0, 1, 2

_disabled = os.environ.get("GBLAB_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")
try:
    if _disabled:
        raise ImportError
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# -- contingency table ---------------------------------------------------------

def contingency_table_numpy(a: np.ndarray, b: np.ndarray, na: int, nb: int) -> np.ndarray:
    flat = a.astype(np.int64) * nb + b.astype(np.int64)
    return np.bincount(flat, minlength=na * nb).reshape(na, nb)


def _contingency_table_loop(a, b, na, nb):
    out = np.zeros((na, nb), dtype=np.int64)
    for i in range(a.shape[0]):
        out[a[i], b[i]] += 1
    return out


# -- rasterisation -------------------------------------------------------------
# sprites: (n, 6) float64 rows of (shape, cy, cx, size, aspect, angle)


def _triangle_vertices(cy, cx, r, angle):
    vy = np.empty(3)
    vx = np.empty(3)
    for j in range(3):
        t = angle + np.pi / 2 + j * 2 * np.pi / 3
        vy[j] = cy - r * np.sin(t)
        vx[j] = cx + r * np.cos(t)
    return vy, vx


def rasterize_numpy(sprites: np.ndarray, size: int) -> np.ndarray:
    labels = np.zeros((size, size), dtype=np.int32)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    for i in range(sprites.shape[0]):
        kind, cy, cx, s, aspect, angle = sprites[i]
        dy, dx = yy - cy, xx - cx
        if int(kind) == SQUARE:
            inside = (np.abs(dy) <= s / 2) & (np.abs(dx) <= s / 2)
        elif int(kind) == ELLIPSE:
            c, sn = np.cos(angle), np.sin(angle)
            u = c * dx + sn * dy
            v = -sn * dx + c * dy
            a, b = s / 2, s / 2 * aspect
            inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        else:
            vy, vx = _triangle_vertices(cy, cx, s / 2, angle)
            d = []
            for j in range(3):
                k = (j + 1) % 3
                d.append((vx[k] - vx[j]) * (yy - vy[j]) - (vy[k] - vy[j]) * (xx - vx[j]))
            neg = (d[0] < 0) | (d[1] < 0) | (d[2] < 0)
            pos = (d[0] > 0) | (d[1] > 0) | (d[2] > 0)
            inside = ~(neg & pos)
        labels[inside] = i + 1
    return labels


def _rasterize_loop(sprites, size):
    labels = np.zeros((size, size), dtype=np.int32)
    for i in range(sprites.shape[0]):
        kind = int(sprites[i, 0])
        cy = sprites[i, 1]
        cx = sprites[i, 2]
        s = sprites[i, 3]
        aspect = sprites[i, 4]
        angle = sprites[i, 5]
        c = np.cos(angle)
        sn = np.sin(angle)
        vy, vx = _triangle_vertices(cy, cx, s / 2, angle)
        for y in range(size):
            py = y + 0.5
            for x in range(size):
                px = x + 0.5
                dy = py - cy
                dx = px - cx
                if kind == SQUARE:
                    inside = abs(dy) <= s / 2 and abs(dx) <= s / 2
                elif kind == ELLIPSE:
                    u = c * dx + sn * dy
                    v = -sn * dx + c * dy
                    a = s / 2
                    b = s / 2 * aspect
                    inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
                else:
                    neg = False
                    pos = False
                    for j in range(3):
                        k = (j + 1) % 3
                        d = (vx[k] - vx[j]) * (py - vy[j]) - (vy[k] - vy[j]) * (px - vx[j])
                        if d < 0:
                            neg = True
                        elif d > 0:
                            pos = True
                    inside = not (neg and pos)
                if inside:
                    labels[y, x] = i + 1
    return labels


if HAVE_NUMBA:
    _triangle_vertices = njit(cache=True)(_triangle_vertices)
    contingency_table_numba = njit(cache=True)(_contingency_table_loop)
    rasterize_numba = njit(cache=True)(_rasterize_loop)
    contingency_table = contingency_table_numba
    rasterize = rasterize_numba
else:
    contingency_table_numba = rasterize_numba = None
    contingency_table = contingency_table_numpy
    rasterize = rasterize_numpy


def label_contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Counts of co-occurring labels for two flat non-negative integer label arrays."""
    a = np.ascontiguousarray(a, dtype=np.int64).ravel()
    b = np.ascontiguousarray(b, dtype=np.int64).ravel()
    if a.shape != b.shape:
        raise ValueError("label arrays must have equal size")
    if a.size == 0:
        return np.zeros((0, 0), dtype=np.int64)
    return contingency_table(a, b, int(a.max()) + 1, int(b.max()) + 1)


def rasterize_sprites(sprites: np.ndarray, size: int) -> np.ndarray:
    """Paint sprites back to front into a label map (0 = background, i+1 = sprite i)."""
    sprites = np.ascontiguousarray(sprites, dtype=np.float64).reshape(-1, 6)
    return rasterize(sprites, int(size))
