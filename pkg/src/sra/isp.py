"""Bilinear Bayer demosaic in integer arithmetic.

Each colour plane is reconstructed as a normalised convolution of its
sampled sites (3x3 kernels, mirror padding that preserves CFA parity).
Results are rounded in the 10-bit domain and then shifted right by 2.
"""

from __future__ import annotations

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

from .errors import DimensionError
from .sensor import BayerOrder, RawFrame

# (row parity, col parity) of the R and B sites for each CFA order.
_SITES = {
    BayerOrder.RGGB: ((0, 0), (1, 1)),
    BayerOrder.BGGR: ((1, 1), (0, 0)),
    BayerOrder.GRBG: ((0, 1), (1, 0)),
    BayerOrder.GBRG: ((1, 0), (0, 1)),
}

_K_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.int64)
_K_G = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.int64)


def _conv3(a: np.ndarray, k: np.ndarray) -> np.ndarray:
    p = np.pad(a, 1, mode="reflect")
    h, w = a.shape
    out = np.zeros((h, w), dtype=np.int64)
    for dy in range(3):
        for dx in range(3):
            if k[dy, dx]:
                out += k[dy, dx] * p[dy:dy + h, dx:dx + w]
    return out


def cfa_masks(height: int, width: int, order: BayerOrder):
    (ry, rx), (by, bx) = _SITES[BayerOrder(order)]
    r = np.zeros((height, width), dtype=bool)
    b = np.zeros((height, width), dtype=bool)
    r[ry::2, rx::2] = True
    b[by::2, bx::2] = True
    return r, ~(r | b), b


def _demosaic_numpy(samples: np.ndarray, order) -> np.ndarray:
    h, w = samples.shape
    s = samples.astype(np.int64)
    out = np.empty((h, w, 3), dtype=np.uint8)
    for ch, (mask, kernel) in enumerate(zip(cfa_masks(h, w, order), (_K_RB, _K_G, _K_RB))):
        m = mask.astype(np.int64)
        num = _conv3(s * m, kernel)
        den = _conv3(m, kernel)
        out[..., ch] = ((num + den // 2) // den) >> 2
    return out


if numba is not None:
    @numba.njit(cache=True, nogil=True)
    def _demosaic_kernel(s, ry, rx, by, bx, k_rb, k_g, out):
        h, w = s.shape
        for y in range(h):
            for x in range(w):
                n0 = n1 = n2 = d0 = d1 = d2 = 0
                for dy in range(3):
                    yy = y + dy - 1
                    if yy < 0:
                        yy = -yy
                    elif yy >= h:
                        yy = 2 * h - 2 - yy
                    for dx in range(3):
                        xx = x + dx - 1
                        if xx < 0:
                            xx = -xx
                        elif xx >= w:
                            xx = 2 * w - 2 - xx
                        v = np.int64(s[yy, xx])
                        py, px = yy & 1, xx & 1
                        if py == ry and px == rx:
                            k = k_rb[dy, dx]
                            n0 += k * v
                            d0 += k
                        elif py == by and px == bx:
                            k = k_rb[dy, dx]
                            n2 += k * v
                            d2 += k
                        else:
                            k = k_g[dy, dx]
                            n1 += k * v
                            d1 += k
                out[y, x, 0] = ((n0 + d0 // 2) // d0) >> 2
                out[y, x, 1] = ((n1 + d1 // 2) // d1) >> 2
                out[y, x, 2] = ((n2 + d2 // 2) // d2) >> 2


def demosaic_array(samples: np.ndarray, order=BayerOrder.RGGB) -> np.ndarray:
    """(H, W) 10-bit Bayer samples -> (H, W, 3) uint8 RGB."""
    h, w = samples.shape
    if h < 2 or w < 2 or h % 2 or w % 2:
        raise DimensionError(f"demosaic needs even dimensions, got {w}x{h}")
    if numba is None:
        return _demosaic_numpy(samples, order)
    (ry, rx), (by, bx) = _SITES[BayerOrder(order)]
    out = np.empty((h, w, 3), dtype=np.uint8)
    _demosaic_kernel(np.ascontiguousarray(samples), ry, rx, by, bx, _K_RB, _K_G, out)
    return out


def demosaic(frame: RawFrame) -> np.ndarray:
    return demosaic_array(frame.samples, frame.bayer_order)
