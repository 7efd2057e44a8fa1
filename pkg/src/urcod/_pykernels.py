"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def atrous_conv1d(x, w, rate):
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if rate < 1:
        raise ValueError("atrous rate must be >= 1")
    k = w.shape[0]
    span = rate * (k - 1) + 1
    if k < 1 or x.shape[0] < span:
        raise ValueError(f"filter of length {k} at rate {rate} needs {span} samples, got {x.shape[0]}")
    m = x.shape[0] - span + 1
    out = np.zeros(m, dtype=np.float64)
    for j in range(k):
        out += x[rate * j : rate * j + m] * w[j]
    return out


def morph_gradient(mask, width):
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    size = 2 * width + 1
    hi = np.pad(mask, width, mode="constant", constant_values=0)
    lo = np.pad(mask, width, mode="constant", constant_values=1)
    dil = sliding_window_view(hi, (size, size)).max(axis=(-1, -2))
    ero = sliding_window_view(lo, (size, size)).min(axis=(-1, -2))
    return (dil - ero).astype(np.uint8)


def nearest_foreground_values(err, fg, sqdist):
    err = np.asarray(err, dtype=np.float64)
    fg = np.asarray(fg, dtype=bool)
    sqdist = np.asarray(sqdist, dtype=np.int64)
    h, w = err.shape
    out = err.copy()
    for i, j in zip(*np.nonzero(~fg)):
        d2 = int(sqdist[i, j])
        r = int(np.sqrt(d2))
        vals = []
        for dy in range(-r, r + 1):
            y = i + dy
            if not 0 <= y < h:
                continue
            rem = d2 - dy * dy
            dx = int(round(np.sqrt(rem)))
            if dx * dx != rem:
                continue
            for x in ((j - dx, j + dx) if dx else (j,)):
                if 0 <= x < w and fg[y, x]:
                    vals.append(err[y, x])
        if not vals:
            raise RuntimeError("inconsistent distance map")
        out[i, j] = sum(vals) / len(vals)
    return out
