# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Mirrors ``_pykernels`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor

cnp.import_array()


def atrous_conv1d(const double[::1] x, const double[::1] w, Py_ssize_t rate):
    cdef Py_ssize_t n = x.shape[0], k = w.shape[0]
    cdef Py_ssize_t span = rate * (k - 1) + 1
    if rate < 1:
        raise ValueError("atrous rate must be >= 1")
    if k < 1 or n < span:
        raise ValueError(f"filter of length {k} at rate {rate} needs {span} samples, got {n}")
    cdef Py_ssize_t m = n - span + 1
    out = np.zeros(m, dtype=np.float64)
    cdef double[::1] y = out
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(m):
        acc = 0.0
        for j in range(k):
            acc += x[i + rate * j] * w[j]
        y[i] = acc
    return out


def morph_gradient(const cnp.uint8_t[:, ::1] mask, Py_ssize_t width):
    """Dilation minus erosion with a (2w+1)^2 square; out-of-image pixels are ignored."""
    cdef Py_ssize_t h = mask.shape[0], wd = mask.shape[1]
    out = np.zeros((h, wd), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] o = out
    # separable: row pass then column pass, for both max and min
    rmax = np.empty((h, wd), dtype=np.uint8)
    rmin = np.empty((h, wd), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] rx = rmax
    cdef cnp.uint8_t[:, ::1] rn = rmin
    cdef Py_ssize_t i, j, t, lo, hi
    cdef cnp.uint8_t mx, mn, v
    for i in range(h):
        for j in range(wd):
            lo = j - width if j - width > 0 else 0
            hi = j + width if j + width < wd - 1 else wd - 1
            mx = 0
            mn = 1
            for t in range(lo, hi + 1):
                v = mask[i, t]
                if v > mx:
                    mx = v
                if v < mn:
                    mn = v
            rx[i, j] = mx
            rn[i, j] = mn
    for i in range(h):
        lo = i - width if i - width > 0 else 0
        hi = i + width if i + width < h - 1 else h - 1
        for j in range(wd):
            mx = 0
            mn = 1
            for t in range(lo, hi + 1):
                if rx[t, j] > mx:
                    mx = rx[t, j]
                if rn[t, j] < mn:
                    mn = rn[t, j]
            o[i, j] = mx - mn
    return out


def nearest_foreground_values(const double[:, ::1] err, const cnp.uint8_t[:, ::1] fg,
                              const cnp.int64_t[:, ::1] sqdist):
    """Replace each background value of ``err`` with its nearest foreground value.

    ``sqdist`` holds the exact squared distance to the nearest foreground pixel.
    Equidistant foreground pixels are averaged, which keeps the result
    unchanged under flips and transposes.
    """
    cdef Py_ssize_t h = err.shape[0], w = err.shape[1]
    out = np.array(err, dtype=np.float64, copy=True)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, dy, y, x, r
    cdef long long d2, rem, dx
    cdef int count
    cdef double acc
    for i in range(h):
        for j in range(w):
            if fg[i, j]:
                continue
            d2 = sqdist[i, j]
            r = <Py_ssize_t>floor(sqrt(<double>d2) + 0.5)
            while r * r > d2:
                r -= 1
            count = 0
            acc = 0.0
            for dy in range(-r, r + 1):
                y = i + dy
                if y < 0 or y >= h:
                    continue
                rem = d2 - dy * dy
                dx = <long long>floor(sqrt(<double>rem) + 0.5)
                while dx * dx > rem:
                    dx -= 1
                while (dx + 1) * (dx + 1) <= rem:
                    dx += 1
                if dx * dx != rem:
                    continue
                x = j - dx
                if 0 <= x < w and fg[y, x]:
                    acc += err[y, x]
                    count += 1
                x = j + dx
                if dx != 0 and 0 <= x < w and fg[y, x]:
                    acc += err[y, x]
                    count += 1
            if count == 0:
                raise RuntimeError("inconsistent distance map")
            o[i, j] = acc / count
    return out
