"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--size 352] [--repeat 5]
"""

import argparse
import timeit

import numpy as np
from scipy import ndimage

from urcod import kernels


def inputs(size, rng):
    mask = np.zeros((size, size), dtype=np.uint8)
    yy, xx = np.mgrid[:size, :size]
    mask[(yy - size / 2) ** 2 / 0.3 + (xx - size / 2.5) ** 2 < (size / 4) ** 2] = 1
    err = rng.random((size, size))
    sq = np.rint(ndimage.distance_transform_edt(1 - mask) ** 2).astype(np.int64)
    x = rng.normal(size=size * size)
    w = rng.normal(size=3)
    return mask, err, sq, x, w


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=352)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    mask, err, sq, x, w = inputs(args.size, rng)
    cases = {
        "atrous_conv1d": lambda k: k.atrous_conv1d(x, w, 3),
        "morph_gradient": lambda k: k.morph_gradient(mask, 1),
        "nearest_foreground_values": lambda k: k.nearest_foreground_values(err, mask, sq),
    }
    backends = kernels.available_backends()
    print(f"{args.size}x{args.size}, best of {args.repeat}; active backend: {kernels.BACKEND}")
    print(f"{'kernel':<28}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for label, fn in cases.items():
        times = {name: min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) for name, mod in backends.items()}
        row = f"{label:<28}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times.values())
        if len(times) == 2:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
