"""Slow reference implementations used only by the tests.

Everything here is written with explicit Python loops over pixels and does
not import the package under test.
"""

import math

import numpy as np

EPS = np.finfo(np.float64).eps


def _as_lists(a):
    return [[float(v) for v in row] for row in np.asarray(a, dtype=np.float64)]


def mae(pred, gt):
    p, g = _as_lists(pred), _as_lists(gt)
    h, w = len(p), len(p[0])
    total = 0.0
    for i in range(h):
        for j in range(w):
            total += abs(p[i][j] - g[i][j])
    return total / (h * w)


def _mean(vals):
    return sum(vals) / len(vals)


def _std_sample(vals):
    if len(vals) < 2:
        return 0.0
    m = _mean(vals)
    return math.sqrt(sum((v - m) ** 2 for v in vals) / (len(vals) - 1))


def s_measure(pred, gt, alpha=0.5):
    p = _as_lists(pred)
    g = [[1 if v >= 0.5 else 0 for v in row] for row in _as_lists(gt)]
    h, w = len(p), len(p[0])
    n_fg = sum(sum(row) for row in g)
    if n_fg == 0:
        return 1.0 - sum(sum(row) for row in p) / (h * w)
    if n_fg == h * w:
        return sum(sum(row) for row in p) / (h * w)

    # object-aware part
    fg_vals = [p[i][j] for i in range(h) for j in range(w) if g[i][j] == 1]
    bg_vals = [1.0 - p[i][j] for i in range(h) for j in range(w) if g[i][j] == 0]

    def obj(vals):
        x = _mean(vals)
        return 2.0 * x / (x * x + 1.0 + _std_sample(vals) + EPS)

    u = n_fg / (h * w)
    s_o = u * obj(fg_vals) + (1.0 - u) * obj(bg_vals)

    # region-aware part: split on the pixel boundary nearest the centroid,
    # averaging both candidates when the centroid lands on a pixel center
    def cuts(total):
        c = total / n_fg
        if c == int(c):
            return [int(c), int(c) + 1]
        return [int(np.floor(c)) + 1]

    sx = sum(j for i in range(h) for j in range(w) if g[i][j] == 1)
    sy = sum(i for i in range(h) for j in range(w) if g[i][j] == 1)

    def ssim(rows, cols):
        xs = [p[i][j] for i in rows for j in cols]
        ys = [float(g[i][j]) for i in rows for j in cols]
        n = len(xs)
        if n == 0:
            return 0.0
        mx, my = _mean(xs), _mean(ys)
        d = max(n - 1, 1)
        vx = sum((a - mx) ** 2 for a in xs) / d
        vy = sum((b - my) ** 2 for b in ys) / d
        cxy = sum((a - mx) * (b - my) for a, b in zip(xs, ys)) / d
        a_ = 4 * mx * my * cxy
        b_ = (mx * mx + my * my) * (vx + vy)
        if a_ != 0:
            return a_ / (b_ + EPS)
        return 1.0 if b_ == 0 else 0.0

    s_r, splits = 0.0, [(x, y) for x in cuts(sx) for y in cuts(sy)]
    for cx, cy in splits:
        quads = [
            (range(0, cy), range(0, cx)),
            (range(0, cy), range(cx, w)),
            (range(cy, h), range(0, cx)),
            (range(cy, h), range(cx, w)),
        ]
        for rows, cols in quads:
            s_r += (len(rows) * len(cols) / (h * w)) * ssim(rows, cols) / len(splits)
    return max(alpha * s_o + (1 - alpha) * s_r, 0.0)


def e_measure(pred, gt):
    p = _as_lists(pred)
    g = [[1.0 if v >= 0.5 else 0.0 for v in row] for row in _as_lists(gt)]
    h, w = len(p), len(p[0])
    n = h * w
    thr = min(2.0 * sum(sum(r) for r in p) / n, 1.0)
    f = [[1.0 if p[i][j] >= thr else 0.0 for j in range(w)] for i in range(h)]
    n_fg = sum(sum(r) for r in g)
    total = 0.0
    if n_fg == 0 or n_fg == n:
        target = 0.0 if n_fg == 0 else 1.0
        for i in range(h):
            for j in range(w):
                xi = 1.0 if f[i][j] == target else -1.0
                total += (1 + xi) ** 2 / 4
        return total / n
    mf = sum(sum(r) for r in f) / n
    mg = n_fg / n
    for i in range(h):
        for j in range(w):
            a = f[i][j] - mf
            b = g[i][j] - mg
            xi = 2 * a * b / (a * a + b * b + EPS)
            total += (1 + xi) ** 2 / 4
    return total / n


def weighted_f_measure(pred, gt, beta_sq=1.0, sigma=5.0, window=7):
    p = _as_lists(pred)
    g = [[1 if v >= 0.5 else 0 for v in row] for row in _as_lists(gt)]
    h, w = len(p), len(p[0])
    fg = [(i, j) for i in range(h) for j in range(w) if g[i][j]]
    if not fg:
        return 0.0
    err = [[abs(p[i][j] - g[i][j]) for j in range(w)] for i in range(h)]

    # brute-force nearest foreground pixel; equidistant ones are averaged
    dist = [[0.0] * w for _ in range(h)]
    err_t = [row[:] for row in err]
    for i in range(h):
        for j in range(w):
            if g[i][j]:
                continue
            d2s = [(fi - i) ** 2 + (fj - j) ** 2 for fi, fj in fg]
            best = min(d2s)
            tied = [err[fi][fj] for (fi, fj), d2 in zip(fg, d2s) if d2 == best]
            dist[i][j] = math.sqrt(best)
            err_t[i][j] = sum(tied) / len(tied)

    r = (window - 1) // 2
    kern = [[math.exp(-(a * a + b * b) / (2 * sigma * sigma)) for b in range(-r, r + 1)] for a in range(-r, r + 1)]
    ksum = sum(sum(row) for row in kern)
    kern = [[v / ksum for v in row] for row in kern]
    ea = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(-r, r + 1):
                for b in range(-r, r + 1):
                    y, x = i + a, j + b
                    if 0 <= y < h and 0 <= x < w:
                        acc += kern[a + r][b + r] * err_t[y][x]
            ea[i][j] = acc

    tpw = 0.0
    fpw = 0.0
    ew_fg = 0.0
    n_fg = len(fg)
    for i in range(h):
        for j in range(w):
            e = err[i][j]
            if g[i][j]:
                m = ea[i][j] if ea[i][j] < e else e
                ew_fg += m
            else:
                fpw += e * (2.0 - math.exp(math.log(0.5) / 5.0 * dist[i][j]))
    tpw = n_fg - ew_fg
    recall = 1.0 - ew_fg / n_fg
    precision = tpw / (tpw + fpw + EPS)
    return (1 + beta_sq) * recall * precision / (recall + beta_sq * precision + EPS)


def morph_gradient(mask, width):
    m = [[1 if v >= 0.5 else 0 for v in row] for row in _as_lists(mask)]
    h, w = len(m), len(m[0])
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            vals = [
                m[y][x]
                for y in range(i - width, i + width + 1)
                for x in range(j - width, j + width + 1)
                if 0 <= y < h and 0 <= x < w
            ]
            out[i, j] = max(vals) - min(vals)
    return out


def dilated_sum(x, w, r):
    """y[i] = sum_k x[i + r k] w[k] for every i with a full support."""
    n, k = len(x), len(w)
    out = []
    i = 0
    while i + r * (k - 1) < n:
        out.append(sum(x[i + r * kk] * w[kk] for kk in range(k)))
        i += 1
    return np.array(out)


def bce(pred, target, eps=1e-6):
    p, t = _as_lists(pred), _as_lists(target)
    total, n = 0.0, 0
    for pr, tr in zip(p, t):
        for a, b in zip(pr, tr):
            a = min(max(a, eps), 1 - eps)
            total += -(b * math.log(a) + (1 - b) * math.log(1 - a))
            n += 1
    return total / n


def mse(pred, target):
    p, t = _as_lists(pred), _as_lists(target)
    total, n = 0.0, 0
    for pr, tr in zip(p, t):
        for a, b in zip(pr, tr):
            total += (a - b) ** 2
            n += 1
    return total / n


def structure_loss(pred, target, eps=1e-6, window=15):
    p, t = _as_lists(pred), _as_lists(target)
    h, w = len(p), len(p[0])
    r = window // 2
    wt = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for y in range(i - r, i + r + 1):
                for x in range(j - r, j + r + 1):
                    if 0 <= y < h and 0 <= x < w:
                        acc += t[y][x]
            wt[i][j] = 1 + 5 * abs(acc / (window * window) - t[i][j])
    num = den = inter = union = 0.0
    for i in range(h):
        for j in range(w):
            a = min(max(p[i][j], eps), 1 - eps)
            b = t[i][j]
            l = -(b * math.log(a) + (1 - b) * math.log(1 - a))
            num += wt[i][j] * l
            den += wt[i][j]
            inter += wt[i][j] * a * b
            union += wt[i][j] * (a + b)
    return num / den + 1 - inter / (union - inter)
