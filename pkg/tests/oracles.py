"""Slow, literal reference implementations used as test oracles.

Everything here is written with explicit loops over pixels and does not call
into the package, so agreement with the vectorised code is meaningful.
"""
import math

import numpy as np

EPS = np.finfo(np.float64).eps


# -- attention / pooling ---------------------------------------------------------

def nonlocal_attention(q, k):
    """q, k: (c, n) arrays. S[i, j] = exp(q_i . k_j) / sum_i' exp(q_i' . k_j)."""
    c, n = q.shape
    logits = [[sum(q[a, i] * k[a, j] for a in range(c)) for j in range(n)] for i in range(n)]
    s = np.zeros((n, n))
    for j in range(n):
        col = [logits[i][j] for i in range(n)]
        m = max(col)
        z = sum(math.exp(v - m) for v in col)
        for i in range(n):
            s[i, j] = math.exp(col[i] - m) / z
    return s


def window_mean(x, i, j, radius):
    """Mean of x over the (2r+1)^2 window at (i, j), clipped to the array."""
    h, w = x.shape
    total, count = 0.0, 0
    for a in range(max(0, i - radius), min(h, i + radius + 1)):
        for b in range(max(0, j - radius), min(w, j + radius + 1)):
            total += x[a, b]
            count += 1
    return total / count


def boundary(m):
    m = np.asarray(m, dtype=np.float64)
    out = np.zeros_like(m)
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            out[i, j] = abs(window_mean(m, i, j, 1) - m[i, j])
    return out


def weight_map(g, pool=31, gain=5.0):
    g = np.asarray(g, dtype=np.float64)
    out = np.zeros_like(g)
    for i in range(g.shape[0]):
        for j in range(g.shape[1]):
            out[i, j] = 1 + gain * abs(window_mean(g, i, j, pool // 2) - g[i, j])
    return out


def hybrid_loss_probs(p, g, pool=31, gain=5.0):
    """Weighted BCE + weighted IoU for one (h, w) probability map."""
    w = weight_map(g, pool, gain)
    num = den = inter = union = 0.0
    for i in range(g.shape[0]):
        for j in range(g.shape[1]):
            pp, gg, ww = float(p[i, j]), float(g[i, j]), float(w[i, j])
            bce = -(gg * math.log(max(pp, 1e-12)) + (1 - gg) * math.log(max(1 - pp, 1e-12)))
            num += ww * bce
            den += ww
            inter += pp * gg * ww
            union += (pp + gg) * ww
    return num / den + 1 - (inter + 1) / (union - inter + 1)


# -- box ------------------------------------------------------------------------

def bbox(mask, ratio):
    """Inclusive (x0, y0, x1, y1) by scanning pixels, expanded and clamped."""
    h, w = mask.shape
    pts = [(i, j) for i in range(h) for j in range(w) if mask[i, j]]
    if not pts:
        return (0, 0, w - 1, h - 1)
    ys = [p[0] for p in pts]
    xs = [p[1] for p in pts]
    x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    side = ratio * max(x1 - x0, y1 - y0)
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    return (max(0, math.floor(cx - side / 2 + 1e-9)), max(0, math.floor(cy - side / 2 + 1e-9)),
            min(w - 1, math.ceil(cx + side / 2 - 1e-9)), min(h - 1, math.ceil(cy + side / 2 - 1e-9)))


# -- metrics --------------------------------------------------------------------

def mae(p, g):
    h, w = g.shape
    return sum(abs(float(p[i, j]) - float(g[i, j])) for i in range(h) for j in range(w)) / (h * w)


def pr_counts(p, g, t):
    """Precision, recall, F(beta^2=0.3) at integer threshold t on round-half-up 8-bit values."""
    tp = fp = pos = 0
    h, w = g.shape
    for i in range(h):
        for j in range(w):
            q = math.floor(float(p[i, j]) * 255 + 0.5)
            if g[i, j]:
                pos += 1
            if q > t:
                if g[i, j]:
                    tp += 1
                else:
                    fp += 1
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / pos if pos else 0.0
    f = 1.3 * prec * rec / (0.3 * prec + rec) if (0.3 * prec + rec) > 0 else 0.0
    return prec, rec, f


def _mean(xs):
    return sum(xs) / len(xs)


def _std1(xs):
    if len(xs) < 2:
        return 0.0
    m = _mean(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def _object(xs):
    if not xs:
        return 0.0
    m = _mean(xs)
    return 2 * m / (m * m + 1 + _std1(xs) + EPS)


def _ssim(p, g):
    n = len(p)
    x, y = _mean(p), _mean(g)
    d = n - 1 + EPS
    sx = sum((a - x) ** 2 for a in p) / d
    sy = sum((b - y) ** 2 for b in g) / d
    sxy = sum((a - x) * (b - y) for a, b in zip(p, g)) / d
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0 else 0.0


def s_measure(p, g, alpha=0.5):
    h, w = g.shape
    cells = [(i, j) for i in range(h) for j in range(w)]
    y = sum(1 for c in cells if g[c]) / len(cells)
    if y == 0:
        return 1 - _mean([float(p[c]) for c in cells])
    if y == 1:
        return _mean([float(p[c]) for c in cells])
    o_fg = _object([float(p[c]) for c in cells if g[c]])
    o_bg = _object([1 - float(p[c]) for c in cells if not g[c]])
    so = y * o_fg + (1 - y) * o_bg
    # 1-based centroid, rounded half up
    total = sum(1 for c in cells if g[c])
    cx = math.floor(sum(j + 1 for i, j in cells if g[i, j]) / total + 0.5)
    cy = math.floor(sum(i + 1 for i, j in cells if g[i, j]) / total + 0.5)
    sr = 0.0
    for top in (True, False):
        for left in (True, False):
            block = [(i, j) for i, j in cells
                     if ((i + 1 <= cy) == top) and ((j + 1 <= cx) == left)]
            if not block:
                continue
            sr += len(block) / len(cells) * _ssim([float(p[c]) for c in block],
                                                  [float(g[c]) for c in block])
    return max(0.0, alpha * so + (1 - alpha) * sr)


def e_measure(p, g):
    """Mean over thresholds (k + 0.5) / 256 of the mean enhanced-alignment value."""
    h, w = g.shape
    n = h * w
    gt = [[1.0 if g[i, j] else 0.0 for j in range(w)] for i in range(h)]
    mu_g = sum(map(sum, gt)) / n
    scores = []
    for k in range(256):
        tau = (k + 0.5) / 256
        fm = [[1.0 if p[i, j] > tau else 0.0 for j in range(w)] for i in range(h)]
        mu_f = sum(map(sum, fm)) / n
        acc = 0.0
        for i in range(h):
            for j in range(w):
                if mu_g == 0:
                    acc += 1 - fm[i][j]
                elif mu_g == 1:
                    acc += fm[i][j]
                else:
                    a, b = fm[i][j] - mu_f, gt[i][j] - mu_g
                    align = 2 * a * b / (a * a + b * b + EPS)
                    acc += (align + 1) ** 2 / 4
        scores.append(acc / n)
    return sum(scores) / len(scores)


def gaussian(size=7, sigma=5.0):
    r = size // 2
    k = [[math.exp(-(x * x + y * y) / (2 * sigma * sigma)) for x in range(-r, r + 1)]
         for y in range(-r, r + 1)]
    s = sum(map(sum, k))
    return [[v / s for v in row] for row in k]


def nearest_fg(g, i, j):
    """(distance, (row, col)) of the nearest foreground pixel; ties go to the
    smallest column, then the smallest row."""
    best = None
    h, w = g.shape
    for b in range(w):
        for a in range(h):
            if g[a, b]:
                d2 = (a - i) ** 2 + (b - j) ** 2
                if best is None or d2 < best[0]:
                    best = (d2, (a, b))
    return math.sqrt(best[0]), best[1]


def weighted_f(p, g, beta2=1.0):
    h, w = g.shape
    if not g.any():
        return 0.0
    err = [[abs(float(p[i, j]) - (1.0 if g[i, j] else 0.0)) for j in range(w)] for i in range(h)]
    et = [row[:] for row in err]
    dist = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            if not g[i, j]:
                d, (a, b) = nearest_fg(g, i, j)
                dist[i][j] = d
                et[i][j] = err[a][b]
    k = gaussian()
    ea = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            s = 0.0
            for u in range(-3, 4):
                for v in range(-3, 4):
                    a, b = i + u, j + v
                    if 0 <= a < h and 0 <= b < w:
                        s += k[u + 3][v + 3] * et[a][b]
            ea[i][j] = s
    ew_fg, ew_bg = [], []
    for i in range(h):
        for j in range(w):
            if g[i, j]:
                e = ea[i][j] if ea[i][j] < err[i][j] else err[i][j]
                ew_fg.append(e)
            else:
                ew_bg.append(err[i][j] * (2 - math.exp(math.log(0.5) / 5 * dist[i][j])))
    tpw = len(ew_fg) - sum(ew_fg)
    fpw = sum(ew_bg)
    recall = 1 - _mean(ew_fg)
    precision = tpw / (EPS + tpw + fpw)
    return (1 + beta2) * recall * precision / (EPS + recall + beta2 * precision)
