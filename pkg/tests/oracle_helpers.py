"""Slow, hand-rolled reference implementations used to cross-check nlprop.

Everything here trades speed for obviousness: plain Python loops over lists
and math.* calls, written independently of the vectorized library code so a
bug would have to be made twice to go unnoticed.
"""

import math


def clamp(v, lo, hi):
    return lo if v < lo else hi if v > hi else v


def bilinear_ref(field, row, col):
    """Clamp-to-edge bilinear interpolation on a list-of-lists field."""
    h, w = len(field), len(field[0])
    r = clamp(row, 0.0, float(h - 1))
    c = clamp(col, 0.0, float(w - 1))
    if h == 1:
        r0, fr = 0, 0.0
    else:
        r0 = min(int(math.floor(r)), h - 2)
        fr = r - r0
    if w == 1:
        c0, fc = 0, 0.0
    else:
        c0 = min(int(math.floor(c)), w - 2)
        fc = c - c0
    r1 = min(r0 + 1, h - 1)
    c1 = min(c0 + 1, w - 1)
    return (
        (1.0 - fr) * (1.0 - fc) * field[r0][c0]
        + (1.0 - fr) * fc * field[r0][c1]
        + fr * (1.0 - fc) * field[r1][c0]
        + fr * fc * field[r1][c1]
    )


def step_ref(x, offsets, weights):
    """Textbook propagation step: w_ref * x + sum_k w_k * bilinear(neighbor).

    x is a list-of-lists field, offsets[i][j][k] = (drow, dcol), and
    weights[i][j] the normalized K-vector for that pixel.
    """
    h, w = len(x), len(x[0])
    out = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            ws = weights[i][j]
            acc = (1.0 - sum(ws)) * x[i][j]
            for k, wk in enumerate(ws):
                dy, dx = offsets[i][j][k]
                acc += wk * bilinear_ref(x, i + dy, j + dx)
            out[i][j] = acc
    return out


def abs_sum_ref(vec):
    s = sum(abs(v) for v in vec)
    return [v / s for v in vec]


def abs_sum_star_ref(vec):
    s = sum(abs(v) for v in vec)
    if s > 1.0:
        return [v / s for v in vec]
    return list(vec)


def tanh_c_ref(vec, c):
    return [math.tanh(v) / c for v in vec]


def tanh_gamma_ref(vec, gamma):
    return abs_sum_star_ref([math.tanh(v) / gamma for v in vec])


def normalize_ref(variant, vec, c=None, gamma=None, conf=None):
    """One scheme plus the optional confidence damping of the pre-vector."""
    if variant in ("abs_sum", "abs_sum_star"):
        pre = list(vec)
    elif variant == "tanh_c":
        pre = [math.tanh(v) / c for v in vec]
    elif variant == "tanh_gamma_abs_sum_star":
        pre = [math.tanh(v) / gamma for v in vec]
    else:
        raise ValueError(variant)
    if conf is not None:
        pre = [p * q for p, q in zip(pre, conf)]
    if variant == "abs_sum":
        return abs_sum_ref(pre)
    if variant == "tanh_c":
        return pre
    return abs_sum_star_ref(pre)


def metrics_ref(pred, gt):
    """Metric formulas on flat python lists of depths in meters."""
    n = len(gt)
    se = sum((g - p) ** 2 for g, p in zip(gt, pred)) / n
    ae = sum(abs(g - p) for g, p in zip(gt, pred)) / n
    rel = sum(abs(g - p) / g for g, p in zip(gt, pred)) / n
    ise = sum((1.0 / g - 1.0 / p) ** 2 for g, p in zip(gt, pred)) / n
    iae = sum(abs(1.0 / g - 1.0 / p) for g, p in zip(gt, pred)) / n
    deltas = {}
    for tau in (1.25, 1.25 ** 2, 1.25 ** 3):
        hits = sum(1 for g, p in zip(gt, pred) if p > 0 and max(p / g, g / p) < tau)
        deltas[tau] = 100.0 * hits / n
    return {
        "rmse": math.sqrt(se) * 1000.0,
        "mae": ae * 1000.0,
        "irmse": math.sqrt(ise) * 1000.0,
        "imae": iae * 1000.0,
        "rel": rel,
        "delta": deltas,
    }


def idw_ref(sites, values, query, power=1.0, k=8):
    """Inverse-distance blend of the k nearest sites at one query point."""
    pairs = sorted(
        (math.dist(query, s), v) for s, v in zip(sites, values)
    )[:k]
    if pairs[0][0] < 1e-9:
        return pairs[0][1]
    num = sum(v / d ** power for d, v in pairs)
    den = sum(1.0 / d ** power for d, v in pairs)
    return num / den


def gather_conf_ref(conf, offsets, i, j):
    """Neighbor confidences of pixel (i, j) via scalar bilinear lookups."""
    return [bilinear_ref(conf, i + dy, j + dx) for dy, dx in offsets[i][j]]


def normalized_weights_ref(variant, raw, offsets, conf=None, c=None, gamma=None):
    """Per-pixel normalized weights for a whole grid, scalar route.

    raw[i][j] is the K-vector of raw affinities; conf (optional) a dense
    list-of-lists confidence map sampled at each neighbor position.
    """
    h, w = len(raw), len(raw[0])
    out = []
    for i in range(h):
        row = []
        for j in range(w):
            nc = gather_conf_ref(conf, offsets, i, j) if conf is not None else None
            vec = raw[i][j]
            if variant == "abs_sum":
                pre = list(vec)
                if nc is not None:
                    pre = [p * q for p, q in zip(pre, nc)]
                if sum(abs(p) for p in pre) == 0.0:
                    # zero-sum pixels propagate identity (all weights zero)
                    row.append([0.0] * len(vec))
                    continue
            row.append(normalize_ref(variant, vec, c=c, gamma=gamma, conf=nc))
        out.append(row)
    return out
