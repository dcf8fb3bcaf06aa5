"""Independent reference implementations used by the tests.

Nothing here imports the code under test except for plain data containers.
"""
from __future__ import annotations

import itertools

import numpy as np


# -- dense 3D convolution by slicing -------------------------------------------------


def dense_conv3d(x, w, stride=1, pad=1):
    """x (X, Y, Z, Cin), w (K, K, K, Cin, Cout); out[o] = sum_t x[o*stride - pad + t] w[t]."""
    K = w.shape[0]
    X, Y, Z, _ = x.shape
    xp = np.pad(x, ((pad, pad), (pad, pad), (pad, pad), (0, 0)))
    out_shape = tuple((n + 2 * pad - K) // stride + 1 for n in (X, Y, Z))
    out = np.zeros(out_shape + (w.shape[4],), dtype=np.result_type(x, w))
    for a, b, c in itertools.product(range(K), repeat=3):
        sl = tuple(slice(t, t + stride * (n - 1) + 1, stride) for t, n in zip((a, b, c), out_shape))
        out += xp[sl] @ w[a, b, c]
    return out


def dense_conv3d_transpose(y, w, in_shape, stride=2, pad=1):
    """Adjoint of ``dense_conv3d`` with the same weights: returns (X, Y, Z, Cin) from (x', y', z', Cout)."""
    K = w.shape[0]
    X, Y, Z = in_shape
    outp = np.zeros((X + 2 * pad, Y + 2 * pad, Z + 2 * pad, w.shape[3]), dtype=np.result_type(y, w))
    out_shape = y.shape[:3]
    for a, b, c in itertools.product(range(K), repeat=3):
        sl = tuple(slice(t, t + stride * (n - 1) + 1, stride) for t, n in zip((a, b, c), out_shape))
        outp[sl] += y @ w[a, b, c].T
    return outp[pad : pad + X, pad : pad + Y, pad : pad + Z]


def random_sites(rng, shape, density=None, batch=1):
    X, Y, Z = shape
    rows = []
    for b in range(batch):
        d = density if density is not None else rng.uniform(0.05, 0.4)
        mask = rng.random(shape) < d
        if not mask.any():
            mask[tuple(rng.integers(0, s) for s in shape)] = True
        idx = np.argwhere(mask)
        rows.append(np.concatenate([np.full((len(idx), 1), b), idx], axis=1))
    return np.concatenate(rows).astype(np.int32)


def to_dense(coords, feats, shape):
    out = np.zeros(tuple(shape) + (feats.shape[1],), dtype=feats.dtype)
    out[coords[:, 1], coords[:, 2], coords[:, 3]] = feats
    return out


def active_after_strided(mask, K=3, stride=2, pad=1):
    """Output sites whose receptive field touches an active input."""
    ind = mask.astype(np.float64)[..., None]
    w = np.ones((K, K, K, 1, 1))
    return dense_conv3d(ind, w, stride, pad)[..., 0] > 0


def weights_to_dense(w_flat, K):
    """(K^3, Cin, Cout) in (tx, ty, tz) row-major order -> (K, K, K, Cin, Cout)."""
    return w_flat.reshape(K, K, K, *w_flat.shape[1:])


# -- finite differences ----------------------------------------------------------------


def central_difference(f, x, direction, h=1e-6):
    return (f(x + h * direction) - f(x - h * direction)) / (2 * h)


def check_gradient(f, x, grad, n_checks=12, h=1e-6, rng=None, rtol=1e-3, atol=1e-9):
    """Compare analytic ``grad`` against central differences along coordinate and random directions.

    Returns the worst relative error.
    """
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    x = np.asarray(x, dtype=np.float64)
    dirs = []
    flat_idx = rng.choice(x.size, size=min(n_checks, x.size), replace=False)
    for i in flat_idx:
        d = np.zeros(x.size)
        d[i] = 1.0
        dirs.append(d.reshape(x.shape))
    for _ in range(3):
        dirs.append(rng.standard_normal(x.shape))
    for d in dirs:
        num = central_difference(f, x, d, h)
        ana = float(np.sum(grad * d))
        err = abs(num - ana) / max(abs(num), abs(ana), atol / rtol)
        worst = max(worst, err if abs(num - ana) > atol else 0.0)
    return worst


# -- geometry -------------------------------------------------------------------------


def monte_carlo_bev_iou(a, b, n=1_000_000, rng=None):
    """Sample the union's bounding rectangle; count points inside each rotated rectangle."""
    rng = rng or np.random.default_rng(0)

    def corners(box):
        cx, cy, l, w, th = box[0], box[1], box[3], box[4], box[6]
        c, s = np.cos(th), np.sin(th)
        loc = np.array([[l, w], [l, -w], [-l, -w], [-l, w]]) / 2
        return loc @ np.array([[c, s], [-s, c]]) + [cx, cy]

    def inside(box, p):
        c, s = np.cos(box[6]), np.sin(box[6])
        d = p - box[:2]
        u = c * d[:, 0] + s * d[:, 1]
        v = -s * d[:, 0] + c * d[:, 1]
        return (np.abs(u) <= box[3] / 2) & (np.abs(v) <= box[4] / 2)

    pts = np.vstack([corners(a), corners(b)])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    p = lo + rng.random((n, 2)) * (hi - lo)
    ia, ib = inside(a, p), inside(b, p)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0


# -- detection matching -----------------------------------------------------------------


def brute_force_tp_counts(ious, scores, threshold):
    """For each score-ranked prefix of detections, the maximum number of one-to-one matches at IOU >= threshold.

    Exhaustive over all assignments; only for a handful of boxes.
    """
    order = np.argsort(-np.asarray(scores), kind="stable")
    n_gt = ious.shape[1]

    def best(dets, used):
        if not dets:
            return 0
        d, rest = dets[0], dets[1:]
        out = best(rest, used)  # leave d unmatched
        for g in range(n_gt):
            if g not in used and ious[d, g] >= threshold:
                out = max(out, 1 + best(rest, used | {g}))
        return out

    return [best(tuple(order[:k]), frozenset()) for k in range(1, len(order) + 1)]


def ap40_from_counts(tp_counts, n_gt):
    """40-point interpolated AP from cumulative TP counts of score-ranked detections."""
    tp = np.asarray(tp_counts, dtype=np.float64)
    n = np.arange(1, len(tp) + 1)
    rec = tp / n_gt
    prec = tp / n
    total = 0.0
    for k in range(1, 41):
        r = k / 40
        cand = prec[rec >= r - 1e-12]
        total += cand.max() if len(cand) else 0.0
    return 100 * total / 40
