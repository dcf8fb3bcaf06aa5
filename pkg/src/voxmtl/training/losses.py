"""Task losses and the fixed / uncertainty-weighted multi-task aggregation.

Probability-space functions (``focal_loss``, ``ce_loss``) follow the textbook
definitions with clamping; the ``*_from_logits`` variants return
(loss, d loss / d logit) and are what training uses.
"""
from __future__ import annotations

import numpy as np

TASKS = ("OD", "FG", "IP", "DA", "GC", "GH")
EPS = 1e-7


def _masked(values, mask):
    values = np.asarray(values, dtype=np.float64)
    if mask is None:
        return values.reshape(-1), None
    m = np.broadcast_to(np.asarray(mask, dtype=bool), values.shape)
    return values[m], m


def focal_loss(p, y, alpha: float = 0.25, gamma: float = 2.0, mask=None, normalizer=None) -> float:
    """-alpha_t (1 - p_t)^gamma ln p_t averaged over contributing sites."""
    p = np.clip(np.asarray(p, dtype=np.float64), EPS, 1 - EPS)
    y = np.asarray(y)
    pv, m = _masked(p, mask)
    yv = y[m] if m is not None else y.reshape(-1)
    if pv.size == 0:
        return 0.0
    pt = np.where(yv == 1, pv, 1 - pv)
    at = np.where(yv == 1, alpha, 1 - alpha)
    total = float(np.sum(-at * (1 - pt) ** gamma * np.log(pt)))
    return total / (normalizer if normalizer is not None else pv.size)


def ce_loss(p, y, mask=None) -> float:
    """Binary cross entropy -[y ln p + (1 - y) ln(1 - p)]; ``y`` may be soft."""
    p = np.clip(np.asarray(p, dtype=np.float64), EPS, 1 - EPS)
    pv, m = _masked(p, mask)
    yv = np.asarray(y, dtype=np.float64)
    yv = yv[m] if m is not None else yv.reshape(-1)
    if pv.size == 0:
        return 0.0
    return float(np.mean(-(yv * np.log(pv) + (1 - yv) * np.log(1 - pv))))


def l1_loss(v, t, mask=None) -> float:
    vv, m = _masked(v, mask)
    tv = np.asarray(t, dtype=np.float64)
    tv = tv[m] if m is not None else tv.reshape(-1)
    if vv.size == 0:
        return 0.0
    return float(np.mean(np.abs(vv - tv)))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return np.exp(_log_sigmoid(x))


def focal_loss_from_logits(logits, y, alpha=0.25, gamma=2.0, mask=None, normalizer=None):
    """Focal loss on logits; ``mask`` excludes sites, ``normalizer`` overrides the site count."""
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y)
    m = np.ones(x.shape, bool) if mask is None else np.broadcast_to(np.asarray(mask, bool), x.shape)
    n = normalizer if normalizer is not None else int(m.sum())
    grad = np.zeros_like(x)
    if not m.any() or n == 0:
        return 0.0, grad
    lp = _log_sigmoid(x)  # ln p
    lq = _log_sigmoid(-x)  # ln(1 - p)
    p = np.exp(lp)
    q = np.exp(lq)
    pos = y == 1
    loss_pos = -alpha * q**gamma * lp
    loss_neg = -(1 - alpha) * p**gamma * lq
    g_pos = alpha * q**gamma * (gamma * p * lp - q)
    g_neg = -(1 - alpha) * p**gamma * (gamma * q * lq - p)
    loss = np.where(pos, loss_pos, loss_neg)
    grad = np.where(m, np.where(pos, g_pos, g_neg), 0.0) / n
    return float(loss[m].sum() / n), grad


def binary_entropy(y) -> np.ndarray:
    """-[y ln y + (1 - y) ln(1 - y)] elementwise, with 0 ln 0 = 0."""
    y = np.asarray(y, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(y > 0, y * np.log(y), 0.0) + np.where(y < 1, (1 - y) * np.log1p(-y), 0.0))
    return h


def ce_loss_from_logits(logits, y, mask=None):
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = np.ones(x.shape, bool) if mask is None else np.broadcast_to(np.asarray(mask, bool), x.shape)
    n = int(m.sum())
    if n == 0:
        return 0.0, np.zeros_like(x)
    loss = -(y * _log_sigmoid(x) + (1 - y) * _log_sigmoid(-x))
    grad = np.where(m, _sigmoid(x) - y, 0.0) / n
    return float(loss[m].sum() / n), grad


def l1_loss_with_grad(v, t, mask=None):
    v = np.asarray(v, dtype=np.float64)
    d = v - np.asarray(t, dtype=np.float64)
    m = np.ones(v.shape, bool) if mask is None else np.broadcast_to(np.asarray(mask, bool), v.shape)
    n = int(m.sum())
    if n == 0:
        return 0.0, np.zeros_like(v)
    return float(np.abs(d[m]).sum() / n), np.where(m, np.sign(d), 0.0) / n


def mtl_loss_fixed(task_losses: dict, weights: dict):
    """Weighted sum; returns (total, d total / d L_i)."""
    missing = set(TASKS) - set(task_losses)
    if missing:
        raise ValueError(f"missing task losses: {sorted(missing)}")
    for t in TASKS:
        if weights.get(t, 1.0) < 0:
            raise ValueError(f"negative loss weight for {t}")
    coeff = {t: float(weights.get(t, 1.0)) for t in TASKS}
    return float(sum(coeff[t] * task_losses[t] for t in TASKS)), coeff


def mtl_loss_adaptive(task_losses: dict, log_var, grid_weights: dict | None = None):
    """sum_i w_i L_i / (2 sigma_i^2) + 0.5 ln sigma_i^2 with log-variance parameters.

    Returns (total, d total / d L_i, d total / d log_var).
    """
    s = np.asarray(log_var, dtype=np.float64)
    w = {t: float((grid_weights or {}).get(t, 1.0)) for t in TASKS}
    prec = np.exp(-s)
    total = 0.0
    coeff = {}
    g_s = np.zeros_like(s)
    for i, t in enumerate(TASKS):
        wl = w[t] * task_losses[t]
        total += 0.5 * prec[i] * wl + 0.5 * s[i]
        coeff[t] = 0.5 * prec[i] * w[t]
        g_s[i] = -0.5 * prec[i] * wl + 0.5
    return float(total), coeff, g_s
