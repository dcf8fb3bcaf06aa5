"""Sparse 3D convolution engine on (batch, x, y, z) voxel sites.

Convolutions are gather / matmul / scatter over a :class:`Rulebook` that lists,
per kernel offset, the (input site, output site) pairs it connects. Kernel
offsets are enumerated as ``t = (tx * K + ty) * K + tz`` and follow the
cross-correlation convention: input position = output * stride - pad + t.

Weights have shape (K**3, C_in, C_out).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SparseTensor3D:
    coords: np.ndarray  # (N, 4) int32: batch, x, y, z
    features: np.ndarray  # (N, C)
    spatial_shape: tuple[int, int, int]

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.int32).reshape(-1, 4)
        f = np.asarray(self.features)
        if f.ndim != 2 or len(f) != len(c):
            raise ShapeError(f"features {f.shape} do not match {len(c)} coords")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "spatial_shape", tuple(int(s) for s in self.spatial_shape))

    def __len__(self):
        return len(self.coords)

    @property
    def n_channels(self) -> int:
        return self.features.shape[1]

    def replace_features(self, features) -> "SparseTensor3D":
        return SparseTensor3D(self.coords, features, self.spatial_shape)

    def validate(self) -> None:
        if len(self.coords):
            if np.any(self.coords[:, 1:] < 0) or np.any(self.coords[:, 1:] >= np.array(self.spatial_shape)):
                raise ShapeError("coords outside spatial_shape")
            keys = pack_keys(self.coords, self.spatial_shape)
            if len(np.unique(keys)) != len(keys):
                raise ShapeError("duplicate coords")

    def dense(self, batch_size: int | None = None) -> np.ndarray:
        """(B, X, Y, Z, C) dense array with zeros at inactive sites."""
        b = int(self.coords[:, 0].max()) + 1 if batch_size is None and len(self) else (batch_size or 1)
        out = np.zeros((b,) + self.spatial_shape + (self.n_channels,), dtype=self.features.dtype)
        c = self.coords
        out[c[:, 0], c[:, 1], c[:, 2], c[:, 3]] = self.features
        return out


def pack_keys(coords, spatial_shape) -> np.ndarray:
    """(batch, x, y, z) -> int64 key, lexicographic in the same order."""
    c = np.asarray(coords, dtype=np.int64)
    X, Y, Z = spatial_shape
    return ((c[:, 0] * X + c[:, 1]) * Y + c[:, 2]) * Z + c[:, 3]


class CoordIndex:
    """Key -> row lookup for a coordinate set (sorted keys + binary search)."""

    def __init__(self, coords, spatial_shape):
        self.spatial_shape = tuple(spatial_shape)
        keys = pack_keys(coords, spatial_shape)
        self._order = np.argsort(keys, kind="stable")
        self._sorted = keys[self._order]

    def lookup(self, coords) -> np.ndarray:
        """Row index of each query coord, -1 if absent or out of the grid."""
        q = np.asarray(coords, dtype=np.int64)
        out = np.full(len(q), -1, dtype=np.int64)
        if len(q) == 0 or len(self._sorted) == 0:
            return out
        inside = np.all((q[:, 1:] >= 0) & (q[:, 1:] < np.array(self.spatial_shape)), axis=1)
        keys = pack_keys(q[inside], self.spatial_shape)
        pos = np.searchsorted(self._sorted, keys)
        pos_c = np.minimum(pos, len(self._sorted) - 1)
        hit = self._sorted[pos_c] == keys
        rows = np.where(hit, self._order[pos_c], -1)
        out[inside] = rows
        return out


def kernel_offsets(kernel_size: int) -> np.ndarray:
    """(K**3, 3) kernel taps t in [0, K) per axis, in weight order."""
    r = range(kernel_size)
    return np.array(list(itertools.product(r, r, r)), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Rulebook:
    pairs: tuple[tuple[np.ndarray, np.ndarray], ...]  # per offset: (in_idx, out_idx)
    in_coords: np.ndarray
    out_coords: np.ndarray
    in_shape: tuple[int, int, int]
    out_shape: tuple[int, int, int]
    kernel_size: int
    stride: int
    mode: str  # "subm" or "strided"

    @property
    def n_in(self) -> int:
        return len(self.in_coords)

    @property
    def n_out(self) -> int:
        return len(self.out_coords)

    def n_pairs(self) -> int:
        return sum(len(i) for i, _ in self.pairs)

    def offset_pairs(self):
        """Nonempty (offset index, in_idx, out_idx) triples."""
        return [(k, i, o) for k, (i, o) in enumerate(self.pairs) if len(i)]


def build_rulebook_submanifold(coords, spatial_shape, kernel_size: int = 3) -> Rulebook:
    coords = np.asarray(coords, dtype=np.int32).reshape(-1, 4)
    if kernel_size not in (1, 3):
        raise ConfigurationError("kernel_size must be 1 or 3")
    index = CoordIndex(coords, spatial_shape)
    pad = kernel_size // 2
    out_idx_all = np.arange(len(coords), dtype=np.int64)
    pairs = []
    c64 = coords.astype(np.int64)
    for t in kernel_offsets(kernel_size):
        d = t - pad
        if not d.any():
            pairs.append((out_idx_all.copy(), out_idx_all.copy()))
            continue
        q = c64.copy()
        q[:, 1:] += d
        rows = index.lookup(q)
        hit = rows >= 0
        pairs.append((rows[hit], out_idx_all[hit]))
    return Rulebook(tuple(pairs), coords, coords, tuple(spatial_shape), tuple(spatial_shape), kernel_size, 1, "subm")


def strided_output_shape(shape, kernel_size=3, stride=2, padding=1):
    return tuple((s + 2 * padding - kernel_size) // stride + 1 for s in shape)


def build_rulebook_strided(coords, spatial_shape, kernel_size: int = 3, stride: int = 2, padding: int = 1) -> Rulebook:
    """Ordinary (non-submanifold) sparse convolution: every reachable output is active."""
    coords = np.asarray(coords, dtype=np.int32).reshape(-1, 4)
    out_shape = strided_output_shape(spatial_shape, kernel_size, stride, padding)
    out_lim = np.array(out_shape)
    c64 = coords.astype(np.int64)
    cand = []
    per_offset = []
    for t in kernel_offsets(kernel_size):
        num = c64[:, 1:] + padding - t
        ok = np.all(num % stride == 0, axis=1)
        o = num // stride
        ok &= np.all((o >= 0) & (o < out_lim), axis=1)
        rows = np.nonzero(ok)[0]
        oc = np.concatenate([c64[rows, :1], o[rows]], axis=1)
        per_offset.append((rows, oc))
        cand.append(oc)
    allc = np.concatenate(cand) if cand else np.zeros((0, 4), np.int64)
    keys = pack_keys(allc, out_shape)
    ukeys = np.unique(keys)
    X, Y, Z = out_shape
    out_coords = np.stack(
        [ukeys // (X * Y * Z), (ukeys // (Y * Z)) % X, (ukeys // Z) % Y, ukeys % Z], axis=1
    ).astype(np.int32)
    pairs = []
    for rows, oc in per_offset:
        oi = np.searchsorted(ukeys, pack_keys(oc, out_shape))
        order = np.argsort(oi, kind="stable")
        pairs.append((rows[order].astype(np.int64), oi[order].astype(np.int64)))
    return Rulebook(tuple(pairs), coords, out_coords, tuple(spatial_shape), out_shape, kernel_size, stride, "strided")


def _check_weight(features, weight, c_in_axis=1):
    if weight.ndim != 3 or weight.shape[c_in_axis] != features.shape[1]:
        raise ShapeError(f"weight {weight.shape} incompatible with {features.shape[1]} input channels")


def conv_features(features, weight, bias, rb: Rulebook) -> np.ndarray:
    """out[j] = bias + sum_k sum_{(i->j) in rb[k]} x[i] @ W[k]."""
    _check_weight(features, weight)
    if len(features) != rb.n_in:
        raise ShapeError(f"{len(features)} input rows, rulebook expects {rb.n_in}")
    if weight.shape[0] != len(rb.pairs):
        raise ShapeError(f"weight has {weight.shape[0]} taps, rulebook {len(rb.pairs)}")
    out = np.zeros((rb.n_out, weight.shape[2]), dtype=features.dtype)
    # each output appears at most once per offset, so fancy-index += is exact
    for k, i, o in rb.offset_pairs():
        out[o] += features[i] @ weight[k]
    if bias is not None:
        out += bias
    return out


def conv_features_backward(features, weight, rb: Rulebook, grad_out, need_input_grad=True):
    if grad_out.shape != (rb.n_out, weight.shape[2]):
        raise ShapeError(f"grad_out {grad_out.shape} expected {(rb.n_out, weight.shape[2])}")
    grad_w = np.zeros_like(weight)
    grad_x = np.zeros_like(features) if need_input_grad else None
    for k, i, o in rb.offset_pairs():
        g = grad_out[o]
        grad_w[k] = features[i].T @ g
        if need_input_grad:
            grad_x[i] += g @ weight[k].T
    return grad_x, grad_w, grad_out.sum(axis=0)


def sparse_conv_forward(x: SparseTensor3D, weight, bias, rb: Rulebook) -> SparseTensor3D:
    return SparseTensor3D(rb.out_coords, conv_features(x.features, weight, bias, rb), rb.out_shape)


def sparse_conv_backward(x: SparseTensor3D, weight, rb: Rulebook, grad_out):
    """Returns (grad_x_features, grad_weight, grad_bias)."""
    g = grad_out.features if isinstance(grad_out, SparseTensor3D) else grad_out
    return conv_features_backward(x.features, weight, rb, np.asarray(g))


def inverse_features(features, weight, bias, rb: Rulebook) -> np.ndarray:
    """Transposed application of a strided rulebook: out[i] += x[j] @ W[k]."""
    if rb.mode != "strided":
        raise ConfigurationError("inverse convolution needs the rulebook of the paired strided layer")
    _check_weight(features, weight)
    if len(features) != rb.n_out:
        raise ShapeError(f"{len(features)} coarse rows, rulebook has {rb.n_out}")
    out = np.zeros((rb.n_in, weight.shape[2]), dtype=features.dtype)
    for k, i, o in rb.offset_pairs():
        out[i] += features[o] @ weight[k]
    if bias is not None:
        out += bias
    return out


def inverse_features_backward(features, weight, rb: Rulebook, grad_out, need_input_grad=True):
    grad_w = np.zeros_like(weight)
    grad_x = np.zeros_like(features) if need_input_grad else None
    for k, i, o in rb.offset_pairs():
        g = grad_out[i]
        grad_w[k] = features[o].T @ g
        if need_input_grad:
            grad_x[o] += g @ weight[k].T
    return grad_x, grad_w, grad_out.sum(axis=0)


def inverse_conv_forward(x: SparseTensor3D, weight, bias, rb: Rulebook | None) -> SparseTensor3D:
    if rb is None:
        raise ConfigurationError("missing paired strided rulebook")
    return SparseTensor3D(rb.in_coords, inverse_features(x.features, weight, bias, rb), rb.in_shape)


def inverse_conv_backward(x: SparseTensor3D, weight, rb: Rulebook, grad_out):
    g = grad_out.features if isinstance(grad_out, SparseTensor3D) else grad_out
    return inverse_features_backward(x.features, weight, rb, np.asarray(g))


def concat_features(a: SparseTensor3D, b: SparseTensor3D) -> SparseTensor3D:
    """Channel concatenation of ``b`` onto ``a``, aligned by coordinate."""
    if a.spatial_shape != b.spatial_shape or len(a) != len(b):
        raise AlignmentError("concat operands have different active sets")
    if np.array_equal(a.coords, b.coords):
        fb = b.features
    else:
        rows = CoordIndex(b.coords, b.spatial_shape).lookup(a.coords)
        if np.any(rows < 0):
            raise AlignmentError("concat operands have different active sets")
        fb = b.features[rows]
    return SparseTensor3D(a.coords, np.concatenate([a.features, fb.astype(a.features.dtype)], axis=1), a.spatial_shape)


# --- normalization + activation -------------------------------------------------

BN_EPS = 1e-3
BN_MOMENTUM = 0.01


@dataclass
class NormCache:
    mode: str
    mask: np.ndarray
    xhat: np.ndarray | None = None
    inv_std: np.ndarray | None = None
    gamma: np.ndarray | None = None
    training: bool = True


def norm_act_forward(x, gamma=None, beta=None, running=None, mode: str = "bn_relu", training: bool = True):
    """Batchnorm over active sites per channel followed by ReLU.

    ``running`` is a dict with "mean" and "var" updated in place during
    training. ``mode="relu"`` skips normalization.
    Returns (y, cache).
    """
    if mode == "relu":
        mask = x > 0
        return np.where(mask, x, 0).astype(x.dtype), NormCache("relu", mask)
    if mode != "bn_relu":
        raise ConfigurationError(f"unknown norm mode {mode!r}")
    if training:
        if len(x) == 0:
            raise ShapeError("batch normalization over zero active sites")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        if running is not None:
            running["mean"] *= 1 - BN_MOMENTUM
            running["mean"] += BN_MOMENTUM * mean
            unbiased = var * len(x) / max(len(x) - 1, 1)
            running["var"] *= 1 - BN_MOMENTUM
            running["var"] += BN_MOMENTUM * unbiased
    else:
        mean, var = running["mean"], running["var"]
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    y = gamma * xhat + beta
    mask = y > 0
    y = np.where(mask, y, 0).astype(x.dtype)
    return y, NormCache("bn_relu", mask, xhat, inv_std.astype(x.dtype), gamma, training)


def norm_act_backward(cache: NormCache, grad_out):
    """Returns (grad_x, grad_gamma, grad_beta); gamma/beta grads are None in relu mode."""
    g = np.where(cache.mask, grad_out, 0)
    if cache.mode == "relu":
        return g, None, None
    grad_beta = g.sum(axis=0)
    grad_gamma = (g * cache.xhat).sum(axis=0)
    gx = g * cache.gamma
    if not cache.training:
        return gx * cache.inv_std, grad_gamma, grad_beta
    n = len(g)
    grad_x = cache.inv_std / n * (n * gx - gx.sum(axis=0) - cache.xhat * (gx * cache.xhat).sum(axis=0))
    return grad_x, grad_gamma, grad_beta
