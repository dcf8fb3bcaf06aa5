"""BEV projection and dense 2D (de)convolution, channels-last (B, H, W, C).

2D weights are (kh, kw, C_in, C_out). Convolutions are cross-correlations;
``deconv2d`` is the exact transpose of the stride-2 ``conv2d`` that maps the
deconvolution output size back to its input size.
"""
from __future__ import annotations

import numpy as np

from .sparse_ops import ShapeError, SparseTensor3D


def bev_project(x: SparseTensor3D, batch_size: int) -> np.ndarray:
    """Densify and fold z into channels: channel index = z * C + c."""
    X, Y, Z = x.spatial_shape
    C = x.n_channels
    out = np.zeros((batch_size, X, Y, Z * C), dtype=x.features.dtype)
    if len(x):
        b, i, j, k = x.coords.T
        view = out.reshape(batch_size, X, Y, Z, C)
        view[b, i, j, k] = x.features
    return out


def bev_project_backward(x: SparseTensor3D, grad_map: np.ndarray) -> np.ndarray:
    B, X, Y, ZC = grad_map.shape
    C = x.n_channels
    view = grad_map.reshape(B, X, Y, ZC // C, C)
    b, i, j, k = x.coords.T
    return view[b, i, j, k]


def conv2d_output_shape(h, w, k, stride, pad):
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def _taps(k, stride, ho, wo):
    for dy in range(k):
        for dx in range(k):
            yield dy, dx, slice(dy, dy + stride * (ho - 1) + 1, stride), slice(dx, dx + stride * (wo - 1) + 1, stride)


def conv2d_forward(x, weight, bias=None, stride: int = 1):
    k = weight.shape[0]
    if weight.shape[2] != x.shape[3] or weight.shape[0] != weight.shape[1]:
        raise ShapeError(f"weight {weight.shape} incompatible with input {x.shape}")
    pad = k // 2
    B, H, W, Cin = x.shape
    ho, wo = conv2d_output_shape(H, W, k, stride, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    out = np.zeros((B, ho, wo, weight.shape[3]), dtype=x.dtype)
    for dy, dx, sy, sx in _taps(k, stride, ho, wo):
        out += xp[:, sy, sx, :] @ weight[dy, dx]
    if bias is not None:
        out += bias
    return out


def conv2d_backward(x, weight, grad_out, stride: int = 1, need_input_grad=True):
    """Returns (grad_x, grad_weight, grad_bias)."""
    k = weight.shape[0]
    pad = k // 2
    B, H, W, Cin = x.shape
    ho, wo = grad_out.shape[1:3]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    gflat = grad_out.reshape(-1, grad_out.shape[3])
    grad_w = np.zeros_like(weight)
    gxp = np.zeros_like(xp) if need_input_grad else None
    for dy, dx, sy, sx in _taps(k, stride, ho, wo):
        grad_w[dy, dx] = xp[:, sy, sx, :].reshape(-1, Cin).T @ gflat
        if need_input_grad:
            gxp[:, sy, sx, :] += grad_out @ weight[dy, dx].T
    grad_x = None
    if need_input_grad:
        grad_x = gxp[:, pad : pad + H, pad : pad + W, :] if pad else gxp
    return grad_x, grad_w, gflat.sum(axis=0)


def deconv2d_forward(x, weight, bias=None, stride: int = 2, out_hw=None):
    """Transposed convolution; output size defaults to (stride * H, stride * W)."""
    k = weight.shape[0]
    if weight.shape[2] != x.shape[3]:
        raise ShapeError(f"weight {weight.shape} incompatible with input {x.shape}")
    pad = k // 2
    B, h, w, Cin = x.shape
    H, W = out_hw or (stride * h, stride * w)
    if conv2d_output_shape(H, W, k, stride, pad) != (h, w):
        raise ShapeError(f"output size {(H, W)} does not invert to {(h, w)}")
    outp = np.zeros((B, H + 2 * pad, W + 2 * pad, weight.shape[3]), dtype=x.dtype)
    for dy, dx, sy, sx in _taps(k, stride, h, w):
        outp[:, sy, sx, :] += x @ weight[dy, dx]
    out = outp[:, pad : pad + H, pad : pad + W, :]
    if bias is not None:
        out = out + bias
    return np.ascontiguousarray(out)


def deconv2d_backward(x, weight, grad_out, stride: int = 2, need_input_grad=True):
    k = weight.shape[0]
    pad = k // 2
    B, h, w, Cin = x.shape
    gp = np.pad(grad_out, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else grad_out
    xflat = x.reshape(-1, Cin)
    grad_w = np.zeros_like(weight)
    grad_x = np.zeros_like(x) if need_input_grad else None
    for dy, dx, sy, sx in _taps(k, stride, h, w):
        g = gp[:, sy, sx, :]
        grad_w[dy, dx] = xflat.T @ g.reshape(-1, g.shape[3])
        if need_input_grad:
            grad_x += g @ weight[dy, dx].T
    return grad_x, grad_w, grad_out.reshape(-1, grad_out.shape[3]).sum(axis=0)
