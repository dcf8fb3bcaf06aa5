import numpy as np
import pytest

from voxmtl import dense_ops as D
from voxmtl.sparse_ops import ShapeError, SparseTensor3D

from oracles import check_gradient


def naive_conv2d(x, w, stride):
    k = w.shape[0]
    pad = k // 2
    B, H, W, _ = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho, wo = (H + 2 * pad - k) // stride + 1, (W + 2 * pad - k) // stride + 1
    out = np.zeros((B, ho, wo, w.shape[3]))
    for b in range(B):
        for i in range(ho):
            for j in range(wo):
                patch = xp[b, i * stride : i * stride + k, j * stride : j * stride + k]
                out[b, i, j] = np.einsum("hwc,hwcd->d", patch, w)
    return out


@pytest.mark.parametrize("stride,hw", [(1, (5, 7)), (2, (6, 7)), (2, (5, 4))])
def test_conv2d_matches_naive_loop(stride, hw):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2,) + hw + (3,))
    w = rng.standard_normal((3, 3, 3, 4))
    b = rng.standard_normal(4)
    np.testing.assert_allclose(D.conv2d_forward(x, w, b, stride), naive_conv2d(x, w, stride) + b, atol=1e-12)


def test_conv2d_matches_torch():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 9, 8, 3))
    w = rng.standard_normal((3, 3, 3, 5))
    ref = torch.nn.functional.conv2d(
        torch.from_numpy(x).permute(0, 3, 1, 2), torch.from_numpy(w).permute(3, 2, 0, 1), stride=2, padding=1
    ).permute(0, 2, 3, 1).numpy()
    np.testing.assert_allclose(D.conv2d_forward(x, w, None, 2), ref, atol=1e-10)


@pytest.mark.parametrize("hw", [(8, 10), (7, 5)])
def test_deconv_is_adjoint_of_strided_conv(hw):
    rng = np.random.default_rng(2)
    u = rng.standard_normal((1,) + hw + (3,))
    w_conv = rng.standard_normal((3, 3, 3, 4))
    y = D.conv2d_forward(u, w_conv, None, 2)
    v = rng.standard_normal(y.shape)
    w_de = np.transpose(w_conv, (0, 1, 3, 2))
    back = D.deconv2d_forward(v, w_de, None, 2, out_hw=hw)
    assert back.shape == u.shape
    assert np.sum(y * v) == pytest.approx(np.sum(u * back), rel=1e-12)


def test_deconv_rejects_non_inverting_size():
    with pytest.raises(ShapeError):
        D.deconv2d_forward(np.zeros((1, 3, 3, 1)), np.zeros((3, 3, 1, 1)), None, 2, out_hw=(9, 9))


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_gradients(stride):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 5, 6, 2))
    w = rng.standard_normal((3, 3, 2, 3))
    b = rng.standard_normal(3)
    r = rng.standard_normal(D.conv2d_forward(x, w, b, stride).shape)
    gx, gw, gb = D.conv2d_backward(x, w, r, stride)
    assert check_gradient(lambda v: np.sum(D.conv2d_forward(v, w, b, stride) * r), x, gx) <= 1e-3
    assert check_gradient(lambda v: np.sum(D.conv2d_forward(x, v, b, stride) * r), w, gw) <= 1e-3
    assert check_gradient(lambda v: np.sum(D.conv2d_forward(x, w, v, stride) * r), b, gb) <= 1e-3


def test_deconv2d_gradients():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 4, 2))
    w = rng.standard_normal((3, 3, 2, 3))
    b = rng.standard_normal(3)
    out_hw = (5, 8)
    r = rng.standard_normal(D.deconv2d_forward(x, w, b, 2, out_hw).shape)
    gx, gw, gb = D.deconv2d_backward(x, w, r, 2)
    assert check_gradient(lambda v: np.sum(D.deconv2d_forward(v, w, b, 2, out_hw) * r), x, gx) <= 1e-3
    assert check_gradient(lambda v: np.sum(D.deconv2d_forward(x, v, b, 2, out_hw) * r), w, gw) <= 1e-3
    assert check_gradient(lambda v: np.sum(D.deconv2d_forward(x, w, v, 2, out_hw) * r), b, gb) <= 1e-3


def test_bev_projection_stacks_height_into_channels():
    coords = np.array([[0, 1, 2, 0], [0, 1, 2, 2], [1, 0, 0, 1]], np.int32)
    feats = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    x = SparseTensor3D(coords, feats, (2, 3, 3))
    bev = D.bev_project(x, 2)
    assert bev.shape == (2, 2, 3, 6)
    # channel index = z * C + c
    assert bev[0, 1, 2].tolist() == [1, 2, 0, 0, 3, 4]
    assert bev[1, 0, 0].tolist() == [0, 0, 5, 6, 0, 0]
    g = np.random.default_rng(0).standard_normal(bev.shape)
    back = D.bev_project_backward(x, g)
    assert np.sum(bev * g) == pytest.approx(np.sum(feats * back))
