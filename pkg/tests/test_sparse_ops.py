import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxmtl import sparse_ops as S

from oracles import (
    active_after_strided,
    random_sites,
    to_dense,
    check_gradient,
    dense_conv3d,
    dense_conv3d_transpose,
    weights_to_dense,
)


def test_coord_index_lookup_misses_and_out_of_grid():
    coords = np.array([[0, 1, 2, 3], [0, 0, 0, 0], [1, 1, 2, 3]], dtype=np.int32)
    idx = S.CoordIndex(coords, (4, 4, 4))
    q = np.array([[1, 1, 2, 3], [0, 0, 0, 0], [0, 3, 3, 3], [0, -1, 0, 0], [0, 4, 0, 0]])
    assert idx.lookup(q).tolist() == [2, 1, -1, -1, -1]


def test_submanifold_identity_kernel_returns_input():
    rng = np.random.default_rng(1)
    coords = random_sites(rng, (6, 5, 4))
    x = rng.standard_normal((len(coords), 3))
    w = np.zeros((27, 3, 3))
    w[13] = np.eye(3)  # center tap
    rb = S.build_rulebook_submanifold(coords, (6, 5, 4))
    np.testing.assert_allclose(S.conv_features(x, w, None, rb), x)


def test_submanifold_keeps_active_set_and_counts_neighbors():
    coords = np.array([[0, 2, 2, 2], [0, 2, 2, 3], [0, 4, 4, 4]], dtype=np.int32)
    rb = S.build_rulebook_submanifold(coords, (6, 6, 6))
    assert np.array_equal(rb.out_coords, coords)
    # each site sees itself; the first two see each other
    assert rb.n_pairs() == 5


def test_strided_output_shape_halves_with_ceiling():
    assert S.strided_output_shape((704, 800, 55)) == (352, 400, 28)
    assert S.strided_output_shape((7, 1, 2)) == (4, 1, 1)


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-5), (np.float64, 1e-10)])
def test_sparse_convs_match_dense_oracle(dtype, tol):
    rng = np.random.default_rng(42)
    worst = 0.0
    for trial in range(100):
        shape = tuple(int(v) for v in rng.integers(1, 17, size=3))
        cin, cout = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        coords = random_sites(rng, shape)
        x = rng.standard_normal((len(coords), cin)).astype(dtype)
        xd = to_dense(coords, x.astype(np.float64), shape)

        # submanifold: dense conv read back at the active sites
        w = rng.standard_normal((27, cin, cout)).astype(dtype)
        rb = S.build_rulebook_submanifold(coords, shape)
        got = S.conv_features(x, w, None, rb)
        ref = dense_conv3d(xd, weights_to_dense(w.astype(np.float64), 3), 1, 1)[coords[:, 1], coords[:, 2], coords[:, 3]]
        worst = max(worst, np.abs(got - ref).max() / max(1.0, np.abs(ref).max()))

        # strided: dense stride-2 conv, active set = reachable outputs
        rbs = S.build_rulebook_strided(coords, shape)
        mask = np.zeros(shape, bool)
        mask[coords[:, 1], coords[:, 2], coords[:, 3]] = True
        expected_active = np.argwhere(active_after_strided(mask))
        assert np.array_equal(rbs.out_coords[:, 1:], expected_active)
        got_s = S.conv_features(x, w, None, rbs)
        ref_s_full = dense_conv3d(xd, weights_to_dense(w.astype(np.float64), 3), 2, 1)
        oc = rbs.out_coords
        ref_s = ref_s_full[oc[:, 1], oc[:, 2], oc[:, 3]]
        worst = max(worst, np.abs(got_s - ref_s).max() / max(1.0, np.abs(ref_s).max()))

        # inverse: transposed dense conv restoring the strided layer's input set
        wi = rng.standard_normal((27, cout, cin)).astype(dtype)
        y = rng.standard_normal((len(oc), cout)).astype(dtype)
        got_i = S.inverse_features(y, wi, None, rbs)
        yd = to_dense(oc, y.astype(np.float64), rbs.out_shape)
        # inverse uses out[i] += y[o] @ W[k]; as an adjoint of a conv with weights W^T
        w_adj = np.transpose(weights_to_dense(wi.astype(np.float64), 3), (0, 1, 2, 4, 3))
        ref_i = dense_conv3d_transpose(yd, w_adj, shape)[coords[:, 1], coords[:, 2], coords[:, 3]]
        worst = max(worst, np.abs(got_i - ref_i).max() / max(1.0, np.abs(ref_i).max()))
        assert got.dtype == dtype and got_s.dtype == dtype and got_i.dtype == dtype
    assert worst <= tol


def test_dense_oracle_agrees_with_torch():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5, 6, 7, 2))
    w = rng.standard_normal((3, 3, 3, 2, 4))
    for stride in (1, 2):
        ours = dense_conv3d(x, w, stride, 1)
        xt = torch.from_numpy(x).permute(3, 0, 1, 2)[None]
        wt = torch.from_numpy(w).permute(4, 3, 0, 1, 2)
        ref = torch.nn.functional.conv3d(xt, wt, stride=stride, padding=1)[0].permute(1, 2, 3, 0).numpy()
        np.testing.assert_allclose(ours, ref, atol=1e-10)


def test_inverse_conv_restores_strided_input_set():
    rng = np.random.default_rng(5)
    coords = random_sites(rng, (9, 8, 7), batch=2)
    rbs = S.build_rulebook_strided(coords, (9, 8, 7))
    y = S.SparseTensor3D(rbs.out_coords, rng.standard_normal((rbs.n_out, 3)), rbs.out_shape)
    out = S.inverse_conv_forward(y, rng.standard_normal((27, 3, 2)), np.zeros(2), rbs)
    assert np.array_equal(out.coords, coords)
    assert out.spatial_shape == (9, 8, 7)


def test_inverse_conv_without_rulebook_is_a_configuration_error():
    y = S.SparseTensor3D(np.zeros((1, 4), np.int32), np.ones((1, 2)), (2, 2, 2))
    with pytest.raises(S.ConfigurationError):
        S.inverse_conv_forward(y, np.ones((27, 2, 2)), None, None)


def test_weight_channel_mismatch_is_a_shape_error():
    coords = np.zeros((1, 4), np.int32)
    rb = S.build_rulebook_submanifold(coords, (2, 2, 2))
    with pytest.raises(S.ShapeError):
        S.conv_features(np.ones((1, 3)), np.ones((27, 2, 2)), None, rb)


def test_batches_do_not_interact():
    rng = np.random.default_rng(11)
    shape = (6, 6, 6)
    coords = random_sites(rng, shape, density=0.3, batch=2)
    x = rng.standard_normal((len(coords), 2))
    w = rng.standard_normal((27, 2, 2))
    both = S.conv_features(x, w, None, S.build_rulebook_submanifold(coords, shape))
    for b in (0, 1):
        sel = coords[:, 0] == b
        c = coords[sel].copy()
        c[:, 0] = 0
        alone = S.conv_features(x[sel], w, None, S.build_rulebook_submanifold(c, shape))
        np.testing.assert_allclose(both[sel], alone, atol=1e-12)


def test_concat_requires_identical_coordinates():
    c = np.array([[0, 0, 0, 0], [0, 1, 0, 0]], np.int32)
    a = S.SparseTensor3D(c, np.ones((2, 1)), (2, 2, 2))
    b = S.SparseTensor3D(c[::-1].copy(), np.arange(2.0)[:, None], (2, 2, 2))
    out = S.concat_features(a, b)
    assert out.features.tolist() == [[1, 1], [1, 0]]
    with pytest.raises(S.AlignmentError):
        S.concat_features(a, S.SparseTensor3D(c[:1], np.ones((1, 1)), (2, 2, 2)))


def test_sparse_tensor_validate_rejects_duplicates_and_out_of_grid():
    with pytest.raises(S.ShapeError):
        S.SparseTensor3D(np.zeros((2, 4), np.int32), np.ones((2, 1)), (2, 2, 2)).validate()
    with pytest.raises(S.ShapeError):
        S.SparseTensor3D(np.array([[0, 2, 0, 0]], np.int32), np.ones((1, 1)), (2, 2, 2)).validate()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_submanifold_rulebook_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    coords = random_sites(rng, (5, 5, 5))
    rb = S.build_rulebook_submanifold(coords, (5, 5, 5))
    # pair (i, j) at tap t implies (j, i) at the mirrored tap 26 - t
    for t, (i, o) in enumerate(rb.pairs):
        mi, mo = rb.pairs[26 - t]
        assert set(zip(i.tolist(), o.tolist())) == set(zip(mo.tolist(), mi.tolist()))


# -- gradients -------------------------------------------------------------------------


def _fd_setup(seed=0, shape=(5, 4, 6), cin=2, cout=3):
    rng = np.random.default_rng(seed)
    coords = random_sites(rng, shape, density=0.35)
    return rng, coords, rng.standard_normal((len(coords), cin)), rng.standard_normal((27, cin, cout))


@pytest.mark.parametrize("kind", ["subm", "strided", "inverse"])
def test_sparse_conv_gradients_match_finite_differences(kind):
    rng, coords, x, w = _fd_setup()
    shape = (5, 4, 6)
    if kind == "subm":
        rb = S.build_rulebook_submanifold(coords, shape)
        fwd, bwd = S.conv_features, S.conv_features_backward
    elif kind == "strided":
        rb = S.build_rulebook_strided(coords, shape)
        fwd, bwd = S.conv_features, S.conv_features_backward
    else:
        rb = S.build_rulebook_strided(coords, shape)
        x = rng.standard_normal((rb.n_out, 2))
        fwd, bwd = S.inverse_features, S.inverse_features_backward
    b = rng.standard_normal(3)
    out = fwd(x, w, b, rb)
    r = rng.standard_normal(out.shape)
    gx, gw, gb = bwd(x, w, rb, r)
    assert check_gradient(lambda v: np.sum(fwd(v, w, b, rb) * r), x, gx) <= 1e-3
    assert check_gradient(lambda v: np.sum(fwd(x, v, b, rb) * r), w, gw) <= 1e-3
    assert check_gradient(lambda v: np.sum(fwd(x, w, v, rb) * r), b, gb) <= 1e-3


@pytest.mark.parametrize("training", [True, False])
def test_norm_act_gradients_match_finite_differences(training):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((40, 4)) * 2 + 0.5
    gamma = rng.uniform(0.5, 1.5, 4)
    beta = rng.standard_normal(4) * 0.1
    running = {"mean": rng.standard_normal(4) * 0.1, "var": rng.uniform(0.5, 2, 4)}
    r = rng.standard_normal(x.shape)

    def f(xv, g=gamma, bt=beta):
        return np.sum(S.norm_act_forward(xv, g, bt, dict((k, v.copy()) for k, v in running.items()), "bn_relu", training)[0] * r)

    y, cache = S.norm_act_forward(x, gamma, beta, {k: v.copy() for k, v in running.items()}, "bn_relu", training)
    gx, gg, gb = S.norm_act_backward(cache, r)
    assert check_gradient(f, x, gx) <= 1e-3
    assert check_gradient(lambda v: f(x, v, beta), gamma, gg) <= 1e-3
    assert check_gradient(lambda v: f(x, gamma, v), beta, gb) <= 1e-3


def test_batchnorm_running_stats_update_with_momentum():
    x = np.array([[1.0], [3.0]])
    running = {"mean": np.zeros(1), "var": np.ones(1)}
    S.norm_act_forward(x, np.ones(1), np.zeros(1), running, "bn_relu", True)
    assert running["mean"][0] == pytest.approx(S.BN_MOMENTUM * 2.0)
    # unbiased batch variance of (1, 3) is 2
    assert running["var"][0] == pytest.approx(1 - S.BN_MOMENTUM + S.BN_MOMENTUM * 2.0)


def test_batchnorm_on_zero_sites_raises():
    with pytest.raises(S.ShapeError):
        S.norm_act_forward(np.zeros((0, 2)), np.ones(2), np.zeros(2), None, "bn_relu", True)
