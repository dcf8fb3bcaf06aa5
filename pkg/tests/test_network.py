import numpy as np
import pytest

from voxmtl.network import (
    CheckpointError,
    Model,
    ModelConfig,
    anchor_classes,
    anchor_grid,
    build_plan,
    layer_table,
    load_checkpoint,
    make_batch,
    save_checkpoint,
)
from voxmtl.pointcloud import VoxelGridSpec, voxelize

TINY_GRID = VoxelGridSpec((0, 0, 0), (3.2, 3.2, 1.6), 0.2)


def tiny_config(**kw):
    base = dict(
        grid=TINY_GRID,
        encoder_dims=(3, 4, 4, 5),
        decoder_dims=(4, 4, 3, 3),
        head_channels=(4, 5, 4),
        head_layers=(1, 2),
        dtype="float64",
    )
    base.update(kw)
    return ModelConfig(**base)


def random_batch(config, n_frames=2, n_points=150, seed=0):
    rng = np.random.default_rng(seed)
    hi = np.array(config.grid.range_max)
    voxes = [voxelize(rng.uniform(0, hi, (n_points, 3)), config.grid) for _ in range(n_frames)]
    return make_batch(voxes)


def test_full_config_architecture():
    cfg = ModelConfig()
    shapes = cfg.level_shapes()
    assert shapes[0] == (704, 800, 55)
    # three stride-2 stages: x8 in each horizontal axis
    assert shapes[3][:2] == (88, 100)
    table = {s.name: s for s in layer_table(cfg)}
    assert [table[f"enc{s}.conv1"].c_out for s in range(4)] == [16, 32, 64, 64]
    assert [table[f"enc{s}.down"].stride for s in range(1, 4)] == [2, 2, 2]
    assert [table[f"dec{b}.up"].c_out for b in range(4)] == [64, 32, 16, 16]
    assert [table[f"dec{b}.up"].kind for b in range(4)] == ["inverse"] * 3 + ["subm"]
    n = Model.init(0, cfg).num_parameters()
    assert abs(n - 6.52e6) / 6.52e6 <= 0.10


def test_decoder_restores_input_active_set():
    cfg = tiny_config()
    batch = random_batch(cfg)
    model = Model.init(0, cfg)
    out = model.predict(batch)
    plan = batch.plan
    assert np.array_equal(out.coords, plan.coords[0])
    assert len(out.fg_logit) == len(plan.coords[0])
    # each inverse stage writes back onto the coordinates its strided partner read
    for level in range(3):
        assert np.array_equal(plan.down[level].in_coords, plan.coords[level])
    assert out.cls_logit.shape == (2,) + cfg.bev_shape + (cfg.n_anchors,)
    assert out.box.shape == (2,) + cfg.bev_shape + (cfg.n_anchors, 7)


def test_batched_forward_matches_single_frames_in_inference():
    cfg = tiny_config()
    model = Model.init(1, cfg)
    rng = np.random.default_rng(3)
    voxes = [voxelize(rng.uniform(0, 3.2, (100, 3)) * [1, 1, 0.5], cfg.grid) for _ in range(2)]
    both = model.predict(make_batch(voxes))
    one = model.predict(make_batch(voxes[1:]))
    off = len(voxes[0])
    np.testing.assert_allclose(both.fg_logit[off:], one.fg_logit, atol=1e-12)
    np.testing.assert_allclose(both.cls_logit[1], one.cls_logit[0], atol=1e-12)


def test_anchor_layout():
    cfg = tiny_config()
    a = anchor_grid(cfg)
    H, W = cfg.bev_shape
    assert a.shape == (H, W, 4, 7)
    assert anchor_classes(cfg).tolist() == [0, 0, 1, 1]
    np.testing.assert_allclose(a[0, 0, :, 6], [0, np.pi / 2, 0, np.pi / 2])
    cell = cfg.bev_cell
    assert a[1, 0, 0, 0] - a[0, 0, 0, 0] == pytest.approx(cell)


@pytest.mark.parametrize("norm", ["bn_relu", "relu"])
def test_whole_model_directional_derivative(norm):
    cfg = tiny_config(norm=norm)
    model = Model.init(2, cfg)
    rng = np.random.default_rng(9)
    # zero biases put empty BEV cells exactly on the ReLU kink
    for k, v in model.params.items():
        if k.endswith(".b") or k.endswith(".beta"):
            v += rng.uniform(-0.1, 0.1, v.shape)
    batch = random_batch(cfg, seed=5)
    out = model.forward(batch, training=True)
    keys = ("fg_logit", "da_logit", "gc_logit", "ip_logit", "gh", "cls_logit", "box")
    r = {k: rng.standard_normal(getattr(out, k).shape) for k in keys}
    grads = model.backward(r)

    def objective(params):
        m = Model(cfg, params, {k: v.copy() for k, v in model.buffers.items()})
        o = m.forward(batch, training=True)
        return sum(float(np.sum(getattr(o, k) * r[k])) for k in keys)

    direction = {k: rng.standard_normal(v.shape) for k, v in model.params.items()}
    h = 1e-7
    plus = {k: v + h * direction[k] for k, v in model.params.items()}
    minus = {k: v - h * direction[k] for k, v in model.params.items()}
    numeric = (objective(plus) - objective(minus)) / (2 * h)
    analytic = sum(float(np.sum(grads[k] * direction[k])) for k in grads)
    assert abs(numeric - analytic) <= 1e-3 * max(abs(numeric), abs(analytic))


def test_backward_requires_forward():
    model = Model.init(0, tiny_config())
    with pytest.raises(RuntimeError):
        model.backward({})


def test_checkpoint_round_trip(tmp_path):
    cfg = tiny_config()
    model = Model.init(4, cfg)
    path = tmp_path / "m.vxt"
    save_checkpoint(path, model, step=17, loss_state={"mode": "adaptive", "log_var": np.arange(6.0)},
                    extra={"note": np.array([1, 2])})
    back, step, loss_state, extra = load_checkpoint(path, cfg)
    assert step == 17 and loss_state["mode"] == "adaptive"
    np.testing.assert_array_equal(loss_state["log_var"], np.arange(6.0))
    np.testing.assert_array_equal(extra["note"], [1, 2])
    for k, v in model.params.items():
        assert np.array_equal(back.params[k], v) and back.params[k].dtype == v.dtype
    batch = random_batch(cfg)
    np.testing.assert_array_equal(model.predict(batch).box, back.predict(batch).box)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, tiny_config(head_layers=(2, 2)))
    path.write_bytes(b"garbage")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config(encoder_dims=(1, 2, 3))
    with pytest.raises(ValueError):
        tiny_config(decoder_strides=(2, 2, 1, 1))
    with pytest.raises(ValueError):
        tiny_config(norm="layer")
    assert ModelConfig.from_dict(tiny_config().to_dict()) == tiny_config()


def test_plan_of_empty_frame():
    cfg = tiny_config()
    plan = build_plan(np.zeros((0, 3), np.int32), cfg.grid.grid_shape)
    assert all(len(c) == 0 for c in plan.coords)
