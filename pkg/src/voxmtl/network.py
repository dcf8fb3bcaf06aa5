"""Sparse UNet backbone, point-wise task heads and the BEV anchor detection head.

The encoder has four stages; stages 1-3 open with a stride-2 sparse conv
(x8 total downsample) followed by two submanifold convs. Decoder blocks
concatenate the skip features, apply a submanifold conv and then either a
sparse inverse conv (stride 2, reusing the paired encoder rulebook) or a
submanifold conv (stride 1). The detection head runs on the BEV projection
of the encoder output.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dense_ops as D
from . import sparse_ops as S
from . import tensorio
from .pointcloud.voxel import VoxelGridSpec, VoxelizedFrame

POINT_TASKS = ("fg", "da", "gc", "ip", "gh")
POINT_TASK_DIMS = {"fg": 1, "da": 1, "gc": 1, "ip": 3, "gh": 1}
CHECKPOINT_VERSION = 1
PRIOR_PROB = 0.01


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    grid: VoxelGridSpec = field(default_factory=VoxelGridSpec)
    in_channels: int = 3
    encoder_dims: tuple[int, ...] = (16, 32, 64, 64)
    decoder_dims: tuple[int, ...] = (64, 32, 16, 16)
    decoder_strides: tuple[int, ...] = (2, 2, 2, 1)
    head_channels: tuple[int, int, int] = (128, 256, 256)
    head_layers: tuple[int, int] = (6, 6)
    classes: tuple[str, ...] = ("VEHICLE", "PEDESTRIAN")
    anchor_sizes: tuple[tuple[float, float, float], ...] = ((4.5, 1.9, 1.6), (0.7, 0.7, 1.75))
    anchor_z: tuple[float, ...] = (0.8, 0.9)
    anchor_rotations: tuple[float, ...] = (0.0, math.pi / 2)
    norm: str = "bn_relu"
    dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.grid, dict):
            self.grid = VoxelGridSpec(**self.grid)
        self.encoder_dims = tuple(int(d) for d in self.encoder_dims)
        self.decoder_dims = tuple(int(d) for d in self.decoder_dims)
        self.decoder_strides = tuple(int(s) for s in self.decoder_strides)
        self.head_channels = tuple(int(c) for c in self.head_channels)
        self.head_layers = tuple(int(n) for n in self.head_layers)
        self.classes = tuple(self.classes)
        self.anchor_sizes = tuple(tuple(float(v) for v in s) for s in self.anchor_sizes)
        self.anchor_z = tuple(float(z) for z in self.anchor_z)
        self.anchor_rotations = tuple(float(r) for r in self.anchor_rotations)
        if len(self.encoder_dims) != 4 or len(self.decoder_dims) != 4:
            raise ValueError("encoder and decoder need four stages each")
        if tuple(self.decoder_strides) != (2, 2, 2, 1):
            raise ValueError("decoder strides must mirror the three stride-2 encoder stages: (2, 2, 2, 1)")
        if min(self.encoder_dims + self.decoder_dims + self.head_channels) <= 0 or min(self.head_layers) < 1:
            raise ValueError("layer dimensions must be positive")
        if len(self.anchor_sizes) != len(self.classes) or len(self.anchor_z) != len(self.classes):
            raise ValueError("need one anchor size and anchor z per class")
        if self.norm not in ("bn_relu", "relu"):
            raise ValueError(f"unknown norm mode {self.norm!r}")

    @property
    def n_anchors(self) -> int:
        return len(self.classes) * len(self.anchor_rotations)

    def level_shapes(self) -> list[tuple[int, int, int]]:
        shapes = [self.grid.grid_shape]
        for _ in range(3):
            shapes.append(S.strided_output_shape(shapes[-1]))
        return shapes

    @property
    def bev_shape(self) -> tuple[int, int]:
        X, Y, _ = self.level_shapes()[3]
        return X, Y

    @property
    def bev_cell(self) -> float:
        return self.grid.voxel_size * 8

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = asdict(self.grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# --- execution plans ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Plan:
    """Coordinates and rulebooks for every scale of one (batched) input."""

    coords: tuple[np.ndarray, ...]  # per level, (N_l, 4)
    shapes: tuple[tuple[int, int, int], ...]
    subm: tuple[S.Rulebook, ...]  # per level
    down: tuple[S.Rulebook, ...]  # level l -> l+1
    batch_size: int


def build_plan(coords3: np.ndarray, grid_shape, batch_index: int = 0, batch_size: int = 1) -> Plan:
    c = np.zeros((len(coords3), 4), dtype=np.int32)
    c[:, 0] = batch_index
    c[:, 1:] = coords3
    coords = [c]
    shapes = [tuple(grid_shape)]
    subm = [S.build_rulebook_submanifold(c, shapes[0])]
    down = []
    for _ in range(3):
        rb = S.build_rulebook_strided(coords[-1], shapes[-1])
        down.append(rb)
        coords.append(rb.out_coords)
        shapes.append(rb.out_shape)
        subm.append(S.build_rulebook_submanifold(rb.out_coords, rb.out_shape))
    return Plan(tuple(coords), tuple(shapes), tuple(subm), tuple(down), batch_size)


def _merge_rulebooks(rbs, in_offsets, out_offsets, in_coords, out_coords):
    pairs = []
    for k in range(len(rbs[0].pairs)):
        ins = [rb.pairs[k][0] + oi for rb, oi in zip(rbs, in_offsets)]
        outs = [rb.pairs[k][1] + oo for rb, oo in zip(rbs, out_offsets)]
        pairs.append((np.concatenate(ins), np.concatenate(outs)))
    r0 = rbs[0]
    return S.Rulebook(tuple(pairs), in_coords, out_coords, r0.in_shape, r0.out_shape, r0.kernel_size, r0.stride, r0.mode)


def merge_plans(plans: list[Plan]) -> Plan:
    """Stack single-frame plans into one batch (frame b gets batch index b)."""
    if len(plans) == 1 and plans[0].batch_size == 1 and plans[0].coords[0][:, 0].max(initial=0) == 0:
        return plans[0]
    coords, offsets = [], []
    for lvl in range(4):
        cs = []
        off = [0]
        for b, p in enumerate(plans):
            c = p.coords[lvl].copy()
            c[:, 0] = b
            cs.append(c)
            off.append(off[-1] + len(c))
        coords.append(np.concatenate(cs))
        offsets.append(off[:-1])
    subm = tuple(
        _merge_rulebooks([p.subm[l] for p in plans], offsets[l], offsets[l], coords[l], coords[l]) for l in range(4)
    )
    down = tuple(
        _merge_rulebooks([p.down[l] for p in plans], offsets[l], offsets[l + 1], coords[l], coords[l + 1])
        for l in range(3)
    )
    return Plan(tuple(coords), plans[0].shapes, subm, down, len(plans))


@dataclass(frozen=True, eq=False)
class Batch:
    features: np.ndarray  # (N, in_channels)
    plan: Plan
    frame_offsets: tuple[int, ...]  # voxel row offsets of each frame

    @property
    def batch_size(self) -> int:
        return self.plan.batch_size

    @property
    def coords(self) -> np.ndarray:
        return self.plan.coords[0]


def make_batch(voxelized: list[VoxelizedFrame], plans: list[Plan] | None = None) -> Batch:
    if plans is None:
        plans = [build_plan(v.coords, v.grid_shape) for v in voxelized]
    feats = np.concatenate([v.features for v in voxelized]) if voxelized else np.zeros((0, 3))
    offsets = tuple(int(x) for x in np.cumsum([0] + [len(v) for v in voxelized])[:-1])
    return Batch(feats, merge_plans(plans), offsets)


# --- predictions -------------------------------------------------------------------


@dataclass(eq=False)
class MultiTaskPrediction:
    """Per-voxel point-wise outputs and per-BEV-cell anchor outputs.

    Logits are kept alongside probabilities so losses can be computed stably.
    """

    coords: np.ndarray  # (N, 4) voxel sites, same order as the input
    fg_logit: np.ndarray
    da_logit: np.ndarray
    gc_logit: np.ndarray
    ip_logit: np.ndarray  # (N, 3)
    gh: np.ndarray
    cls_logit: np.ndarray  # (B, H, W, A)
    box: np.ndarray  # (B, H, W, A, 7) residuals

    @property
    def fg_prob(self):
        return sigmoid(self.fg_logit)

    @property
    def da_prob(self):
        return sigmoid(self.da_logit)

    @property
    def gc_prob(self):
        return sigmoid(self.gc_logit)

    @property
    def ip(self):
        return sigmoid(self.ip_logit)

    @property
    def cls_prob(self):
        return sigmoid(self.cls_logit)


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def anchor_grid(config: ModelConfig) -> np.ndarray:
    """(H, W, A, 7) anchors; anchor index = class * n_rotations + rotation."""
    H, W = config.bev_shape
    cell = config.bev_cell
    x0, y0, _ = config.grid.range_min
    xs = x0 + (np.arange(H) + 0.5) * cell
    ys = y0 + (np.arange(W) + 0.5) * cell
    out = np.zeros((H, W, config.n_anchors, 7))
    a = 0
    for c, (l, w, h) in enumerate(config.anchor_sizes):
        for rot in config.anchor_rotations:
            out[:, :, a, 0] = xs[:, None]
            out[:, :, a, 1] = ys[None, :]
            out[:, :, a, 2] = config.anchor_z[c]
            out[:, :, a, 3:6] = (l, w, h)
            out[:, :, a, 6] = rot
            a += 1
    return out


def anchor_classes(config: ModelConfig) -> np.ndarray:
    return np.repeat(np.arange(len(config.classes)), len(config.anchor_rotations))


# --- layer table -------------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # subm | strided | inverse | conv2d | deconv2d | head3d | head2d
    c_in: int
    c_out: int
    stride: int = 1
    norm: bool = True

    @property
    def weight_shape(self):
        if self.kind in ("subm", "strided", "inverse"):
            return (27, self.c_in, self.c_out)
        if self.kind == "head3d":
            return (1, self.c_in, self.c_out)
        if self.kind in ("conv2d", "deconv2d"):
            return (3, 3, self.c_in, self.c_out)
        return (1, 1, self.c_in, self.c_out)

    @property
    def fan_in(self):
        shape = self.weight_shape
        return int(np.prod(shape[:-1]))


def layer_table(config: ModelConfig) -> list[LayerSpec]:
    e = config.encoder_dims
    d = config.decoder_dims
    layers = [
        LayerSpec("enc0.conv0", "subm", config.in_channels, e[0]),
        LayerSpec("enc0.conv1", "subm", e[0], e[0]),
    ]
    for s in range(1, 4):
        layers += [
            LayerSpec(f"enc{s}.down", "strided", e[s - 1], e[s], stride=2),
            LayerSpec(f"enc{s}.conv0", "subm", e[s], e[s]),
            LayerSpec(f"enc{s}.conv1", "subm", e[s], e[s]),
        ]
    prev = e[3]
    for b in range(4):
        level = 3 - b
        layers.append(LayerSpec(f"dec{b}.merge", "subm", prev + e[level], d[b]))
        kind = "inverse" if config.decoder_strides[b] == 2 else "subm"
        layers.append(LayerSpec(f"dec{b}.up", kind, d[b], d[b], stride=config.decoder_strides[b]))
        prev = d[b]
    for task in POINT_TASKS:
        layers.append(LayerSpec(f"head.{task}", "head3d", d[3], POINT_TASK_DIMS[task], norm=False))
    c1, c2, cu = config.head_channels
    n1, n2 = config.head_layers
    z3 = config.level_shapes()[3][2]
    cin = e[3] * z3
    for j in range(n1):
        layers.append(LayerSpec(f"det.b1.conv{j}", "conv2d", cin, c1))
        cin = c1
    for j in range(n2):
        layers.append(LayerSpec(f"det.b2.conv{j}", "conv2d", cin, c2, stride=2 if j == 0 else 1))
        cin = c2
    layers.append(LayerSpec("det.up", "deconv2d", cin, cu, stride=2))
    layers.append(LayerSpec("det.cls", "head2d", cu, config.n_anchors, norm=False))
    layers.append(LayerSpec("det.box", "head2d", cu, config.n_anchors * 7, norm=False))
    return layers


def init_bound(spec: LayerSpec) -> float:
    """Fan-in scaled uniform bound (He for ReLU layers, LeCun for output layers)."""
    return math.sqrt((6.0 if spec.norm else 3.0) / spec.fan_in)


class Model:
    def __init__(self, config: ModelConfig, params: dict, buffers: dict):
        self.config = config
        self.layers = {spec.name: spec for spec in layer_table(config)}
        self.params = params
        self.buffers = buffers
        self.dtype = np.dtype(config.dtype)
        self._tape = None
        self._anchors = None

    # -- construction --------------------------------------------------------

    @classmethod
    def init(cls, seed: int, config: ModelConfig) -> "Model":
        rng = np.random.default_rng(seed)
        dt = np.dtype(config.dtype)
        params, buffers = {}, {}
        prior_bias = -math.log((1 - PRIOR_PROB) / PRIOR_PROB)
        for spec in layer_table(config):
            bound = init_bound(spec)
            params[spec.name + ".w"] = rng.uniform(-bound, bound, spec.weight_shape).astype(dt)
            if spec.norm and config.norm == "bn_relu":
                params[spec.name + ".gamma"] = np.ones(spec.c_out, dt)
                params[spec.name + ".beta"] = np.zeros(spec.c_out, dt)
                buffers[spec.name + ".mean"] = np.zeros(spec.c_out, dt)
                buffers[spec.name + ".var"] = np.ones(spec.c_out, dt)
            else:
                b = np.zeros(spec.c_out, dt)
                if spec.name in ("head.fg", "det.cls"):
                    b[:] = prior_bias
                params[spec.name + ".b"] = b
        return cls(config, params, buffers)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def anchors(self) -> np.ndarray:
        if self._anchors is None:
            self._anchors = anchor_grid(self.config)
        return self._anchors

    def copy(self) -> "Model":
        return Model(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    # -- layer helpers ---------------------------------------------------------

    def _norm(self, name, y, training):
        spec = self.layers[name]
        if not spec.norm:
            return y, None
        if len(y) == 0:
            return y, S.NormCache("relu", np.zeros(y.shape, bool))
        if self.config.norm == "relu":
            return S.norm_act_forward(y, mode="relu")
        running = {"mean": self.buffers[name + ".mean"], "var": self.buffers[name + ".var"]}
        return S.norm_act_forward(
            y, self.params[name + ".gamma"], self.params[name + ".beta"], running, "bn_relu", training
        )

    def _bias(self, name):
        return self.params.get(name + ".b")

    def _sparse(self, name, x, rb, training):
        spec = self.layers[name]
        w = self.params[name + ".w"]
        if spec.kind == "inverse":
            y = S.inverse_features(x, w, self._bias(name), rb)
        else:
            y = S.conv_features(x, w, self._bias(name), rb)
        y, nc = self._norm(name, y, training)
        self._tape[name] = (x, rb, nc)
        return y

    def _sparse_back(self, name, g, grads, need_input_grad=True):
        spec = self.layers[name]
        x, rb, nc = self._tape[name]
        g = self._norm_back(name, nc, g, grads)
        w = self.params[name + ".w"]
        if spec.kind == "inverse":
            gx, gw, gb = S.inverse_features_backward(x, w, rb, g, need_input_grad)
        else:
            gx, gw, gb = S.conv_features_backward(x, w, rb, g, need_input_grad)
        grads[name + ".w"] += gw
        if name + ".b" in grads:
            grads[name + ".b"] += gb
        return gx

    def _norm_back(self, name, nc, g, grads):
        if nc is None:
            return g
        gx, gg, gbeta = S.norm_act_backward(nc, g)
        if gg is not None and name + ".gamma" in grads:
            grads[name + ".gamma"] += gg
            grads[name + ".beta"] += gbeta
        return gx

    def _dense(self, name, x, training, out_hw=None):
        spec = self.layers[name]
        w = self.params[name + ".w"]
        if spec.kind == "deconv2d":
            y = D.deconv2d_forward(x, w, self._bias(name), spec.stride, out_hw)
        else:
            y = D.conv2d_forward(x, w, self._bias(name), spec.stride)
        shape = y.shape
        flat, nc = self._norm(name, y.reshape(-1, shape[-1]), training)
        self._tape[name] = (x, None, nc)
        return flat.reshape(shape)

    def _dense_back(self, name, g, grads, need_input_grad=True):
        spec = self.layers[name]
        x, _, nc = self._tape[name]
        shape = g.shape
        g = self._norm_back(name, nc, g.reshape(-1, shape[-1]), grads).reshape(shape)
        w = self.params[name + ".w"]
        if spec.kind == "deconv2d":
            gx, gw, gb = D.deconv2d_backward(x, w, g, spec.stride, need_input_grad)
        else:
            gx, gw, gb = D.conv2d_backward(x, w, g, spec.stride, need_input_grad)
        grads[name + ".w"] += gw
        if name + ".b" in grads:
            grads[name + ".b"] += gb
        return gx

    # -- forward / backward ------------------------------------------------------

    def forward(self, batch: Batch, training: bool = False) -> MultiTaskPrediction:
        cfg = self.config
        plan = batch.plan
        self._tape = {}
        x = np.asarray(batch.features, dtype=self.dtype)
        if x.shape[1] != cfg.in_channels:
            raise S.ShapeError(f"input has {x.shape[1]} channels, model expects {cfg.in_channels}")

        h = self._sparse("enc0.conv0", x, plan.subm[0], training)
        h = self._sparse("enc0.conv1", h, plan.subm[0], training)
        skips = [h]
        for s in range(1, 4):
            h = self._sparse(f"enc{s}.down", h, plan.down[s - 1], training)
            h = self._sparse(f"enc{s}.conv0", h, plan.subm[s], training)
            h = self._sparse(f"enc{s}.conv1", h, plan.subm[s], training)
            skips.append(h)

        prev = skips[3]
        widths = []
        for b in range(4):
            level = 3 - b
            cat = np.concatenate([prev, skips[level]], axis=1)
            widths.append(prev.shape[1])
            m = self._sparse(f"dec{b}.merge", cat, plan.subm[level], training)
            rb = plan.down[level - 1] if cfg.decoder_strides[b] == 2 else plan.subm[level]
            prev = self._sparse(f"dec{b}.up", m, rb, training)
        self._tape["_widths"] = widths
        dec = prev

        outs = {}
        for task in POINT_TASKS:
            outs[task] = dec @ self.params[f"head.{task}.w"][0] + self.params[f"head.{task}.b"]
        self._tape["_dec"] = dec

        enc = S.SparseTensor3D(plan.coords[3], skips[3], plan.shapes[3])
        self._tape["_enc"] = enc
        bev = D.bev_project(enc, plan.batch_size)
        h = bev
        for j in range(cfg.head_layers[0]):
            h = self._dense(f"det.b1.conv{j}", h, training)
        hw1 = h.shape[1:3]
        for j in range(cfg.head_layers[1]):
            h = self._dense(f"det.b2.conv{j}", h, training)
        h = self._dense("det.up", h, training, out_hw=hw1)
        self._tape["_det"] = h
        cls_logit = h @ self.params["det.cls.w"][0, 0] + self.params["det.cls.b"]
        box = h @ self.params["det.box.w"][0, 0] + self.params["det.box.b"]
        B, H, W, _ = h.shape
        return MultiTaskPrediction(
            coords=plan.coords[0],
            fg_logit=outs["fg"][:, 0],
            da_logit=outs["da"][:, 0],
            gc_logit=outs["gc"][:, 0],
            ip_logit=outs["ip"],
            gh=outs["gh"][:, 0],
            cls_logit=cls_logit,
            box=box.reshape(B, H, W, cfg.n_anchors, 7),
        )

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def backward(self, out_grads: dict) -> dict:
        """Gradients of all parameters given d(loss)/d(output) for the cached forward.

        ``out_grads`` keys: fg_logit, da_logit, gc_logit, ip_logit, gh,
        cls_logit, box (any may be omitted, meaning zero).
        """
        if self._tape is None:
            raise RuntimeError("backward called without a cached forward pass")
        cfg = self.config
        grads = self.zero_grads()
        dec = self._tape["_dec"]
        g_dec = np.zeros_like(dec)
        for task in POINT_TASKS:
            key = "ip_logit" if task == "ip" else ("gh" if task == "gh" else f"{task}_logit")
            g = out_grads.get(key)
            if g is None:
                continue
            g = np.asarray(g, dtype=self.dtype).reshape(len(dec), -1)
            w = self.params[f"head.{task}.w"][0]
            grads[f"head.{task}.w"][0] += dec.T @ g
            grads[f"head.{task}.b"] += g.sum(axis=0)
            g_dec += g @ w.T

        # detection head
        h = self._tape["_det"]
        g_h = np.zeros_like(h)
        hflat = h.reshape(-1, h.shape[-1])
        for key, name, width in (("cls_logit", "det.cls", cfg.n_anchors), ("box", "det.box", cfg.n_anchors * 7)):
            g = out_grads.get(key)
            if g is None:
                continue
            gf = np.asarray(g, dtype=self.dtype).reshape(-1, width)
            grads[name + ".w"][0, 0] += hflat.T @ gf
            grads[name + ".b"] += gf.sum(axis=0)
            g_h += (gf @ self.params[name + ".w"][0, 0].T).reshape(h.shape)
        g = self._dense_back("det.up", g_h, grads)
        for j in reversed(range(cfg.head_layers[1])):
            g = self._dense_back(f"det.b2.conv{j}", g, grads)
        for j in reversed(range(cfg.head_layers[0])):
            g = self._dense_back(f"det.b1.conv{j}", g, grads)
        enc = self._tape["_enc"]
        g_skips = [None, None, None, D.bev_project_backward(enc, g).astype(self.dtype)]

        # decoder
        widths = self._tape["_widths"]
        g_prev = g_dec
        for b in reversed(range(4)):
            level = 3 - b
            g_m = self._sparse_back(f"dec{b}.up", g_prev, grads)
            g_cat = self._sparse_back(f"dec{b}.merge", g_m, grads)
            w = widths[b]
            g_skip = g_cat[:, w:]
            g_skips[level] = g_skip if g_skips[level] is None else g_skips[level] + g_skip
            g_prev = g_cat[:, :w]
        g_skips[3] = g_skips[3] + g_prev

        # encoder
        g = g_skips[3]
        for s in range(3, 0, -1):
            g = self._sparse_back(f"enc{s}.conv1", g, grads)
            g = self._sparse_back(f"enc{s}.conv0", g, grads)
            g = self._sparse_back(f"enc{s}.down", g, grads)
            g = g + g_skips[s - 1]
        g = self._sparse_back("enc0.conv1", g, grads)
        self._sparse_back("enc0.conv0", g, grads, need_input_grad=False)
        return grads

    def predict(self, batch: Batch) -> MultiTaskPrediction:
        out = self.forward(batch, training=False)
        self._tape = None
        return out


# --- checkpoints -------------------------------------------------------------------


def save_checkpoint(path, model: Model, step: int = 0, loss_state: dict | None = None, extra: dict | None = None) -> None:
    """Loss-state arrays go into the tensor table; everything else into the JSON header."""
    tensors = {f"param/{k}": v for k, v in model.params.items()}
    tensors.update({f"buffer/{k}": v for k, v in model.buffers.items()})
    loss_meta = {}
    for k, v in (loss_state or {}).items():
        if isinstance(v, np.ndarray):
            tensors[f"loss/{k}"] = v
        else:
            loss_meta[k] = v
    for k, v in (extra or {}).items():
        tensors[f"extra/{k}"] = v
    meta = {
        "kind": "checkpoint",
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "step": int(step),
        "loss_meta": loss_meta,
    }
    tensorio.save(path, meta, tensors)


def load_checkpoint(path, expected_config: ModelConfig | None = None):
    """Returns (model, step, loss_state, extra)."""
    try:
        meta, tensors = tensorio.load(path)
    except tensorio.TensorFileError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("kind") != "checkpoint":
        raise CheckpointError(f"{path} is not a checkpoint")
    if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {meta.get('checkpoint_version')} != {CHECKPOINT_VERSION}")
    config = ModelConfig.from_dict(meta["config"])
    if expected_config is not None and config.to_dict() != expected_config.to_dict():
        raise CheckpointError("checkpoint config does not match the expected model config")
    params = {k[6:]: v for k, v in tensors.items() if k.startswith("param/")}
    buffers = {k[7:]: v for k, v in tensors.items() if k.startswith("buffer/")}
    expected = Model.init(0, config)
    if set(params) != set(expected.params) or set(buffers) != set(expected.buffers):
        raise CheckpointError("checkpoint tensor table does not match the model layout")
    for k, v in params.items():
        if v.shape != expected.params[k].shape:
            raise CheckpointError(f"parameter {k} has shape {v.shape}, expected {expected.params[k].shape}")
    loss_state = dict(meta.get("loss_meta", {}))
    loss_state.update({k[5:]: v for k, v in tensors.items() if k.startswith("loss/")})
    extra = {k[6:]: v for k, v in tensors.items() if k.startswith("extra/")}
    model = Model(config, {k: params[k] for k in expected.params}, {k: buffers[k] for k in expected.buffers})
    return model, int(meta["step"]), loss_state, extra
