from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from ..network import Batch, Model, ModelConfig, Plan, build_plan, make_batch, save_checkpoint
from ..pointcloud.frame import PointCloudFrame
from ..pointcloud.voxel import VoxelizedFrame, voxelize
from .losses import TASKS, binary_entropy, ce_loss_from_logits, focal_loss_from_logits
from .optim import AdamState, StepSchedule, adam_step
from .targets import AnchorTargets, PointTargets, assign_anchor_targets, assign_point_targets
from .weights import LossWeighting


class EmptyDatasetError(ValueError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 1000
    batch_size: int = 4
    lr: float = 0.01
    lr_decay: float = 0.1
    milestones: tuple[float, ...] = (0.6, 0.8)
    weight_mode: str = "equal"
    grid_weights: dict | None = None
    warmup: int = 100
    seed: int = 0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    # constant learning rate for the log-variances; None follows the network schedule
    sigma_lr: float | None = 0.05
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None


@dataclass(eq=False)
class PreparedFrame:
    vox: VoxelizedFrame
    plan: Plan
    points: PointTargets
    anchors: AnchorTargets


@dataclass
class TrainResult:
    model: Model
    weighting: LossWeighting
    optimizer: AdamState
    curve: list[dict] = field(default_factory=list)
    skipped_steps: int = 0
    sigma_optimizer: AdamState | None = None


def prepare_frames(frames: list[PointCloudFrame], config: ModelConfig, anchors=None) -> list[PreparedFrame]:
    from ..network import anchor_classes, anchor_grid

    anchors = anchor_grid(config) if anchors is None else anchors
    acls = anchor_classes(config)
    out = []
    for f in frames:
        vox = voxelize(f, config.grid)
        plan = build_plan(vox.coords, vox.grid_shape)
        out.append(
            PreparedFrame(vox, plan, assign_point_targets(f, vox), assign_anchor_targets(anchors, acls, f.boxes, f.box_classes))
        )
    return out


def batch_from_prepared(items: list[PreparedFrame]) -> Batch:
    return make_batch([p.vox for p in items], [p.plan for p in items])


def compute_task_losses(pred, items: list[PreparedFrame], alpha=0.25, gamma=2.0):
    """Six task losses for one batch and, per task, d L_task / d output."""
    cat = lambda attr: np.concatenate([getattr(p.points, attr) for p in items])  # noqa: E731
    fg, da, gc, gh, ip, ipv = (cat(a) for a in ("fg", "da", "gc", "gh", "ip", "ip_valid"))
    losses, grads = {}, {}

    losses["FG"], g = focal_loss_from_logits(pred.fg_logit, fg, alpha, gamma)
    grads["FG"] = {"fg_logit": g}
    losses["DA"], g = ce_loss_from_logits(pred.da_logit, da)
    grads["DA"] = {"da_logit": g}
    losses["GC"], g = ce_loss_from_logits(pred.gc_logit, gc)
    grads["GC"] = {"gc_logit": g}
    ce, g = ce_loss_from_logits(pred.ip_logit, ip, ipv[:, None])
    # soft targets: subtract their entropy so the loss floor is zero (same gradient)
    losses["IP"] = ce - float(binary_entropy(ip[ipv]).mean()) if ipv.any() else 0.0
    grads["IP"] = {"ip_logit": g}
    d = pred.gh.astype(np.float64) - gh
    losses["GH"] = float(np.abs(d).mean()) if len(d) else 0.0
    grads["GH"] = {"gh": np.sign(d) / max(len(d), 1)}

    labels = np.stack([p.anchors.labels for p in items])
    n_pos = max(int((labels == 1).sum()), 1)
    cls_loss, g_cls = focal_loss_from_logits(pred.cls_logit, labels == 1, alpha, gamma, mask=labels >= 0, normalizer=n_pos)
    box_t = np.stack([p.anchors.box for p in items])
    box_m = np.stack([p.anchors.box_valid for p in items])[..., None]
    db = pred.box.astype(np.float64) - box_t
    box_loss = float(np.abs(db)[np.broadcast_to(box_m, db.shape)].sum() / n_pos)
    losses["OD"] = cls_loss + box_loss
    grads["OD"] = {"cls_logit": g_cls, "box": np.where(box_m, np.sign(db), 0.0) / n_pos}
    return losses, grads


def combine_output_grads(task_grads: dict, coeff: dict) -> dict:
    out = {}
    for task, gd in task_grads.items():
        c = coeff[task]
        for key, g in gd.items():
            out[key] = out.get(key, 0.0) + c * g
    return out


def batch_order(n_frames: int, batch_size: int, iterations: int, seed: int) -> list[list[int]]:
    """Deterministic epoch-wise shuffles, cut into consecutive batches."""
    rng = np.random.default_rng(seed)
    order: list[list[int]] = []
    while len(order) < iterations:
        perm = rng.permutation(n_frames)
        order.extend(perm[i : i + batch_size].tolist() for i in range(0, n_frames, batch_size))
    return order[:iterations]


def curve_row(step, lr, losses, total, weighting: LossWeighting) -> dict:
    row = {"step": step, "lr": lr, "total": total}
    row.update({f"loss_{t}": losses[t] for t in TASKS})
    s2 = weighting.sigma2
    row.update({f"sigma2_{t}": float(s2[i]) for i, t in enumerate(TASKS)})
    w = weighting.weights()
    row.update({f"weight_{t}": w[t] for t in TASKS})
    return row


def write_curve_csv(path, rows: list[dict]) -> None:
    if not rows:
        raise ValueError("no loss-curve rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})


def train(frames, model: Model, config: TrainConfig, prepared=None, callback=None) -> TrainResult:
    """Runs ``config.iterations`` optimizer steps over batches of ``frames``.

    ``callback(step, row)`` is invoked after every step.
    """
    if not frames and not prepared:
        raise EmptyDatasetError("training needs at least one labeled frame")
    items = prepared if prepared is not None else prepare_frames(frames, model.config, model.anchors())
    weighting = LossWeighting(config.weight_mode, config.grid_weights, config.warmup)
    opt = AdamState()
    sigma_opt = AdamState()
    sched = StepSchedule(config.lr, config.lr_decay, tuple(config.milestones), config.iterations)
    order = batch_order(len(items), config.batch_size, config.iterations, config.seed)
    result = TrainResult(model, weighting, opt, sigma_optimizer=sigma_opt)
    for step, idx in enumerate(order):
        sel = [items[i] for i in idx]
        batch = batch_from_prepared(sel)
        pred = model.forward(batch, training=True)
        losses, task_grads = compute_task_losses(pred, sel, config.focal_alpha, config.focal_gamma)
        total, coeff, g_logvar = weighting.aggregate(losses)
        grads = model.backward(combine_output_grads(task_grads, coeff))
        lr = sched.lr(step)
        ok = adam_step(model.params, grads, opt, lr)
        if ok and g_logvar is not None:
            lv = {"log_var": weighting.log_var}
            adam_step(lv, {"log_var": g_logvar}, sigma_opt, config.sigma_lr if config.sigma_lr is not None else lr)
        weighting.observe(losses)
        row = curve_row(step + 1, lr, losses, total, weighting)
        result.curve.append(row)
        if callback is not None:
            callback(step + 1, row)
        if config.checkpoint_every and config.checkpoint_dir and (step + 1) % config.checkpoint_every == 0:
            save_training_checkpoint(os.path.join(config.checkpoint_dir, f"step_{step + 1:06d}.vxt"), result, step + 1)
    model._tape = None
    result.skipped_steps = opt.skipped
    return result


def save_training_checkpoint(path, result: TrainResult, step: int) -> None:
    extra = result.optimizer.to_arrays("adam/")
    if result.sigma_optimizer is not None:
        extra.update(result.sigma_optimizer.to_arrays("adam_sigma/"))
    save_checkpoint(path, result.model, step, result.weighting.state(), extra)
