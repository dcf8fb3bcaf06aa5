"""Command line: synth | train | infer | eval | sweep | filter | bench."""
from __future__ import annotations

import argparse
import contextlib
import csv
import os
import sys
from dataclasses import replace

OUT_ENV = "VOXMTL_OUT_DIR"


class CLIError(Exception):
    pass


# -- helpers -----------------------------------------------------------------------


def _out_dir(args) -> str:
    out = args.out or os.environ.get(OUT_ENV) or "out"
    os.makedirs(out, exist_ok=True)
    return out


def _synth_frames(run, seed: int, n: int):
    from .pointcloud import synthetic_frames

    if n < 1:
        raise CLIError("--frames must be at least 1")
    return synthetic_frames(n, seed, run.scene)


def _load_frames(directory: str):
    from .pointcloud import list_frames, read_frame

    if not os.path.isdir(directory):
        raise CLIError(f"data directory {directory!r} does not exist")
    paths = list_frames(directory)
    if not paths:
        raise CLIError(f"no .vxf frames in {directory!r}; create some with `synth`")
    return [read_frame(p) for p in paths]


def _frames(args, run):
    if getattr(args, "data", None):
        return _load_frames(args.data)
    return _synth_frames(run, args.seed if args.seed is not None else 0, args.frames)


def _load_model(path, expected=None):
    from .network import CheckpointError, load_checkpoint

    if not path:
        raise CLIError("--checkpoint is required")
    if not os.path.isfile(path):
        raise CLIError(f"checkpoint {path!r} not found")
    try:
        return load_checkpoint(path, expected)
    except CheckpointError as exc:
        raise CLIError(str(exc)) from exc


def _deterministic(enabled: bool):
    if not enabled:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


def _write_rows(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# -- commands ----------------------------------------------------------------------


def cmd_synth(args, run) -> None:
    from .pointcloud import write_frame

    out = _out_dir(args)
    frames = _synth_frames(run, args.seed if args.seed is not None else 0, args.frames)
    for i, f in enumerate(frames):
        write_frame(f, os.path.join(out, f"frame_{i:05d}.vxf"))
    print(f"wrote {len(frames)} frames to {out}")


def _model_config_for(run, frames):
    from .training import anchor_statistics

    cfg = run.model
    if run.anchors_from_data:
        sizes, zs = anchor_statistics(frames, len(cfg.classes), cfg.anchor_sizes, cfg.anchor_z)
        cfg = replace(cfg, anchor_sizes=sizes, anchor_z=zs)
    return cfg


def cmd_train(args, run) -> None:
    from . import plots
    from .config import format_weights
    from .network import Model
    from .training import prepare_frames, save_training_checkpoint, train, write_curve_csv
    from .training.grid_search import search_weights, validation_map_score

    out = _out_dir(args)
    frames = _frames(args, run)
    cfg = _model_config_for(run, frames)
    tcfg = run.train
    if args.checkpoint_every is not None:
        tcfg = replace(tcfg, checkpoint_every=args.checkpoint_every)
    if tcfg.checkpoint_every:
        tcfg = replace(tcfg, checkpoint_dir=os.path.join(out, "checkpoints"))
        os.makedirs(tcfg.checkpoint_dir, exist_ok=True)

    if args.grid_search:
        n_val = max(1, len(frames) // 5)
        if len(frames) < 2:
            raise CLIError("grid search needs at least two frames (train and validation split)")
        score = validation_map_score(frames[n_val:], frames[:n_val], cfg, tcfg, tcfg.seed)
        lattice = tuple(float(v) for v in args.lattice.split(",")) if args.lattice else None
        res = search_weights(score, lattice) if lattice else search_weights(score)
        rows = [dict(w, val_mAP_BEV=s) for w, s in res.trials]
        _write_rows(os.path.join(out, "grid_search.csv"), rows)
        with open(os.path.join(out, "grid_weights.ini"), "w") as fh:
            fh.write(f"[train]\ngrid_weights = {format_weights(res.best_weights)}\n")
        print(f"best weights {format_weights(res.best_weights)} with validation mAP_BEV {res.best_score:.2f}")
        return

    model = Model.init(tcfg.seed, cfg)
    prepared = prepare_frames(frames, cfg, model.anchors())
    every = max(1, tcfg.iterations // 20)

    def progress(step, row):
        if not args.quiet and (step % every == 0 or step == tcfg.iterations):
            print(f"step {step:6d}  lr {row['lr']:.2e}  loss {row['total']:.4f}", flush=True)

    result = train(None, model, tcfg, prepared=prepared, callback=progress)
    save_training_checkpoint(os.path.join(out, "model.vxt"), result, tcfg.iterations)
    write_curve_csv(os.path.join(out, "loss_curve.csv"), result.curve)
    if not args.no_plots:
        plots.plot_loss_curves(result.curve, os.path.join(out, "loss_curve.png"))
        if result.weighting.adaptive:
            plots.plot_sigma(result.curve, os.path.join(out, "sigma.png"))
    if result.skipped_steps:
        print(f"warning: {result.skipped_steps} steps skipped on non-finite gradients", file=sys.stderr)
    print(f"wrote {os.path.join(out, 'model.vxt')} after {tcfg.iterations} steps")


def cmd_infer(args, run) -> None:
    from .inference import infer, save_predictions

    out = _out_dir(args)
    model, step, _, _ = _load_model(args.checkpoint)
    frames = _frames(args, run)
    preds = infer(model, frames, run.infer.batch_size, run.infer.score_threshold, run.infer.nms_iou)
    path = os.path.join(out, "predictions.vxt")
    save_predictions(path, preds, {"checkpoint_step": step, "n_frames": len(frames)})
    print(f"wrote predictions for {len(frames)} frames to {path}")


def _predictions(args, run, frames):
    from .inference import FramePrediction, PredictionDumpError, infer, load_predictions

    if getattr(args, "ground_truth", False):
        return [FramePrediction.from_labels(f) for f in frames]
    if args.predictions:
        try:
            preds, _ = load_predictions(args.predictions)
        except PredictionDumpError as exc:
            raise CLIError(str(exc)) from exc
        if len(preds) != len(frames):
            raise CLIError(f"prediction dump has {len(preds)} frames, data has {len(frames)}")
        return preds
    if args.checkpoint:
        model = _load_model(args.checkpoint)[0]
        return infer(model, frames, run.infer.batch_size, run.infer.score_threshold, run.infer.nms_iou)
    raise CLIError("give --predictions, --checkpoint or --ground-truth")


def cmd_eval(args, run) -> None:
    from . import plots
    from .evaluation import evaluate

    out = _out_dir(args)
    frames = _frames(args, run)
    preds = _predictions(args, run, frames)
    try:
        report = evaluate(preds, frames, run.model.classes)
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    report.write(os.path.join(out, "metrics.csv"), os.path.join(out, "metrics.txt"))
    if not args.no_plots:
        plots.plot_metrics(report, os.path.join(out, "metrics.png"))
    print(report.to_text(), end="")


def cmd_sweep(args, run) -> None:
    from . import plots
    from .evaluation import DEFAULT_FACTORS, robustness_sweep, sweep_csv

    out = _out_dir(args)
    model = _load_model(args.checkpoint)[0]
    frames = _frames(args, run)
    factors = DEFAULT_FACTORS
    if args.factor_list:
        try:
            factors = tuple(int(v) for v in args.factor_list.split(","))
        except ValueError as exc:
            raise CLIError(f"--factor-list expects comma-separated integers, got {args.factor_list!r}") from exc
        if any(f < 1 for f in factors):
            raise CLIError("--factor-list values must be >= 1")
    rows = robustness_sweep(model, frames, factors, seed=args.seed or 0, batch_size=run.infer.batch_size,
                            score_threshold=run.infer.score_threshold, nms_iou=run.infer.nms_iou)
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as fh:
        fh.write(sweep_csv(rows))
    if not args.no_plots:
        plots.plot_sweep(rows, os.path.join(out, "sweep.png"))
    print(sweep_csv(rows), end="")


def cmd_filter(args, run) -> None:
    from .localization_filter import FILTER_MODES, export_for_registration, filter_point_cloud

    out = _out_dir(args)
    frames = _frames(args, run)
    preds = _predictions(args, run, frames)
    modes = FILTER_MODES if args.mode in (None, "all") else (args.mode,)
    for m in modes:
        if m not in FILTER_MODES:
            raise CLIError(f"--mode must be one of {', '.join(FILTER_MODES)} or all")
    leaf = args.voxel_leaf if args.voxel_leaf is not None else run.filter.voxel_leaf
    rows = []
    for i, (f, p) in enumerate(zip(frames, preds)):
        for m in modes:
            kept, stats = filter_point_cloud(f, p, m, run.filter.threshold)
            n = export_for_registration(kept, os.path.join(out, f"frame_{i:05d}_{m}.xyz"), leaf)
            rows.append({"frame": i, "mode": m, "input": stats.n_input, "kept": stats.n_kept,
                         "removed": stats.n_removed, "removed_da": stats.n_removed_da,
                         "removed_fg": stats.n_removed_fg, "exported": n})
            print(f"frame {i}: {stats.summary()} exported={n}")
    _write_rows(os.path.join(out, "filter_stats.csv"), rows)


def cmd_bench(args, run) -> None:
    from .evaluation import benchmark
    from .network import Model

    out = _out_dir(args)
    frames = _frames(args, run)
    model = _load_model(args.checkpoint)[0] if args.checkpoint else Model.init(args.seed or 0, run.model)
    res = benchmark(model, frames, n_timed=args.timed, runs=args.runs)
    row = {"trainable_params": res.n_params, "params_millions": round(res.n_params / 1e6, 4),
           "fps_median": round(res.fps, 4), "fps_runs": " ".join(f"{r:.4f}" for r in res.fps_runs),
           "timed_inferences": res.n_timed, "hardware": res.hardware}
    _write_rows(os.path.join(out, "bench.csv"), [row])
    text = "\n".join(f"{k:<18} {v}" for k, v in row.items()) + "\n"
    with open(os.path.join(out, "bench.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "filter": cmd_filter,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file or preset name (front_view, desk)")
    common.add_argument("--seed", type=int, default=None, help="random seed (default from config, else 0)")
    common.add_argument("--deterministic", action="store_true", help="single-threaded numerics for bitwise reruns")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    common.add_argument("--frames", type=int, default=20, help="number of synthetic frames when --data is absent")
    common.add_argument("--data", help="directory of .vxf frames")

    p = argparse.ArgumentParser(prog="voxmtl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate labeled synthetic frames")

    t = sub.add_parser("train", parents=[common], help="train a model, write checkpoint and loss curves")
    t.add_argument("--mode", choices=("equal", "balanced", "grid", "adaptive", "adaptive+grid"),
                   help="loss-weight strategy (overrides config)")
    t.add_argument("--checkpoint-every", type=int, default=None)
    t.add_argument("--grid-search", action="store_true", help="search fixed loss weights instead of training once")
    t.add_argument("--lattice", help="comma-separated weight lattice for --grid-search")
    t.add_argument("--quiet", action="store_true")
    t.add_argument("--no-plots", action="store_true")

    i = sub.add_parser("infer", parents=[common], help="write a prediction dump")
    i.add_argument("--checkpoint", required=True)

    for name, helptext in (("eval", "metric report"), ("filter", "registration point clouds")):
        e = sub.add_parser(name, parents=[common], help=helptext)
        e.add_argument("--predictions", help="prediction dump from infer")
        e.add_argument("--checkpoint", help="run inference with this checkpoint instead of a dump")
        e.add_argument("--ground-truth", action="store_true", help="use the frame labels as predictions")
        if name == "filter":
            e.add_argument("--mode", default="all", help="raw, no_da, no_fg, no_da_fg or all")
            e.add_argument("--voxel-leaf", type=float, default=None, help="centroid downsampling cell in meters")
        else:
            e.add_argument("--no-plots", action="store_true")

    s = sub.add_parser("sweep", parents=[common], help="metrics under input downsampling")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--factor-list", help="comma-separated downsample factors (default 1,2,4,8,16,32)")
    s.add_argument("--no-plots", action="store_true")

    b = sub.add_parser("bench", parents=[common], help="parameter count and inference rate")
    b.add_argument("--checkpoint")
    b.add_argument("--timed", type=int, default=50, help="timed inferences per run")
    b.add_argument("--runs", type=int, default=3)
    return p


def main(argv=None) -> int:
    from .config import ConfigError, load_config, with_overrides

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run = load_config(args.config)
        run = with_overrides(run, seed=args.seed, mode=getattr(args, "mode", None) if args.command == "train" else None)
        if args.seed is None:
            args.seed = run.train.seed
        with _deterministic(args.deterministic):
            COMMANDS[args.command](args, run)
    except (CLIError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
