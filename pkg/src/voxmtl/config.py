"""INI run configuration: one section per pipeline stage, flags override file values.

A bare name such as ``desk`` or ``front_view`` selects a bundled preset.
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field, replace
from importlib import resources

from .network import ModelConfig
from .pointcloud.synthetic import SceneConfig
from .pointcloud.voxel import VoxelGridSpec
from .training.loop import TrainConfig
from .training.losses import TASKS
from .training.weights import MODES

PRESETS = ("front_view", "desk")


class ConfigError(ValueError):
    pass


@dataclass
class InferConfig:
    batch_size: int = 4
    score_threshold: float = 0.1
    nms_iou: float = 0.1


@dataclass
class FilterConfig:
    threshold: float = 0.5
    voxel_leaf: float | None = None


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    # derive anchor sizes and heights from the training labels
    anchors_from_data: bool = True


def _floats(text, n=None, key=""):
    try:
        vals = tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected numbers, got {text!r}") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"{key}: expected {n} values, got {len(vals)}")
    return vals


def _ints(text, n=None, key=""):
    vals = _floats(text, n, key)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"{key}: expected integers, got {text!r}")
    return tuple(int(v) for v in vals)


def parse_weights(text: str) -> dict:
    """``OD=1, FG=0.5, ...`` -> {task: weight}; unspecified tasks default to 1."""
    out = {}
    for item in text.replace(";", ",").split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise ConfigError(f"grid_weights: expected TASK=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        if k.upper() not in TASKS:
            raise ConfigError(f"grid_weights: unknown task {k!r}; tasks are {', '.join(TASKS)}")
        try:
            w = float(v)
        except ValueError as exc:
            raise ConfigError(f"grid_weights: {k} has non-numeric weight {v!r}") from exc
        if not math.isfinite(w) or w < 0:
            raise ConfigError(f"grid_weights: {k} weight must be a finite non-negative number")
        out[k.upper()] = w
    return out


def format_weights(w: dict) -> str:
    return ", ".join(f"{t}={w.get(t, 1.0):g}" for t in TASKS)


_KNOWN = {
    "grid": {"range_min", "range_max", "voxel_size"},
    "model": {"encoder_dims", "decoder_dims", "head_channels", "head_layers", "norm", "dtype", "anchors_from_data"},
    "scene": set(SceneConfig.__dataclass_fields__),
    "train": {"iterations", "batch_size", "lr", "lr_decay", "milestones", "weight_mode", "grid_weights", "warmup",
              "seed", "sigma_lr", "checkpoint_every"},
    "infer": {"batch_size", "score_threshold", "nms_iou"},
    "filter": {"threshold", "voxel_leaf"},
}


def preset_text(name: str) -> str:
    return resources.files("voxmtl").joinpath("presets", f"{name}.ini").read_text()


def load_config(path_or_preset: str | None) -> RunConfig:
    if path_or_preset is None:
        return RunConfig()
    parser = configparser.ConfigParser()
    if path_or_preset in PRESETS and not os.path.exists(path_or_preset):
        parser.read_string(preset_text(path_or_preset), source=path_or_preset)
    else:
        if not os.path.isfile(path_or_preset):
            raise ConfigError(f"config file {path_or_preset!r} not found (presets: {', '.join(PRESETS)})")
        try:
            with open(path_or_preset) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path_or_preset}: {exc}") from exc
    return config_from_parser(parser)


def config_from_parser(parser: configparser.ConfigParser) -> RunConfig:
    for section in parser.sections():
        if section not in _KNOWN:
            raise ConfigError(f"unknown config section [{section}]; known: {', '.join(sorted(_KNOWN))}")
        unknown = set(parser[section]) - _KNOWN[section]
        if unknown:
            raise ConfigError(f"[{section}] has unknown keys: {', '.join(sorted(unknown))}")
    run = RunConfig()
    try:
        model_kw = {}
        if parser.has_section("grid"):
            g = parser["grid"]
            base = VoxelGridSpec()
            model_kw["grid"] = VoxelGridSpec(
                _floats(g["range_min"], 3, "range_min") if "range_min" in g else base.range_min,
                _floats(g["range_max"], 3, "range_max") if "range_max" in g else base.range_max,
                g.getfloat("voxel_size", base.voxel_size),
            )
        if parser.has_section("model"):
            m = parser["model"]
            for key in ("encoder_dims", "decoder_dims", "head_channels", "head_layers"):
                if key in m:
                    model_kw[key] = _ints(m[key], key=key)
            for key in ("norm", "dtype"):
                if key in m:
                    model_kw[key] = m[key].strip()
            run.anchors_from_data = m.getboolean("anchors_from_data", True)
        run.model = ModelConfig(**model_kw)

        if parser.has_section("scene"):
            s = parser["scene"]
            kw = {}
            for key, f in SceneConfig.__dataclass_fields__.items():
                if key not in s:
                    continue
                if key.endswith("_range"):
                    kw[key] = _floats(s[key], 2, key)
                elif f.type in (int, "int"):
                    kw[key] = s.getint(key)
                else:
                    kw[key] = s.getfloat(key)
            run.scene = SceneConfig(**kw)

        if parser.has_section("train"):
            t = parser["train"]
            kw = {}
            for key in ("iterations", "batch_size", "warmup", "seed", "checkpoint_every"):
                if key in t:
                    kw[key] = t.getint(key)
            for key in ("lr", "lr_decay", "sigma_lr"):
                if key in t:
                    kw[key] = t.getfloat(key)
            if "milestones" in t:
                kw["milestones"] = _floats(t["milestones"], key="milestones")
            if "weight_mode" in t:
                kw["weight_mode"] = t["weight_mode"].strip()
            if "grid_weights" in t:
                kw["grid_weights"] = parse_weights(t["grid_weights"])
            run.train = TrainConfig(**kw)
            validate_train(run.train)

        if parser.has_section("infer"):
            i = parser["infer"]
            run.infer = InferConfig(
                i.getint("batch_size", run.infer.batch_size),
                i.getfloat("score_threshold", run.infer.score_threshold),
                i.getfloat("nms_iou", run.infer.nms_iou),
            )
        if parser.has_section("filter"):
            f = parser["filter"]
            leaf = f.get("voxel_leaf", "").strip()
            run.filter = FilterConfig(f.getfloat("threshold", 0.5), float(leaf) if leaf else None)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid configuration value: {exc}") from exc
    return run


def validate_train(t: TrainConfig) -> None:
    if t.weight_mode not in MODES:
        raise ConfigError(f"weight_mode {t.weight_mode!r} unknown; expected one of {', '.join(MODES)}")
    if t.iterations < 1 or t.batch_size < 1:
        raise ConfigError("iterations and batch_size must be positive")
    if t.lr <= 0:
        raise ConfigError("lr must be positive")


def with_overrides(run: RunConfig, seed: int | None = None, mode: str | None = None) -> RunConfig:
    train = run.train
    if seed is not None:
        train = replace(train, seed=seed)
    if mode is not None:
        train = replace(train, weight_mode=mode)
    validate_train(train)
    return replace(run, train=train)
