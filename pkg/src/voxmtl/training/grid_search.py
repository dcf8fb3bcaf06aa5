"""Loss-weight search over a lattice, scored by validation detection mAP."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

from .losses import TASKS

DEFAULT_LATTICE = (0.25, 0.5, 1.0, 2.0)
SEARCHED_TASKS = tuple(t for t in TASKS if t != "OD")


@dataclass
class GridSearchResult:
    best_weights: dict
    best_score: float
    trials: list = field(default_factory=list)  # (weights dict, score) in evaluation order


def _key(w: dict):
    return tuple(w[t] for t in TASKS)


def search_weights(score_fn, lattice=DEFAULT_LATTICE, strategy: str = "coordinate", tasks=SEARCHED_TASKS) -> GridSearchResult:
    """Maximizes ``score_fn(weights)``; OD (and any task not in ``tasks``) stays at 1.

    ``coordinate`` sweeps one task at a time from the all-ones start, keeping
    the best value before moving on; ``exhaustive`` scores the full product.
    Ties keep the configuration evaluated first.
    """
    if strategy not in ("coordinate", "exhaustive"):
        raise ValueError(f"unknown search strategy {strategy!r}")
    lattice = tuple(float(v) for v in lattice)
    if not lattice or min(lattice) < 0:
        raise ValueError("lattice must hold non-negative weights")
    cache: dict = {}
    trials: list = []

    def score(w):
        k = _key(w)
        if k not in cache:
            cache[k] = float(score_fn(dict(w)))
            trials.append((dict(w), cache[k]))
        return cache[k]

    base = {t: 1.0 for t in TASKS}
    if strategy == "exhaustive":
        best_w, best_s = None, float("-inf")
        for combo in itertools.product(lattice, repeat=len(tasks)):
            w = dict(base)
            w.update(zip(tasks, combo))
            s = score(w)
            if s > best_s:
                best_w, best_s = w, s
        return GridSearchResult(best_w, best_s, trials)

    best_w = dict(base)
    best_s = score(best_w)
    for t in tasks:
        for v in lattice:
            w = dict(best_w)
            w[t] = v
            s = score(w)
            if s > best_s:
                best_w, best_s = w, s
    return GridSearchResult(best_w, best_s, trials)


def validation_map_score(train_frames, val_frames, model_config, train_config, init_seed: int = 0):
    """Score function: train from scratch with the given fixed weights, return validation mAP_BEV (0 if undefined)."""
    from ..evaluation.report import evaluate_detection
    from ..inference import infer
    from ..network import Model
    from .loop import prepare_frames, train

    prepared = prepare_frames(train_frames, model_config)

    def score(weights):
        model = Model.init(init_seed, model_config)
        cfg = replace(train_config, weight_mode="grid", grid_weights=weights)
        train(None, model, cfg, prepared=prepared)
        rep = evaluate_detection(infer(model, val_frames), val_frames, model_config.classes)
        v = rep.get("OD", "mAP_BEV")
        return 0.0 if v is None else v

    return score
