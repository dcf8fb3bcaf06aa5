"""Loss-weight strategies: equal, balanced, grid, adaptive, adaptive+grid."""
from __future__ import annotations

import numpy as np

from .losses import TASKS, mtl_loss_adaptive, mtl_loss_fixed

MODES = ("equal", "balanced", "grid", "adaptive", "adaptive+grid")


class LossWeighting:
    """Turns the six task losses into one scalar plus per-task loss coefficients.

    Adaptive modes own learnable log-variances (``log_var``) that the caller
    optimizes alongside the network parameters.
    """

    def __init__(self, mode: str = "equal", grid_weights: dict | None = None, warmup: int = 100):
        if mode not in MODES:
            raise ValueError(f"unknown loss-weight mode {mode!r}; expected one of {', '.join(MODES)}")
        if mode in ("grid", "adaptive+grid") and grid_weights is None:
            raise ValueError(f"mode {mode!r} needs grid weights")
        if warmup < 1:
            raise ValueError("balanced warmup window must be at least one step")
        gw = {t: float((grid_weights or {}).get(t, 1.0)) for t in TASKS}
        if any(w < 0 for w in gw.values()):
            raise ValueError("loss weights must be non-negative")
        self.mode = mode
        self.grid_weights = gw
        self.warmup = int(warmup)
        self.log_var = np.zeros(len(TASKS))
        self.loss_sum = np.zeros(len(TASKS))
        self.observed = 0
        self.frozen = None  # balanced weights once the warmup window is full

    @property
    def adaptive(self) -> bool:
        return self.mode.startswith("adaptive")

    @property
    def sigma2(self) -> np.ndarray:
        return np.exp(self.log_var)

    def weights(self) -> dict:
        """Current fixed weights (for adaptive modes: the weights folded into L_i)."""
        if self.mode == "balanced":
            if self.frozen is None:
                return {t: 1.0 for t in TASKS}
            return {t: float(w) for t, w in zip(TASKS, self.frozen)}
        if self.mode in ("grid", "adaptive+grid"):
            return dict(self.grid_weights)
        return {t: 1.0 for t in TASKS}

    def observe(self, task_losses: dict) -> None:
        """Feed one step's losses; balanced mode freezes 1/mean after the warmup window."""
        if self.mode != "balanced" or self.frozen is not None:
            return
        self.loss_sum += np.array([task_losses[t] for t in TASKS])
        self.observed += 1
        if self.observed >= self.warmup:
            mean = self.loss_sum / self.observed
            self.frozen = 1.0 / np.maximum(mean, 1e-12)

    def aggregate(self, task_losses: dict):
        """Returns (total, coefficient per task, gradient w.r.t. log_var or None)."""
        if self.adaptive:
            return mtl_loss_adaptive(task_losses, self.log_var, self.weights())
        total, coeff = mtl_loss_fixed(task_losses, self.weights())
        return total, coeff, None

    # -- persistence ---------------------------------------------------------

    def state(self) -> dict:
        st = {
            "mode": self.mode,
            "warmup": self.warmup,
            "observed": self.observed,
            "grid_weights": [self.grid_weights[t] for t in TASKS],
            "log_var": self.log_var.copy(),
            "loss_sum": self.loss_sum.copy(),
        }
        if self.frozen is not None:
            st["frozen"] = self.frozen.copy()
        return st

    @classmethod
    def from_state(cls, st: dict) -> "LossWeighting":
        grid = dict(zip(TASKS, (float(w) for w in st["grid_weights"])))
        lw = cls(st["mode"], grid, int(st["warmup"]))
        lw.observed = int(st["observed"])
        lw.log_var = np.asarray(st["log_var"], dtype=np.float64).copy()
        lw.loss_sum = np.asarray(st["loss_sum"], dtype=np.float64).copy()
        if "frozen" in st:
            lw.frozen = np.asarray(st["frozen"], dtype=np.float64).copy()
        return lw
