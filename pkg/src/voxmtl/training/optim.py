from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class StepSchedule:
    """lr = base * decay ** (number of milestones passed); milestones as fractions of total steps."""

    base_lr: float = 0.01
    decay: float = 0.1
    milestones: tuple[float, ...] = (0.6, 0.8)
    total_steps: int = 1000

    def lr(self, step: int) -> float:
        passed = sum(step >= int(round(m * self.total_steps)) for m in self.milestones)
        return self.base_lr * self.decay**passed


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    skipped: int = 0

    def to_arrays(self, prefix: str = "") -> dict:
        out = {f"{prefix}m/{k}": a for k, a in self.m.items()}
        out.update({f"{prefix}v/{k}": a for k, a in self.v.items()})
        out[f"{prefix}counters"] = np.array([self.step, self.skipped], dtype=np.int64)
        return out

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str = "") -> "AdamState":
        st = cls()
        for k, a in arrays.items():
            if k.startswith(prefix + "m/"):
                st.m[k[len(prefix) + 2 :]] = a.copy()
            elif k.startswith(prefix + "v/"):
                st.v[k[len(prefix) + 2 :]] = a.copy()
        if prefix + "counters" in arrays:
            st.step, st.skipped = (int(x) for x in arrays[prefix + "counters"])
        return st


BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> bool:
    """In-place ADAM update with bias correction.

    Returns False (and leaves params and moments untouched) when any gradient is
    non-finite; ``state.skipped`` counts such steps.
    """
    for k, g in grads.items():
        if k not in params:
            raise KeyError(f"gradient for unknown parameter {k!r}")
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[k].shape} for {k!r}")
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            return False
    state.step += 1
    t = state.step
    c1 = 1 - BETA1**t
    c2 = 1 - BETA2**t
    for k, g in grads.items():
        p = params[k]
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= BETA1
        m += (1 - BETA1) * g
        v *= BETA2
        v += (1 - BETA2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)).astype(p.dtype)
    return True
