"""Adam with linear warmup, operating on flat ``{name: Tensor}`` mappings."""

from __future__ import annotations

import numpy as np

from lightnet.numerics import Tensor


class Adam:
    def __init__(self, lr: float = 3e-4, betas=(0.9, 0.98), eps: float = 1e-8, warmup: int = 0):
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        b1, b2 = betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValueError(f"betas must lie in [0, 1), got {betas}")
        self.lr = float(lr)
        self.betas = (float(b1), float(b2))
        self.eps = float(eps)
        self.warmup = int(warmup)
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def rate(self, step: int) -> float:
        """Learning rate for the 1-based ``step``: linear ramp, then constant."""
        if self.warmup > 0 and step <= self.warmup:
            return self.lr * step / self.warmup
        return self.lr

    def step(self, params: dict[str, Tensor], grads: dict[str, Tensor]) -> dict[str, Tensor]:
        """Return updated parameters; the inputs are left untouched."""
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.betas
        lr = self.rate(t)
        c1, c2 = 1 - b1**t, 1 - b2**t
        out = {}
        for name, p in params.items():
            g = grads[name].data
            m = self.m.get(name)
            v = self.v.get(name)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            upd = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            out[name] = Tensor(p.data - upd, requires_grad=True, dtype=p.dtype, name=name)
        return out

    def state(self) -> dict:
        return {"step": self.step_count, "m": dict(self.m), "v": dict(self.v)}

    def load_state(self, step: int, m: dict, v: dict) -> None:
        self.step_count = int(step)
        self.m = {k: np.array(a) for k, a in m.items()}
        self.v = {k: np.array(a) for k, a in v.items()}
