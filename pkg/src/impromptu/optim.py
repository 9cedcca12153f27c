"""Optimization primitives: Adam, global-norm gradient clipping, warmup schedule."""

from __future__ import annotations

import math

import numpy as np

from .nn import Parameter


class Adam:
    """Bias-corrected adaptive update; moment buffers live on the parameters."""

    def __init__(self, params: list, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        for p in self.params:
            p.opt_state.setdefault("m", np.zeros_like(p.data))
            p.opt_state.setdefault("v", np.zeros_like(p.data))

    def step(self, lr: float = None, lr_overrides: dict = None):
        """Apply one update. lr_overrides maps parameter name -> lr."""
        base = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p in self.params:
            g = p.tensor.grad
            if g is None:
                continue
            m, v = p.opt_state["m"], p.opt_state["v"]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            step_lr = base if lr_overrides is None else lr_overrides.get(p.name, base)
            p.data -= step_lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.tensor.grad = None

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {p.name: p.opt_state["m"].copy() for p in self.params},
            "v": {p.name: p.opt_state["v"].copy() for p in self.params},
        }

    def load_state_dict(self, state: dict):
        self.t = int(state["t"])
        for p in self.params:
            p.opt_state["m"] = np.asarray(state["m"][p.name], dtype=np.float32)
            p.opt_state["v"] = np.asarray(state["v"][p.name], dtype=np.float32)


def clip_grad_norm(params: list, max_norm: float = 1.0) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns the pre-clip norm. Idempotent: a second application is a no-op.
    """
    total = 0.0
    for p in params:
        if p.tensor.grad is not None:
            total += float(np.sum(p.tensor.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = np.float32(max_norm / norm)
        for p in params:
            if p.tensor.grad is not None:
                p.tensor.grad *= scale
    return norm


def lr_schedule(step: int, warmup_steps: int, peak_lr: float) -> float:
    """Linear ramp from 0 to peak over warmup_steps, constant afterwards."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if warmup_steps <= 0 or step >= warmup_steps:
        return peak_lr
    return peak_lr * (step / warmup_steps)
