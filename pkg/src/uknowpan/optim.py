"""Adam with decoupled weight decay, and the step learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError


def step_lr(base_lr: float, iteration: int, decay: float, interval: int) -> float:
    """Learning rate after ``iteration`` completed steps: ``base * decay ** (iteration // interval)``."""
    if interval <= 0:
        raise ConfigError(f"lr decay interval must be positive, got {interval}")
    return base_lr * decay ** (iteration // interval)


class AdamW:
    """Adam with weight decay applied directly to the parameters.

    The update order follows the widely used reference: decay first
    (``p -= lr * wd * p``), then the bias-corrected moment step.
    """

    def __init__(self, params: list, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-4):
        if lr < 0 or eps <= 0 or weight_decay < 0 or not all(0 <= b < 1 for b in betas):
            raise ConfigError(f"invalid AdamW settings lr={lr} betas={betas} eps={eps} wd={weight_decay}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            data = p.data * (1.0 - self.lr * self.weight_decay)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            denom = np.sqrt(self.v[i] / bc2) + self.eps
            p.data = (data - (self.lr / bc1) * self.m[i] / denom).astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self, names: list) -> dict:
        out = {}
        for name, m, v in zip(names, self.m, self.v):
            out[f"adam_m/{name}"] = m
            out[f"adam_v/{name}"] = v
        out["adam_step"] = np.array([self.step_count], dtype=np.float64)
        return out

    def load_state_arrays(self, names: list, arrays: dict) -> None:
        for i, name in enumerate(names):
            self.m[i] = np.array(arrays[f"adam_m/{name}"], dtype=self.params[i].data.dtype)
            self.v[i] = np.array(arrays[f"adam_v/{name}"], dtype=self.params[i].data.dtype)
        step = float(arrays["adam_step"][0])
        if not math.isfinite(step) or step < 0:
            raise ConfigError(f"corrupt optimizer step count {step}")
        self.step_count = int(step)
