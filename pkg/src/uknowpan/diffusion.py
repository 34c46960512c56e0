"""Noise schedule, forward noising and the deterministic DDIM sampler.

Networks predict the clean residual ``x0`` directly; the sampler recovers
the implied noise from it at every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, ContractError, NumericError
from .rng import make_rng
from .tensor import Tensor, no_grad

DEFAULT_T = 500
DEFAULT_DDIM_STEPS = 25
BETA_START = 1e-4
BETA_END = 0.02
# 2 * (hrms - lrms_up) with both images in [0, 1] never leaves [-2, 2]
X0_CLIP = 2.0


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray
    ddim_steps: tuple = field(default=())

    def abar(self, t) -> np.ndarray:
        """``alpha_bar`` at 1-based step(s) ``t``; step 0 maps to 1."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise ContractError(f"timestep {t} outside [0, {self.T}]")
        table = np.concatenate([[1.0], self.alpha_bar])
        return table[t]


def make_schedule(T: int = DEFAULT_T, beta_start: float = BETA_START, beta_end: float = BETA_END,
                  ddim_count: int = DEFAULT_DDIM_STEPS) -> NoiseSchedule:
    if T < 1 or ddim_count < 1:
        raise ConfigError(f"need T >= 1 and ddim_count >= 1, got T={T}, ddim_count={ddim_count}")
    if ddim_count > T:
        raise ConfigError(f"ddim_count={ddim_count} exceeds T={T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    alpha_bar = np.cumprod(1.0 - beta)
    stride = T // ddim_count
    steps = tuple(int(T - stride * j) for j in reversed(range(ddim_count)))
    return NoiseSchedule(T=T, beta=beta, alpha_bar=alpha_bar, ddim_steps=steps)


def _per_sample(values: np.ndarray, ndim: int, dtype) -> np.ndarray:
    values = np.asarray(values, dtype=dtype)
    if values.ndim == 0:
        return values
    return values.reshape(values.shape + (1,) * (ndim - values.ndim))


def q_sample(x0, t, eps, sched: NoiseSchedule):
    """``sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps``.

    ``t`` is a scalar or one step per leading-axis sample. Works on arrays
    and tensors alike (tensors stay differentiable).
    """
    x0_arr = x0.data if isinstance(x0, Tensor) else np.asarray(x0)
    eps_arr = eps.data if isinstance(eps, Tensor) else np.asarray(eps)
    if x0_arr.shape != eps_arr.shape:
        raise ContractError(f"q_sample: x0 {x0_arr.shape} vs eps {eps_arr.shape}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > sched.T):
        raise ContractError(f"q_sample: timestep {t} outside [1, {sched.T}]")
    ab = _per_sample(sched.abar(t_arr), x0_arr.ndim, x0_arr.dtype)
    a, b = np.sqrt(ab), np.sqrt(1.0 - ab)
    if isinstance(x0, Tensor) or isinstance(eps, Tensor):
        return x0 * Tensor(a) + eps * Tensor(b) if np.ndim(a) else x0 * float(a) + eps * float(b)
    return a * x0_arr + b * eps_arr


def ddim_step(x_t: np.ndarray, x0_hat: np.ndarray, t: int, t_prev: int, sched: NoiseSchedule) -> np.ndarray:
    """One deterministic (eta = 0) DDIM update from ``t`` to ``t_prev``."""
    if not t > t_prev >= 0:
        raise ContractError(f"ddim_step needs t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    ab_t = float(sched.abar(t))
    ab_prev = float(sched.abar(t_prev))
    if ab_t >= 1.0:
        raise NumericError(f"ddim_step: alpha_bar at t={t} is 1; implied noise is undefined")
    eps_hat = (x_t - np.sqrt(ab_t) * x0_hat) / np.sqrt(1.0 - ab_t)
    if t_prev == 0:
        return np.array(x0_hat, copy=True)
    return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_hat


def _as_array(v) -> np.ndarray:
    return v.data if isinstance(v, Tensor) else np.asarray(v)


def sample(model: Callable, pan, lrms_up, sched: NoiseSchedule, seed: int, residual_scale: float = 1.0,
           clip: float | None = X0_CLIP, return_uncertainty: bool = False):
    """Generate an HRMS estimate by walking ``sched.ddim_steps`` in reverse.

    ``model(x_t, pan, lrms_up, t)`` returns the residual prediction or a
    ``(x0_hat, theta_hat, ...)`` tuple. The residual lives in a space scaled by
    ``residual_scale`` relative to image units; the result is
    ``lrms_up + x0 / residual_scale``. With ``return_uncertainty`` the
    uncertainty map of the final network call is returned as well.
    """
    pan_a, up_a = _as_array(pan), _as_array(lrms_up)
    dtype = up_a.dtype
    rng = make_rng(seed, "ddim-init")
    x = rng.standard_normal(up_a.shape).astype(dtype, copy=False)
    steps = list(sched.ddim_steps)
    theta = None
    for i in range(len(steps) - 1, -1, -1):
        t = steps[i]
        t_prev = steps[i - 1] if i > 0 else 0
        with no_grad():
            out = model(Tensor(x), Tensor(pan_a), Tensor(up_a), t)
        if isinstance(out, (tuple, list)):
            x0_hat = _as_array(out[0])
            theta = _as_array(out[1]) if len(out) > 1 and out[1] is not None else None
        else:
            x0_hat = _as_array(out)
        if not np.all(np.isfinite(x0_hat)):
            raise NumericError(f"sample: non-finite model output at timestep {t}")
        if clip is not None:
            x0_hat = np.clip(x0_hat, -clip, clip)
        x = ddim_step(x, x0_hat, t, t_prev, sched).astype(dtype, copy=False)
    hrms = up_a + x / residual_scale
    if return_uncertainty:
        return hrms, theta
    return hrms
