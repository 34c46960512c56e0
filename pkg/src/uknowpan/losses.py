"""Uncertainty-driven diffusion loss and the three-part distillation objective.

All L1 norms are taken as means over elements, so loss magnitudes do not
depend on patch size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor

THETA_FLOOR = 1e-3


@dataclass
class LossWeights:
    lambda_s: float = 0.1
    lambda_f: float = 0.001
    tau: float = 1.0
    gamma: float = 1e-3
    alpha: tuple = field(default=())  # per-tap weights; empty means 1 for every tap

    def __post_init__(self):
        self.alpha = tuple(float(a) for a in self.alpha)
        values = [self.lambda_s, self.lambda_f, self.tau, self.gamma, *self.alpha]
        if any(not np.isfinite(v) or v < 0 for v in values):
            raise ConfigError(f"loss weights must be finite and >= 0, got {self}")

    def tap_weight(self, i: int, n: int) -> float:
        if not self.alpha:
            return 1.0
        if len(self.alpha) != n:
            raise ContractError(f"{len(self.alpha)} alpha weights for {n} feature taps")
        return self.alpha[i]


def _same_shape(*tensors: Tensor) -> None:
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"loss inputs differ in shape: {[t.shape for t in tensors]}")


def _detached(x) -> Tensor:
    return Tensor(x.data if isinstance(x, Tensor) else np.asarray(x))


def u_diff_loss(x0_hat: Tensor, x0: Tensor, theta_hat: Tensor, floor: float = THETA_FLOOR) -> Tensor:
    """``mean(|x0_hat - x0| / (2 theta) + log(theta) / 2)``."""
    x0_hat, x0, theta_hat = T.as_tensor(x0_hat), T.as_tensor(x0), T.as_tensor(theta_hat)
    _same_shape(x0_hat, x0, theta_hat)
    if np.min(theta_hat.data) < floor * (1 - 1e-6):
        raise ContractError(f"theta_hat minimum {np.min(theta_hat.data):.3g} is below the floor {floor}")
    err = T.tabs(x0_hat - x0)
    return T.mean(err / (2.0 * theta_hat) + 0.5 * T.log(theta_hat))


def hard_loss(x0_tilde: Tensor, x0, theta_hat, w: LossWeights) -> Tensor:
    """``mean((tau + theta) |x0_tilde - x0|)`` with theta treated as a constant."""
    x0_tilde = T.as_tensor(x0_tilde)
    x0, theta = _detached(x0), _detached(theta_hat)
    _same_shape(x0_tilde, x0, theta)
    weight = Tensor((w.tau + theta.data).astype(x0_tilde.dtype, copy=False))
    return T.mean(weight * T.tabs(x0_tilde - x0))


def soft_loss(x0_tilde: Tensor, x0_hat, theta_hat, w: LossWeights) -> Tensor:
    """``mean(max(tau - theta, 0) |x0_tilde - x0_hat|)``; teacher outputs are constants."""
    x0_tilde = T.as_tensor(x0_tilde)
    x0_hat, theta = _detached(x0_hat), _detached(theta_hat)
    _same_shape(x0_tilde, x0_hat, theta)
    weight = Tensor(np.maximum(w.tau - theta.data, 0.0).astype(x0_tilde.dtype, copy=False))
    return T.mean(weight * T.tabs(x0_tilde - x0_hat))


def feat_loss(student_feats: list, teacher_feats: list, w: LossWeights) -> Tensor:
    """``sum_i alpha_i sqrt(mean|f_i - s_i|^2 + gamma)``."""
    if len(student_feats) != len(teacher_feats):
        raise ContractError(f"{len(student_feats)} student taps vs {len(teacher_feats)} teacher taps")
    if not student_feats:
        raise ContractError("feat_loss needs at least one feature tap")
    total = None
    n = len(student_feats)
    for i, (s, f) in enumerate(zip(student_feats, teacher_feats)):
        s, f = T.as_tensor(s), _detached(f)
        _same_shape(s, f)
        d = T.mean(T.tabs(s - f))
        term = d * d + w.gamma
        # sqrt(0) has an unbounded derivative; only reachable with gamma == 0 and identical taps
        term = T.sqrt(term) if np.all(term.data > 0) else Tensor(np.zeros((), dtype=term.dtype))
        term = term * w.tap_weight(i, n)
        total = term if total is None else total + term
    return total


def u_know_loss(x0_tilde: Tensor, x0, x0_hat, theta_hat, student_feats: list, teacher_feats: list,
                w: LossWeights) -> tuple:
    """``hard + lambda_s soft + lambda_f feat``; returns ``(total, parts)``."""
    hard = hard_loss(x0_tilde, x0, theta_hat, w)
    soft = soft_loss(x0_tilde, x0_hat, theta_hat, w)
    feat = feat_loss(student_feats, teacher_feats, w)
    total = hard + w.lambda_s * soft + w.lambda_f * feat
    return total, {"hard": hard.item(), "soft": soft.item(), "feat": feat.item()}


def l1_loss(x0_tilde: Tensor, x0) -> Tensor:
    x0_tilde, x0 = T.as_tensor(x0_tilde), _detached(x0)
    _same_shape(x0_tilde, x0)
    return T.mean(T.tabs(x0_tilde - x0))
