"""Linear-beta diffusion schedule and the closed-form forward process."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ConfigError, ValidationError


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray  # betas[t - 1] for t = 1..T

    @property
    def T(self) -> int:
        return len(self.betas)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_lo": float(self.betas[0]), "beta_hi": float(self.betas[-1])}


def make_schedule(T: int, beta_lo: float = 1e-4, beta_hi: float = 0.02) -> DiffusionSchedule:
    if int(T) != T or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T}")
    if not 0 < beta_lo <= beta_hi < 1:
        raise ConfigError(f"need 0 < beta_lo <= beta_hi < 1, got ({beta_lo}, {beta_hi})")
    betas = np.linspace(beta_lo, beta_hi, int(T), dtype=np.float64)
    return DiffusionSchedule(betas)


def forward_diffuse(x0, t, eps, sched: DiffusionSchedule):
    """x_t = sqrt(alpha_bar[t]) x0 + sqrt(1 - alpha_bar[t]) eps.

    ``t`` is 1-based; a scalar or one step per leading-axis item. Works on
    numpy arrays and torch tensors alike.
    """
    ab = sched.alpha_bar
    if torch.is_tensor(x0):
        t = torch.as_tensor(t, device=x0.device)
        if torch.any(t < 1) or torch.any(t > sched.T):
            raise ValidationError(f"diffusion step out of range 1..{sched.T}")
        a = torch.as_tensor(ab, dtype=torch.float64, device=x0.device)[t.long() - 1]
        shape = (-1,) + (1,) * (x0.dim() - 1) if a.dim() else ()
        s1 = a.sqrt().to(x0.dtype).reshape(shape)
        s2 = (1.0 - a).sqrt().to(x0.dtype).reshape(shape)
        if eps.shape != x0.shape:
            raise ValidationError(f"noise shape {tuple(eps.shape)} != signal shape {tuple(x0.shape)}")
        return s1 * x0 + s2 * eps
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if eps.shape != x0.shape:
        raise ValidationError(f"noise shape {eps.shape} != signal shape {x0.shape}")
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > sched.T):
        raise ValidationError(f"diffusion step out of range 1..{sched.T}")
    a = ab[t.astype(int) - 1]
    if a.ndim:
        a = a.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps
