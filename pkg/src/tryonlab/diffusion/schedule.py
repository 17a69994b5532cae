"""Forward-process noise schedule and closed-form latent recovery.

alpha_bars[t] is the cumulative product of (1 - beta_s) for s = 1..t, with
alpha_bars[0] = 1 (empty product). The beta sequence itself follows the
standard linear ramp that *increases* from beta_start to beta_end, which is
what makes alpha_bar strictly decreasing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import RangeViolation, ShapeMismatch, TimestepOutOfRange


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray        # (T,) float64, betas[i] is beta_{i+1}
    alpha_bars: np.ndarray   # (T+1,) float64, alpha_bars[0] == 1

    def __post_init__(self):
        if self.betas.shape != (self.T,) or self.alpha_bars.shape != (self.T + 1,):
            raise ValueError("schedule arrays inconsistent with T")
        if self.alpha_bars[0] != 1.0:
            raise ValueError("alpha_bar at t=0 must be the empty product 1")
        if not (np.diff(self.alpha_bars) < 0).all():
            raise ValueError("alpha_bar must be strictly decreasing")
        if not ((self.alpha_bars > 0) & (self.alpha_bars <= 1)).all():
            raise ValueError("alpha_bar must stay in (0, 1]")

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise TimestepOutOfRange(f"t={t} outside 0..{self.T}")
        return float(self.alpha_bars[t])


def make_schedule(T: int = 1000, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta ramp with precomputed cumulative alpha_bar."""
    if T < 1:
        raise RangeViolation(f"T must be >= 1, got {T}")
    for name, val in (("beta_start", beta_start), ("beta_end", beta_end)):
        if not 0.0 < val < 1.0:
            raise RangeViolation(f"{name} must lie in (0, 1), got {val}")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bars = np.concatenate(([1.0], np.cumprod(1.0 - betas)))
    return NoiseSchedule(T=T, betas=betas, alpha_bars=alpha_bars)


def _gather_alpha_bar(schedule: NoiseSchedule, t, like: torch.Tensor,
                      t_min: int) -> torch.Tensor:
    """alpha_bar at t, broadcast against a (B, C, h, w) or (C, h, w) tensor."""
    t_arr = torch.as_tensor(t, dtype=torch.long)
    if (t_arr < t_min).any() or (t_arr > schedule.T).any():
        raise TimestepOutOfRange(f"t={t} outside {t_min}..{schedule.T}")
    ab = torch.from_numpy(schedule.alpha_bars).to(like.dtype)[t_arr]
    if ab.ndim == 0:
        return ab
    return ab.view(-1, *([1] * (like.ndim - 1)))


def add_noise(z0: torch.Tensor, t, eps: torch.Tensor,
              schedule: NoiseSchedule) -> torch.Tensor:
    """z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps, for 1 <= t <= T.

    t may be a scalar or a batch-length vector when z0 is batched.
    """
    if eps.shape != z0.shape:
        raise ShapeMismatch(f"noise shape {tuple(eps.shape)} != latent {tuple(z0.shape)}")
    ab = _gather_alpha_bar(schedule, t, z0, t_min=1)
    return torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * eps


def predict_z0(z_t: torch.Tensor, eps_hat: torch.Tensor, t,
               schedule: NoiseSchedule) -> torch.Tensor:
    """Invert the forward process: (z_t - sqrt(1 - ab) eps_hat) / sqrt(ab).

    Accepts t = 0 (alpha_bar = 1), where the result is z_t itself.
    """
    if eps_hat.shape != z_t.shape:
        raise ShapeMismatch(f"noise shape {tuple(eps_hat.shape)} != latent {tuple(z_t.shape)}")
    ab = _gather_alpha_bar(schedule, t, z_t, t_min=0)
    return (z_t - torch.sqrt(1.0 - ab) * eps_hat) / torch.sqrt(ab)
