"""Denoising-diffusion schedule, forward process, and ancestral sampler.

Masks live in [0, 1]; diffusion-space tensors live in [-1, 1] via the
affine map x0 = 2*mask - 1.  The schedule is linear in beta, rescaled so
that shortening the step count keeps the terminal state near pure noise.
The sampler is conditioned on a (possibly degraded) mask channel plus
embeddings of the diffusion timestep and the prediction horizon.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .rng import torch_gen

HORIZONS = (0, 1, 2, 3)  # h=0 refines the current frame; h>=1 predicts


@dataclass
class DiffusionSchedule:
    steps: int
    betas: np.ndarray  # (T,), strictly increasing in (0, 1)
    alpha_bars: np.ndarray = field(init=False)  # cumulative products

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if self.betas.shape != (self.steps,):
            raise ValueError(
                f"need {self.steps} betas, got shape {self.betas.shape}")
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ValueError("betas must lie strictly inside (0, 1)")
        if np.any(np.diff(self.betas) <= 0):
            raise ValueError("betas must be strictly increasing")
        self.alpha_bars = np.cumprod(1.0 - self.betas)
        if self.alpha_bars[-1] >= 0.05:
            raise ValueError(
                f"terminal alpha-bar {self.alpha_bars[-1]:.4f} >= 0.05; "
                "the forward process must end near pure noise")

    def alpha_bar(self, t: int) -> float:
        """Cumulative alpha for 1-based step t."""
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def _check_t(self, t: int):
        if not 1 <= t <= self.steps:
            raise ValueError(f"t must be in [1, {self.steps}], got {t}")


def linear_schedule(steps: int = 100, beta_min: float = 1e-4,
                    beta_max: float = 0.02,
                    reference_steps: int = 1000) -> DiffusionSchedule:
    """Linear betas scaled so total noise is step-count independent.

    The (beta_min, beta_max) defaults describe a reference_steps-long
    schedule; running fewer steps multiplies both ends by
    reference_steps/steps, preserving the integrated variance.
    """
    if steps < 2:
        raise ValueError("need at least 2 steps")
    scale = reference_steps / steps
    betas = np.linspace(beta_min * scale, beta_max * scale, steps)
    return DiffusionSchedule(steps=steps, betas=betas)


def mask_to_diffusion(mask: torch.Tensor) -> torch.Tensor:
    return mask * 2.0 - 1.0


def diffusion_to_mask(x: torch.Tensor) -> torch.Tensor:
    return ((x + 1.0) / 2.0).clamp(0.0, 1.0)


def diffusion_forward(mask: torch.Tensor, t: int,
                      schedule: DiffusionSchedule, seed: int) -> torch.Tensor:
    """Noised sample x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    ab = schedule.alpha_bar(t)
    x0 = mask_to_diffusion(mask)
    eps = torch.empty_like(x0).normal_(
        0.0, 1.0, generator=torch_gen(seed, "fwd", t))
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def _as_batch(mask: torch.Tensor):
    if mask.ndim == 2:
        return mask.unsqueeze(0), True
    if mask.ndim == 3:
        return mask, False
    raise ValueError("mask must be (G, G) or (B, G, G)")


def sample(denoiser, condition: torch.Tensor, horizon,
           schedule: DiffusionSchedule, seed: int) -> torch.Tensor:
    """Ancestral sampling from pure noise, conditioned on a mask.

    condition: (G, G) or (B, G, G) in [0, 1]; horizon: int or (B,) ints.
    Each reverse step forms the posterior mean from the denoiser's
    clean-signal estimate, clamped to the data range.  Deterministic for
    fixed (weights, condition, horizon, seed).  Output has the
    condition's shape, values in [0, 1].
    """
    cond, squeeze = _as_batch(condition)
    b, g, _ = cond.shape
    hs = torch.as_tensor(horizon, dtype=torch.long)
    if hs.ndim == 0:
        hs = hs.expand(b).clone()
    if hs.shape != (b,):
        raise ValueError(f"horizon must be scalar or ({b},)")
    for h in hs.tolist():
        if h not in HORIZONS:
            raise ValueError(f"horizon must be one of {HORIZONS}, got {h}")
    gen = torch_gen(seed, "sample")
    cond_ch = mask_to_diffusion(cond).unsqueeze(1)
    x = torch.empty((b, 1, g, g)).normal_(0.0, 1.0, generator=gen)
    betas = schedule.betas
    abars = schedule.alpha_bars
    with torch.no_grad():
        for t in range(schedule.steps, 0, -1):
            beta = betas[t - 1]
            ab = abars[t - 1]
            ab_prev = abars[t - 2] if t > 1 else 1.0
            ts = torch.full((b,), t, dtype=torch.long)
            x0_hat = denoiser(torch.cat([x, cond_ch], dim=1),
                              ts, hs).clamp(-1.0, 1.0)
            mean = (math.sqrt(ab_prev) * beta / (1.0 - ab)) * x0_hat \
                + (math.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab)) * x
            if t > 1:
                var = beta * (1.0 - ab_prev) / (1.0 - ab)
                noise = torch.empty_like(x).normal_(0.0, 1.0, generator=gen)
                x = mean + math.sqrt(var) * noise
            else:
                x = mean
    out = diffusion_to_mask(x.squeeze(1))
    return out.squeeze(0) if squeeze else out


def diffusion_refine(denoiser, condition: torch.Tensor, horizon: int,
                     schedule: DiffusionSchedule, seed: int) -> torch.Tensor:
    """Refine (h=0) or predict (h>=1) from a decoded mask condition."""
    if int(horizon) not in HORIZONS:
        raise ValueError(f"horizon must be one of {HORIZONS}, got {horizon}")
    return sample(denoiser, condition, int(horizon), schedule, seed)


def predict_future(denoiser, condition: torch.Tensor, horizon: int,
                   schedule: DiffusionSchedule, seed: int) -> torch.Tensor:
    """Estimate the mask horizon steps ahead; h=0 is just refinement."""
    h = int(horizon)
    if h not in HORIZONS:
        raise ValueError(f"horizon must be one of {HORIZONS}, got {horizon}")
    return sample(denoiser, condition, h, schedule, seed)
