"""Small conditional U-Net estimating the clean mask signal.

Input is two channels - the noisy sample and the condition mask - plus
sinusoidal embeddings of the diffusion timestep and the prediction
horizon, injected additively into every residual block.  The network
predicts x0 rather than the added noise: with near-binary targets the
x0 head keeps the conditioning input load-bearing at every timestep,
where the noise head leaves it untrained at high t (its gradient there
scales with the vanishing signal) and ancestral sampling then drifts.
Sized for 64x64 grids on a CPU; capacity is a config knob, not a claim.
"""

import math

import torch
import torch.nn as nn


def sinusoidal_embedding(values: torch.Tensor, dim: int) -> torch.Tensor:
    """(B,) scalars -> (B, dim) sin/cos features at geometric frequencies."""
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    half = dim // 2
    freqs = torch.exp(
        torch.arange(half, dtype=torch.float32)
        * (-math.log(10000.0) / max(half - 1, 1)))
    args = values.float().unsqueeze(1) * freqs.unsqueeze(0)
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


def _norm(ch):
    return nn.GroupNorm(min(4, ch), ch)


class _EmbResBlock(nn.Module):
    def __init__(self, ch, emb_dim):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.n1 = _norm(ch)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)
        self.n2 = _norm(ch)
        self.emb = nn.Linear(emb_dim, ch)
        self.act = nn.SiLU()

    def forward(self, x, emb):
        y = self.act(self.n1(self.conv1(x)))
        y = y + self.emb(emb).unsqueeze(-1).unsqueeze(-1)
        y = self.n2(self.conv2(y))
        return self.act(x + y)


class Denoiser(nn.Module):
    """U-Net over (noisy, condition) with two skip levels."""

    def __init__(self, base: int = 16, emb_dim: int = 64):
        super().__init__()
        b = base
        self.emb_dim = emb_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(emb_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))
        self.horizon_mlp = nn.Sequential(
            nn.Linear(emb_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))
        self.stem = nn.Conv2d(2, b, 3, padding=1)
        self.enc1 = _EmbResBlock(b, emb_dim)
        self.down1 = nn.Conv2d(b, 2 * b, 3, stride=2, padding=1)
        self.enc2 = _EmbResBlock(2 * b, emb_dim)
        self.down2 = nn.Conv2d(2 * b, 4 * b, 3, stride=2, padding=1)
        self.mid = _EmbResBlock(4 * b, emb_dim)
        self.up2 = nn.ConvTranspose2d(4 * b, 2 * b, 4, stride=2, padding=1)
        self.dec2 = _EmbResBlock(2 * b, emb_dim)
        self.fuse2 = nn.Conv2d(4 * b, 2 * b, 1)
        self.up1 = nn.ConvTranspose2d(2 * b, b, 4, stride=2, padding=1)
        self.fuse1 = nn.Conv2d(2 * b, b, 1)
        self.dec1 = _EmbResBlock(b, emb_dim)
        self.head = nn.Sequential(_norm(b), nn.SiLU(),
                                  nn.Conv2d(b, 1, 3, padding=1))

    def forward(self, x: torch.Tensor, t: torch.Tensor,
                horizon: torch.Tensor) -> torch.Tensor:
        """x: (B, 2, G, G); t, horizon: (B,) ints -> (B, 1, G, G) signal.

        Output is the clean-mask estimate in signal space (nominally
        [-1, 1]; unclamped here, clamped by the sampler).
        """
        emb = (self.time_mlp(sinusoidal_embedding(t, self.emb_dim))
               + self.horizon_mlp(sinusoidal_embedding(horizon * 25.0,
                                                       self.emb_dim)))
        h1 = self.enc1(self.stem(x), emb)
        h2 = self.enc2(self.down1(h1), emb)
        m = self.mid(self.down2(h2), emb)
        u2 = self.fuse2(torch.cat([self.up2(m), h2], dim=1))
        u2 = self.dec2(u2, emb)
        u1 = self.fuse1(torch.cat([self.up1(u2), h1], dim=1))
        u1 = self.dec1(u1, emb)
        return self.head(u1)
