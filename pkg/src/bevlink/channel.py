"""The analog air interface.

A learned convolutional encoder turns the fused BEV map into a block of
real-valued symbols, normalized to unit average power so that SNR has a
fixed meaning: noise variance is 10^(-snr_db/10) per symbol.  A mirror
decoder restores the feature shape on the server side, and a separate
channel-reducing convolution compresses the result before segmentation.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .rng import torch_gen


class DegenerateInputError(ValueError):
    """An all-zero block cannot be power-normalized."""


@dataclass
class ChannelSymbols:
    """Flattened symbol block plus the shape needed to undo the flattening."""

    values: torch.Tensor  # (B, n)
    feature_shape: tuple  # (C, H, W) the decoder should restore

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("symbol values must be (B, n)")

    @property
    def mean_power(self) -> float:
        return float(self.values.pow(2).mean())


def noise_variance(snr_db: float) -> float:
    """Per-symbol AWGN variance for unit-power transmission."""
    return 10.0 ** (-snr_db / 10.0)


def power_normalize(x: torch.Tensor, eps: float = 1e-20) -> torch.Tensor:
    """Scale each row of (B, n) (or a flat vector) to mean square power 1."""
    flat = x if x.ndim == 2 else x.reshape(1, -1)
    n = flat.shape[1]
    sq = flat.pow(2).sum(dim=1, keepdim=True)
    if bool((sq <= eps).any()):
        raise DegenerateInputError(
            "cannot power-normalize an all-zero symbol block")
    out = flat * torch.sqrt(n / sq)
    return out if x.ndim == 2 else out.reshape(x.shape)


def awgn(symbols, snr_db: float, seed: int):
    """Add white Gaussian noise with variance 10^(-snr_db/10).

    Accepts a raw tensor or ChannelSymbols and returns the same kind.
    Deterministic for a given seed.
    """
    x = symbols.values if isinstance(symbols, ChannelSymbols) else symbols
    sigma = math.sqrt(noise_variance(snr_db))
    noise = torch.empty_like(x).normal_(
        0.0, 1.0, generator=torch_gen(seed, "awgn"))
    y = x + sigma * noise
    if isinstance(symbols, ChannelSymbols):
        return ChannelSymbols(values=y, feature_shape=symbols.feature_shape)
    return y


def _norm(ch):
    return nn.GroupNorm(min(4, ch), ch)


class ChannelEncoder(nn.Module):
    """Four 5x5 conv layers mapping the fused map to normalized symbols.

    The first layer downsamples by 2, so with hidden widths (h1, h2, h3)
    and symbol_channels = round(4 * ratio * in_channels) the symbol count
    is in_channels * G * G * ratio.
    """

    def __init__(self, in_channels: int = 48, ratio: float = 0.25,
                 hidden=(64, 64, 32)):
        super().__init__()
        if not 0.0 < ratio <= 1.0:
            raise ValueError(f"channel ratio must be in (0, 1], got {ratio}")
        if len(hidden) != 3:
            raise ValueError("hidden must name 3 widths (4 layers total)")
        sym = round(4 * ratio * in_channels)
        if sym < 1:
            raise ValueError(f"ratio {ratio} leaves no symbol channels")
        h1, h2, h3 = hidden
        self.in_channels = in_channels
        self.symbol_channels = sym
        self.ratio = ratio
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, h1, 5, stride=2, padding=2),
            _norm(h1), nn.SiLU(),
            nn.Conv2d(h1, h2, 5, padding=2), _norm(h2), nn.SiLU(),
            nn.Conv2d(h2, h3, 5, padding=2), _norm(h3), nn.SiLU(),
            nn.Conv2d(h3, sym, 5, padding=2),
        )

    def forward(self, fused: torch.Tensor) -> ChannelSymbols:
        if fused.shape[1] != self.in_channels:
            raise ValueError(
                f"expected {self.in_channels} input channels, "
                f"got {fused.shape[1]}")
        z = self.net(fused)
        shape = tuple(z.shape[1:])
        flat = z.reshape(z.shape[0], -1)
        return ChannelSymbols(values=power_normalize(flat),
                              feature_shape=shape)


class ChannelDecoder(nn.Module):
    """Mirror of the encoder: symbols back to the fused-map shape."""

    def __init__(self, out_channels: int = 48, ratio: float = 0.25,
                 hidden=(64, 64, 32)):
        super().__init__()
        sym = round(4 * ratio * out_channels)
        h1, h2, h3 = hidden
        self.out_channels = out_channels
        self.symbol_channels = sym
        self.net = nn.Sequential(
            nn.Conv2d(sym, h3, 5, padding=2), _norm(h3), nn.SiLU(),
            nn.Conv2d(h3, h2, 5, padding=2), _norm(h2), nn.SiLU(),
            nn.Conv2d(h2, h1, 5, padding=2), _norm(h1), nn.SiLU(),
            nn.ConvTranspose2d(h1, out_channels, 5, stride=2,
                               padding=2, output_padding=1),
        )

    def forward(self, received: ChannelSymbols) -> torch.Tensor:
        c, h, w = received.feature_shape
        if c != self.symbol_channels:
            raise ValueError(
                f"symbol shape metadata {received.feature_shape} does not "
                f"match decoder input ({self.symbol_channels} channels)")
        z = received.values.reshape(received.values.shape[0], c, h, w)
        return self.net(z)


class BevCompressor(nn.Module):
    """Channel-reducing convolution; lives on the server side."""

    def __init__(self, in_channels: int = 48, out_channels: int = 16):
        super().__init__()
        if out_channels >= in_channels:
            raise ValueError("compressor must reduce the channel count")
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, 32, 3, padding=1), _norm(32), nn.SiLU(),
            nn.Conv2d(32, out_channels, 3, padding=1),
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.net(features)


def make_channel(kind: str):
    """Channel factory for the trained path; the digital baseline is separate."""
    if kind == "awgn":
        return awgn
    if kind == "rayleigh":
        raise NotImplementedError(
            "rayleigh fading is a recognized config value but unimplemented; "
            "equalized fading is approximated by awgn")
    raise ValueError(f"unknown channel kind {kind!r}")
