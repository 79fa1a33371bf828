"""Occupancy segmentation head over compressed BEV features."""

import torch
import torch.nn as nn


def _norm(ch):
    return nn.GroupNorm(min(4, ch), ch)


class _ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.n1 = _norm(ch)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)
        self.n2 = _norm(ch)
        self.act = nn.SiLU()

    def forward(self, x):
        y = self.act(self.n1(self.conv1(x)))
        y = self.n2(self.conv2(y))
        return self.act(x + y)


class SegmentationDecoder(nn.Module):
    """Residual conv decoder producing per-cell occupancy probabilities.

    Four residual blocks at a fixed width; the output is (B, G, G) in
    [0, 1] via a sigmoid.  Rejects features whose spatial size does not
    match the grid it was built for.
    """

    def __init__(self, in_channels: int = 16, width: int = 32,
                 blocks: int = 4, grid_size: int = 64):
        super().__init__()
        self.grid_size = grid_size
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, padding=1), _norm(width), nn.SiLU())
        self.blocks = nn.Sequential(*[_ResBlock(width) for _ in range(blocks)])
        self.head = nn.Conv2d(width, 1, 3, padding=1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if tuple(features.shape[-2:]) != (self.grid_size, self.grid_size):
            raise ValueError(
                f"features are {tuple(features.shape[-2:])}, decoder was "
                f"built for {self.grid_size}x{self.grid_size}")
        logits = self.head(self.blocks(self.stem(features)))
        return torch.sigmoid(logits).squeeze(1)

    def logits(self, features: torch.Tensor) -> torch.Tensor:
        """Pre-sigmoid output, for numerically stable training losses."""
        if tuple(features.shape[-2:]) != (self.grid_size, self.grid_size):
            raise ValueError(
                f"features are {tuple(features.shape[-2:])}, decoder was "
                f"built for {self.grid_size}x{self.grid_size}")
        return self.head(self.blocks(self.stem(features))).squeeze(1)
