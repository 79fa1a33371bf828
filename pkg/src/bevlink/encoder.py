"""Camera/radar feature extraction and BEV fusion.

The image branch runs a shared backbone over every view and lifts the
features onto the grid; the radar branch scatters points into pillar
statistics and applies a small convolution.  Fusion is concatenation by
default, with the simple alternatives implemented and the exotic ones
(ensemble, mixture-of-experts) recognized but deliberately absent.
"""

import enum
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .bev_projection import GroundPlaneProjector
from .cameras import CameraRig
from .grid import BevGridSpec


@dataclass
class BevFeatureMap:
    """A feature tensor tied to the grid it lives on."""

    values: torch.Tensor  # (C, G, G) or (B, C, G, G)
    grid: BevGridSpec

    def __post_init__(self):
        if self.values.ndim not in (3, 4):
            raise ValueError("values must be (C, G, G) or (B, C, G, G)")
        g = self.grid.resolution
        if tuple(self.values.shape[-2:]) != (g, g):
            raise ValueError(
                f"spatial shape {tuple(self.values.shape[-2:])} does not "
                f"match grid resolution {g}"
            )
        if not torch.isfinite(self.values).all():
            raise ValueError("feature map contains non-finite values")

    @property
    def channels(self) -> int:
        return self.values.shape[-3]


class FusionStrategy(enum.Enum):
    ADDITION = "addition"
    AVERAGING = "averaging"
    CONCATENATION = "concatenation"
    # named for completeness; using them is an explicit error
    ENSEMBLE = "ensemble"
    MIXTURE_OF_EXPERTS = "mixture-of-experts"


def fuse(bev_a: BevFeatureMap, bev_b: BevFeatureMap,
         strategy: FusionStrategy) -> BevFeatureMap:
    """Combine two BEV maps living on the same grid."""
    if isinstance(strategy, str):
        strategy = FusionStrategy(strategy)
    if bev_a.grid != bev_b.grid:
        raise ValueError("cannot fuse maps with different grid specs")
    if strategy in (FusionStrategy.ENSEMBLE, FusionStrategy.MIXTURE_OF_EXPERTS):
        raise NotImplementedError(f"{strategy.value} fusion is not implemented")
    if strategy is FusionStrategy.CONCATENATION:
        out = torch.cat([bev_a.values, bev_b.values], dim=-3)
    else:
        if bev_a.channels != bev_b.channels:
            raise ValueError(
                f"{strategy.value} needs equal channel counts, "
                f"got {bev_a.channels} and {bev_b.channels}"
            )
        out = bev_a.values + bev_b.values
        if strategy is FusionStrategy.AVERAGING:
            out = out / 2.0
    return BevFeatureMap(values=out, grid=bev_a.grid)


def _norm(ch: int) -> nn.GroupNorm:
    # GroupNorm keeps train/eval identical, which the freezing story relies on
    return nn.GroupNorm(min(4, ch), ch)


class SmallCnnBackbone(nn.Module):
    """Four conv blocks, stride 8 overall; the desk-scale default."""

    stride = 8

    def __init__(self, out_channels: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), _norm(16), nn.SiLU(),
            nn.Conv2d(16, 24, 3, stride=2, padding=1), _norm(24), nn.SiLU(),
            nn.Conv2d(24, 32, 3, stride=2, padding=1), _norm(32), nn.SiLU(),
            nn.Conv2d(32, out_channels, 3, padding=1),
        )

    def forward(self, x):
        return self.net(x)


class _BasicBlock(nn.Module):
    def __init__(self, c_in, c_out, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.n1 = _norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.n2 = _norm(c_out)
        self.act = nn.SiLU()
        self.skip = (nn.Identity() if stride == 1 and c_in == c_out
                     else nn.Conv2d(c_in, c_out, 1, stride=stride))

    def forward(self, x):
        y = self.act(self.n1(self.conv1(x)))
        y = self.n2(self.conv2(y))
        return self.act(y + self.skip(x))


class ResidualBackbone(nn.Module):
    """Deeper residual variant for the real-data path; still stride 8."""

    stride = 8

    def __init__(self, out_channels: int = 32):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, 32, 3, stride=2, padding=1), _norm(32), nn.SiLU())
        self.stage1 = nn.Sequential(_BasicBlock(32, 32), _BasicBlock(32, 32))
        self.stage2 = nn.Sequential(_BasicBlock(32, 48, stride=2),
                                    _BasicBlock(48, 48))
        self.stage3 = nn.Sequential(_BasicBlock(48, 64, stride=2),
                                    _BasicBlock(64, 64))
        self.head = nn.Conv2d(64, out_channels, 1)

    def forward(self, x):
        return self.head(self.stage3(self.stage2(self.stage1(self.stem(x)))))


BACKBONES = {"small": SmallCnnBackbone, "resnet": ResidualBackbone}


def make_backbone(name: str, out_channels: int = 32) -> nn.Module:
    if name not in BACKBONES:
        raise ValueError(f"unknown backbone {name!r}; choose from {sorted(BACKBONES)}")
    return BACKBONES[name](out_channels)


def extract_image_features(views: torch.Tensor, backbone: nn.Module) -> torch.Tensor:
    """(B, K, 3, H, W) images -> (B, K, C, H/stride, W/stride) features.

    All views must share one image size; they run through the backbone as
    one batch.
    """
    if views.ndim != 5:
        raise ValueError("views must be (B, K, 3, H, W)")
    b, k, c, h, w = views.shape
    if h != w:
        raise ValueError(f"views must be square, got {h}x{w}")
    feats = backbone(views.reshape(b * k, c, h, w))
    return feats.reshape(b, k, *feats.shape[1:])


def pillar_features(points: np.ndarray, grid: BevGridSpec):
    """Scatter radar points into per-cell pillar statistics.

    Returns ((3, G, G) float32, ignored): channels are log1p(count),
    mean z and mean radial velocity; `ignored` counts points outside the
    grid extent (they contribute nothing).
    """
    g = grid.resolution
    out = np.zeros((3, g, g), dtype=np.float32)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 4)
    if pts.shape[0] == 0:
        return out, 0
    cols = np.floor((pts[:, 0] - grid.x_min) / grid.cell_size_m).astype(np.int64)
    rows = np.floor((pts[:, 1] - grid.y_min) / grid.cell_size_m).astype(np.int64)
    # points sitting exactly on the max edge belong to the last cell
    cols[pts[:, 0] == grid.extent_m[1]] = g - 1
    rows[pts[:, 1] == grid.extent_m[3]] = g - 1
    inside = (cols >= 0) & (cols < g) & (rows >= 0) & (rows < g)
    ignored = int((~inside).sum())
    if inside.any():
        r, c = rows[inside], cols[inside]
        count = np.zeros((g, g))
        zsum = np.zeros((g, g))
        vsum = np.zeros((g, g))
        np.add.at(count, (r, c), 1.0)
        np.add.at(zsum, (r, c), pts[inside, 2])
        np.add.at(vsum, (r, c), pts[inside, 3])
        occ = count > 0
        out[0] = np.log1p(count)
        out[1][occ] = (zsum[occ] / count[occ])
        out[2][occ] = (vsum[occ] / count[occ])
    return out, ignored


class RadarPillarEncoder(nn.Module):
    """Learned convolution over the raw pillar statistics."""

    def __init__(self, out_channels: int = 16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, 3, padding=1), _norm(16), nn.SiLU(),
            nn.Conv2d(16, out_channels, 3, padding=1),
        )

    def forward(self, pillars: torch.Tensor) -> torch.Tensor:
        return self.net(pillars)


class FusionEncoder(nn.Module):
    """Camera branch + radar branch + fusion, producing the fused BEV map.

    This whole module sits on the vehicle side of the split.
    """

    def __init__(self, rig: CameraRig, grid: BevGridSpec,
                 backbone: str = "small", image_channels: int = 32,
                 radar_channels: int = 16, fusion: str = "concatenation",
                 overlap: str = "mean"):
        super().__init__()
        strategy = FusionStrategy(fusion)
        if strategy in (FusionStrategy.ENSEMBLE,
                        FusionStrategy.MIXTURE_OF_EXPERTS):
            raise NotImplementedError(
                f"{strategy.value} fusion is not implemented")
        if strategy is not FusionStrategy.CONCATENATION \
                and image_channels != radar_channels:
            raise ValueError(
                f"{strategy.value} fusion needs image_channels == "
                f"radar_channels, got {image_channels} and {radar_channels}")
        self.grid = grid
        self.strategy = strategy
        self.backbone = make_backbone(backbone, image_channels)
        self.projector = GroundPlaneProjector(rig, grid, reduce=overlap)
        self.radar = RadarPillarEncoder(radar_channels)
        self.out_channels = (image_channels + radar_channels
                             if strategy is FusionStrategy.CONCATENATION
                             else image_channels)

    def forward(self, views: torch.Tensor, pillars: torch.Tensor) -> torch.Tensor:
        """(B, K, 3, H, W) images + (B, 3, G, G) pillars -> (B, C, G, G)."""
        cam = self.projector(extract_image_features(views, self.backbone))
        rad = self.radar(pillars)
        a = BevFeatureMap(values=cam, grid=self.grid)
        b = BevFeatureMap(values=rad, grid=self.grid)
        return fuse(a, b, self.strategy).values
