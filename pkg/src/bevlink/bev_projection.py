"""Lifting per-view image features onto the BEV grid.

Every grid cell center is treated as a point on the ground plane (z=0),
projected into each camera, and the view's feature map is bilinearly
sampled there.  Cells seen by several cameras are averaged (or
max-pooled); cells seen by none stay exactly zero.  The sampling tables
depend only on (rig, grid), so they are built once and reused by both the
torch path and the numpy reference path.
"""

import numpy as np
import torch
import torch.nn.functional as F

from .cameras import CameraRig, Z_NEAR_M
from .grid import BevGridSpec


def build_sampling_tables(rig: CameraRig, grid: BevGridSpec,
                          ground_z: float = 0.0):
    """Normalized sampling coordinates and visibility per view.

    Returns (coords, visible): coords is (K, G, G, 2) float32 holding
    align-corners-normalized (u, v) in [-1, 1]; visible is (K, G, G) bool.
    Coordinates of invisible cells are clamped garbage and must be masked.
    """
    xs, ys = grid.cell_centers()
    pts = np.stack([xs.ravel(), ys.ravel(),
                    np.full(xs.size, ground_z)], axis=1)
    g = grid.resolution
    s = rig.image_size
    coords = np.zeros((rig.num_views, g, g, 2), dtype=np.float32)
    visible = np.zeros((rig.num_views, g, g), dtype=bool)
    for k in range(rig.num_views):
        uv, valid = rig.project(k, pts)
        norm = 2.0 * uv / (s - 1) - 1.0
        coords[k] = np.clip(norm, -1.0, 1.0).reshape(g, g, 2)
        visible[k] = valid.reshape(g, g)
    return coords, visible


class GroundPlaneProjector(torch.nn.Module):
    """Splats per-view feature maps onto the grid via the sampling tables."""

    def __init__(self, rig: CameraRig, grid: BevGridSpec,
                 reduce: str = "mean"):
        super().__init__()
        if reduce not in ("mean", "max"):
            raise ValueError(f"reduce must be 'mean' or 'max', got {reduce!r}")
        self.reduce = reduce
        self.grid = grid
        coords, visible = build_sampling_tables(rig, grid)
        self.register_buffer("coords", torch.from_numpy(coords))
        self.register_buffer("visible", torch.from_numpy(visible).float())

    def forward(self, view_feats: torch.Tensor) -> torch.Tensor:
        """(B, K, C, Hf, Wf) view features -> (B, C, G, G) BEV features."""
        b, k, c, _, _ = view_feats.shape
        if k != self.coords.shape[0]:
            raise ValueError(
                f"got {k} views, sampling tables built for {self.coords.shape[0]}"
            )
        g = self.coords.shape[1]
        acc = view_feats.new_zeros((b, c, g, g))
        if self.reduce == "max":
            acc -= torch.inf
        count = view_feats.new_zeros((1, 1, g, g))
        for i in range(k):
            sampled = F.grid_sample(
                view_feats[:, i], self.coords[i].expand(b, g, g, 2),
                mode="bilinear", padding_mode="zeros", align_corners=True,
            )
            vis = self.visible[i].view(1, 1, g, g)
            if self.reduce == "mean":
                acc = acc + sampled * vis
            else:
                acc = torch.where(vis.bool(), torch.maximum(acc, sampled), acc)
            count = count + vis
        if self.reduce == "mean":
            return acc / count.clamp(min=1.0)
        return torch.where(count > 0, acc, torch.zeros_like(acc))


def project_features_numpy(view_feats: np.ndarray, coords: np.ndarray,
                           visible: np.ndarray,
                           reduce: str = "mean") -> np.ndarray:
    """Reference projection: (K, C, Hf, Wf) -> (C, G, G), plain numpy.

    Implements the same align-corners bilinear sampling as the torch path
    and exists so the two can be checked against each other.
    """
    k, c, hf, wf = view_feats.shape
    g = coords.shape[1]
    acc = np.zeros((c, g, g), dtype=np.float64)
    if reduce == "max":
        acc -= np.inf
    count = np.zeros((g, g), dtype=np.float64)
    for i in range(k):
        vis = visible[i]
        if not vis.any():
            continue
        # align_corners=True: normalized -1..1 spans pixel centers 0..N-1
        fx = (coords[i, ..., 0] + 1.0) * 0.5 * (wf - 1)
        fy = (coords[i, ..., 1] + 1.0) * 0.5 * (hf - 1)
        x0 = np.clip(np.floor(fx).astype(int), 0, wf - 1)
        y0 = np.clip(np.floor(fy).astype(int), 0, hf - 1)
        x1 = np.clip(x0 + 1, 0, wf - 1)
        y1 = np.clip(y0 + 1, 0, hf - 1)
        ax = np.clip(fx - x0, 0.0, 1.0)
        ay = np.clip(fy - y0, 0.0, 1.0)
        f = view_feats[i]
        sample = ((1 - ax) * (1 - ay) * f[:, y0, x0]
                  + ax * (1 - ay) * f[:, y0, x1]
                  + (1 - ax) * ay * f[:, y1, x0]
                  + ax * ay * f[:, y1, x1])
        if reduce == "mean":
            acc += sample * vis
        else:
            acc = np.where(vis & (sample > acc), sample, acc)
        count += vis
    if reduce == "mean":
        return acc / np.maximum(count, 1.0)
    return np.where(count > 0, acc, 0.0)
