"""Bird's-eye-view grid geometry.

The grid is the shared frame of reference for every stage of the pipeline:
ground-truth masks, projected camera features, radar pillars and decoded
segmentations all live on the same G x G lattice.  Row index follows y,
column index follows x; cell (i, j) is centered at
(x_min + (j + 0.5) * cell, y_min + (i + 0.5) * cell).
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BevGridSpec:
    """Square BEV grid over a metric extent.

    extent_m: (x_min, x_max, y_min, y_max) in meters, ego at the origin.
    resolution: G, cells per side.
    """

    extent_m: tuple = (-32.0, 32.0, -32.0, 32.0)
    resolution: int = 64
    cell_size_m: float = field(init=False)

    def __post_init__(self):
        x_min, x_max, y_min, y_max = self.extent_m
        if not (x_max > x_min and y_max > y_min):
            raise ValueError(f"non-positive grid extent: {self.extent_m}")
        if abs((x_max - x_min) - (y_max - y_min)) > 1e-9:
            raise ValueError(f"grid extent must be square, got {self.extent_m}")
        if self.resolution <= 0:
            raise ValueError(f"grid resolution must be positive, got {self.resolution}")
        object.__setattr__(self, "cell_size_m", (x_max - x_min) / self.resolution)

    @property
    def x_min(self) -> float:
        return self.extent_m[0]

    @property
    def y_min(self) -> float:
        return self.extent_m[2]

    def cell_centers(self) -> tuple:
        """(xs, ys) arrays of shape (G, G) with the metric center of every cell."""
        g = self.resolution
        cs = self.cell_size_m
        xs = self.x_min + (np.arange(g) + 0.5) * cs
        ys = self.y_min + (np.arange(g) + 0.5) * cs
        return np.meshgrid(xs, ys, indexing="xy")

    def contains(self, x, y):
        """Boolean mask of which (x, y) points fall inside the extent."""
        x_min, x_max, y_min, y_max = self.extent_m
        return (x >= x_min) & (x < x_max) & (y >= y_min) & (y < y_max)
