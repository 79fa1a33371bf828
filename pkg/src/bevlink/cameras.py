"""Surround-view pinhole camera rig and a deliberately small renderer.

World frame: ego at the origin, x forward, y left, z up.  Camera frame:
x right, y down, z along the optical axis.  The renderer only has to give
the image backbone something view-dependent to chew on: a shaded ground
plane, a sky gradient and vehicles drawn as projected-box hulls.  Nothing
here is photometrically meaningful and nothing downstream assumes it is.
"""

import math
from dataclasses import dataclass

import numpy as np

from .grid import BevGridSpec

Z_NEAR_M = 0.25


@dataclass
class CameraRig:
    """K pinhole cameras: intrinsics plus world-to-camera extrinsics.

    rotations[k] maps world directions into camera k's frame; centers[k] is
    the camera position in world coordinates, so
    p_cam = rotations[k] @ (p_world - centers[k]).
    """

    image_size: int
    fx: np.ndarray  # (K,)
    fy: np.ndarray
    cx: np.ndarray
    cy: np.ndarray
    rotations: np.ndarray  # (K, 3, 3)
    centers: np.ndarray  # (K, 3)

    def __post_init__(self):
        k = self.num_views
        for name in ("fx", "fy", "cx", "cy"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, v)
            if v.shape != (k,):
                raise ValueError(f"{name} must have shape ({k},), got {v.shape}")
        if np.any(self.fx <= 0) or np.any(self.fy <= 0):
            raise ValueError("focal lengths must be positive")
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.centers.shape != (k, 3):
            raise ValueError(f"centers must have shape ({k}, 3)")
        eye = np.eye(3)
        for i, r in enumerate(self.rotations):
            if np.max(np.abs(r @ r.T - eye)) > 1e-6:
                raise ValueError(f"rotation {i} is not orthonormal")
            if np.linalg.det(r) < 0:
                raise ValueError(f"rotation {i} is not right-handed")

    @property
    def num_views(self) -> int:
        return self.rotations.shape[0] if self.rotations.ndim == 3 else len(self.fx)

    def project(self, view: int, points: np.ndarray):
        """Project world points into one view.

        Returns (uv, valid): pixel coordinates (N, 2) and a mask of points in
        front of the camera and inside the image bounds.
        """
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        q = (p - self.centers[view]) @ self.rotations[view].T
        z = q[:, 2]
        in_front = z > Z_NEAR_M
        zs = np.where(in_front, z, 1.0)
        u = self.fx[view] * q[:, 0] / zs + self.cx[view]
        v = self.fy[view] * q[:, 1] / zs + self.cy[view]
        uv = np.stack([u, v], axis=1)
        s = self.image_size
        valid = in_front & (u >= 0) & (u <= s - 1) & (v >= 0) & (v <= s - 1)
        return uv, valid

    def coverage_fraction(self, grid: BevGridSpec) -> float:
        """Fraction of ground-plane cell centers seen by at least one view."""
        xs, ys = grid.cell_centers()
        pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)], axis=1)
        seen = np.zeros(pts.shape[0], dtype=bool)
        for k in range(self.num_views):
            _, valid = self.project(k, pts)
            seen |= valid
        return float(seen.mean())

    def validate_coverage(self, grid: BevGridSpec, min_fraction: float = 0.95):
        frac = self.coverage_fraction(grid)
        if frac < min_fraction:
            raise ValueError(
                f"camera rig covers {frac:.1%} of grid cell centers, "
                f"below the required {min_fraction:.0%}"
            )
        return frac


def _rig_rotation(yaw: float, pitch_down: float) -> np.ndarray:
    """World-to-camera rotation for an optical axis at (yaw, pitch below horizon)."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch_down), math.sin(pitch_down)
    fwd = np.array([cp * cy, cp * sy, -sp])
    right = np.array([sy, -cy, 0.0])
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=0)


def default_rig(num_views: int = 6, image_size: int = 128,
                hfov_deg: float = 70.0, height_m: float = 1.6,
                pitch_down_deg: float = 12.0) -> CameraRig:
    """Evenly spaced surround rig, view 0 facing forward."""
    if num_views < 1:
        raise ValueError("num_views must be >= 1")
    f = (image_size / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
    c = (image_size - 1) / 2.0
    yaws = [2.0 * math.pi * k / num_views for k in range(num_views)]
    return CameraRig(
        image_size=image_size,
        fx=np.full(num_views, f), fy=np.full(num_views, f),
        cx=np.full(num_views, c), cy=np.full(num_views, c),
        rotations=np.stack([_rig_rotation(y, math.radians(pitch_down_deg))
                            for y in yaws]),
        centers=np.tile(np.array([0.0, 0.0, height_m]), (num_views, 1)),
    )


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull, counter-clockwise in (u, v).  Needs >= 3 points."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if pts.shape[0] < 3:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    cross = lambda o, a, b: ((a[0] - o[0]) * (b[1] - o[1])
                             - (a[1] - o[1]) * (b[0] - o[0]))
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def _fill_hull(img: np.ndarray, hull: np.ndarray, color):
    """Paint the convex polygon onto (H, W, 3), clipped to the image."""
    if hull.shape[0] < 3:
        return
    h, w = img.shape[:2]
    u0 = max(int(math.floor(hull[:, 0].min())), 0)
    u1 = min(int(math.ceil(hull[:, 0].max())), w - 1)
    v0 = max(int(math.floor(hull[:, 1].min())), 0)
    v1 = min(int(math.ceil(hull[:, 1].max())), h - 1)
    if u1 < u0 or v1 < v0:
        return
    uu, vv = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
    inside = np.ones(uu.shape, dtype=bool)
    n = hull.shape[0]
    for i in range(n):
        a, b = hull[i], hull[(i + 1) % n]
        # hull is CCW, so interior points sit on the left of every edge
        inside &= ((b[0] - a[0]) * (vv - a[1])
                   - (b[1] - a[1]) * (uu - a[0])) >= 0
    img[vv[inside], uu[inside]] = color


def _box_corners(state) -> np.ndarray:
    """Eight corners of the vehicle box (footprint plus roof), world frame."""
    from .scenes import VEHICLE_HEIGHT_M  # local import breaks the module cycle
    c, s = math.cos(state.heading), math.sin(state.heading)
    hl, hw = state.length / 2.0, state.width / 2.0
    out = []
    for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)):
        x = state.cx + c * dx - s * dy
        y = state.cy + s * dx + c * dy
        out.append((x, y, 0.0))
        out.append((x, y, VEHICLE_HEIGHT_M))
    return np.array(out)


def render_camera_views(frame, rig: CameraRig, style) -> np.ndarray:
    """Render every view of one frame; (K, H, W, 3) float32 in [0, 1]."""
    s = rig.image_size
    uu, vv = np.meshgrid(np.arange(s, dtype=np.float64),
                         np.arange(s, dtype=np.float64))
    views = np.empty((rig.num_views, s, s, 3), dtype=np.float32)
    order = sorted(frame.vehicle_states,
                   key=lambda st: math.hypot(st.cx, st.cy), reverse=True)
    for k in range(rig.num_views):
        d_cam = np.stack([(uu - rig.cx[k]) / rig.fx[k],
                          (vv - rig.cy[k]) / rig.fy[k],
                          np.ones_like(uu)], axis=-1)
        d_world = d_cam @ rig.rotations[k]
        img = np.empty((s, s, 3), dtype=np.float64)

        sky = np.clip(style.sky_brightness * (0.55 + 0.45 * vv / (s - 1)), 0, 1)
        img[..., 0] = sky * 0.85
        img[..., 1] = sky * 0.90
        img[..., 2] = sky

        dz = d_world[..., 2]
        ground = dz < -1e-9
        t = np.where(ground, -rig.centers[k, 2] / np.where(ground, dz, -1.0), 0.0)
        px = rig.centers[k, 0] + t * d_world[..., 0]
        py = rig.centers[k, 1] + t * d_world[..., 1]
        rho = np.hypot(px, py)
        g = style.ground_brightness * (
            0.82 + 0.10 * np.sin(0.7 * px) + 0.08 * np.cos(0.9 * py)
        ) / (1.0 + 0.03 * rho)
        g = np.clip(g, 0.0, 1.0)
        img[..., 0][ground] = g[ground]
        img[..., 1][ground] = g[ground]
        img[..., 2][ground] = (g * 0.96)[ground]

        for idx, st in enumerate(order):
            center = np.array([[st.cx, st.cy, 0.75]])
            _, center_ok = rig.project(k, center)
            if not center_ok[0]:
                continue
            corners = _box_corners(st)
            q = (corners - rig.centers[k]) @ rig.rotations[k].T
            front = q[:, 2] > Z_NEAR_M
            if front.sum() < 3:
                continue
            qf = q[front]
            uvp = np.stack([rig.fx[k] * qf[:, 0] / qf[:, 2] + rig.cx[k],
                            rig.fy[k] * qf[:, 1] / qf[:, 2] + rig.cy[k]], axis=1)
            dist = math.hypot(st.cx, st.cy)
            shade = style.vehicle_brightness * (0.85 + 0.3 * ((idx * 0.37) % 1.0))
            shade /= 1.0 + 0.02 * dist
            color = np.clip([shade, shade * 0.92, shade * 0.88], 0, 1)
            _fill_hull(img, _convex_hull(uvp), color)

        views[k] = img.astype(np.float32)
    return views
