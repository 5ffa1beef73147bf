"""Camera model and egocentric-to-allocentric coordinate machinery.

Conventions, fixed across the whole pipeline:
  - camera frame: x right, y down, z forward (depth is camera z);
  - world frame: Y is the height axis, the map lives on X/Z;
  - world = R^-1 @ p_camera - t, and the inverse p_camera = R @ (world + t);
  - map cell (i, j) = (floor((X-origin_x)/res), floor((Z-origin_z)/res)).

All math here is float64 and elementwise expressions are written in the same
order in vector and scalar form, so a per-pixel loop reproduces the
vectorized projection bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_hfov(cls, width: int, height: int, hfov_deg: float = 90.0) -> "Intrinsics":
        fx = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
                   width=width, height=height)


class Pose:
    """Rigid camera pose storing R and t of `world = R^-1 p_c - t`."""

    def __init__(self, r: np.ndarray, t: np.ndarray):
        r = np.asarray(r, dtype=np.float64).reshape(3, 3)
        t = np.asarray(t, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6):
            raise ValueError("rotation is not orthonormal within 1e-6")
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-6):
            raise ValueError("rotation determinant must be +1 within 1e-6")
        self.r = r
        self.t = t

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_position_yaw(cls, position, yaw: float, pitch: float = 0.0) -> "Pose":
        """Camera at a world position, heading `yaw` (0 = +Z), pitched down
        by `pitch` radians."""
        cy_, sy = math.cos(yaw), math.sin(yaw)
        cp, sp = math.cos(pitch), math.sin(pitch)
        rot_y = np.array([[cy_, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy_]])
        base = np.array([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
        rot_x = np.array([[1.0, 0.0, 0.0], [0.0, cp, sp], [0.0, -sp, cp]])
        r_inv = rot_y @ base @ rot_x
        position = np.asarray(position, dtype=np.float64).reshape(3)
        return cls(r_inv.T, -position)

    @property
    def camera_position(self) -> np.ndarray:
        return -self.t

    def camera_to_world(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.r + (-self.t)  # p @ R == R^T p == R^-1 p row-wise

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return (pts + self.t) @ self.r.T

    def forward(self) -> np.ndarray:
        """World-frame view direction (camera +z)."""
        return self.r.T @ np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class GridSpec:
    """Allocentric map frame: metric origin, cell size, and height band."""

    resolution: float
    origin_x: float
    origin_z: float
    width: int
    height: int
    h_min: float
    h_max: float

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("map extents must be positive")
        if not self.h_min < self.h_max:
            raise ValueError(f"height band empty: [{self.h_min}, {self.h_max}]")

    @property
    def cells(self) -> int:
        return self.width * self.height


def back_project(u, v, depth, intr: Intrinsics):
    """Pixels + depth -> camera points d * K^-1 (u, v, 1)^T.

    Returns (points (..., 3) float64, valid mask); non-positive or non-finite
    depths are flagged invalid and produce zeros.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(d) & (d > 0)
    ds = np.where(valid, d, 0.0)
    x = (u - intr.cx) * ds / intr.fx
    y = (v - intr.cy) * ds / intr.fy
    pts = np.stack(np.broadcast_arrays(x, y, ds), axis=-1)
    return pts, valid


def project_camera(pts, intr: Intrinsics):
    """Forward pinhole projection, the inverse of back_project for z > 0."""
    pts = np.asarray(pts, dtype=np.float64)
    z = pts[..., 2]
    u = pts[..., 0] * intr.fx / z + intr.cx
    v = pts[..., 1] * intr.fy / z + intr.cy
    return u, v, z


def world_to_cell(pts, grid: GridSpec):
    """World points -> (i, j, inside). Outside map bounds or height band
    yields inside=False with i=j=-1."""
    pts = np.asarray(pts, dtype=np.float64)
    i = np.floor((pts[..., 0] - grid.origin_x) / grid.resolution).astype(np.int64)
    j = np.floor((pts[..., 2] - grid.origin_z) / grid.resolution).astype(np.int64)
    y = pts[..., 1]
    inside = (
        (i >= 0) & (i < grid.width) & (j >= 0) & (j < grid.height)
        & (y >= grid.h_min) & (y <= grid.h_max)
    )
    i = np.where(inside, i, -1)
    j = np.where(inside, j, -1)
    return i, j, inside


def cell_of(point, grid: GridSpec):
    """Scalar convenience: map cell of one world point, or None."""
    i, j, ok = world_to_cell(np.asarray(point, dtype=np.float64)[None, :], grid)
    return (int(i[0]), int(j[0])) if bool(ok[0]) else None


@dataclass(frozen=True)
class ProjectionIndex:
    """Per feature-map location: target map cell and world height.

    Invalid entries (bad depth, outside map, outside height band) carry
    valid=False, cell_i=cell_j=-1, height=0.
    """

    valid: np.ndarray    # (h', w') bool
    cell_i: np.ndarray   # (h', w') int64
    cell_j: np.ndarray   # (h', w') int64
    height: np.ndarray   # (h', w') float64
    grid: GridSpec

    @property
    def flat_cells(self) -> np.ndarray:
        return self.cell_j * self.grid.width + self.cell_i


def projection_index(depth: np.ndarray, intr: Intrinsics, pose: Pose,
                     grid: GridSpec, feature_stride: int = 4) -> ProjectionIndex:
    """Projective index for a depth image sampled at stride-cell centers.

    Pure function of its inputs; equals a per-pixel scalar loop bitwise.
    """
    depth = np.asarray(depth)
    h, w = depth.shape
    s = int(feature_stride)
    if h % s or w % s:
        raise ValueError(f"depth extents {h}x{w} must be divisible by stride {s}")
    off = s // 2
    vs = np.arange(h // s, dtype=np.int64) * s + off
    us = np.arange(w // s, dtype=np.int64) * s + off
    d = depth[np.ix_(vs, us)].astype(np.float64)
    valid = np.isfinite(d) & (d > 0)
    ds = np.where(valid, d, 0.0)

    x = (us[None, :].astype(np.float64) - intr.cx) * ds / intr.fx
    y = (vs[:, None].astype(np.float64) - intr.cy) * ds / intr.fy
    z = ds
    rt = pose.r.T
    t = pose.t
    wx = rt[0, 0] * x + rt[0, 1] * y + rt[0, 2] * z - t[0]
    wy = rt[1, 0] * x + rt[1, 1] * y + rt[1, 2] * z - t[1]
    wz = rt[2, 0] * x + rt[2, 1] * y + rt[2, 2] * z - t[2]

    i = np.floor((wx - grid.origin_x) / grid.resolution).astype(np.int64)
    j = np.floor((wz - grid.origin_z) / grid.resolution).astype(np.int64)
    inside = (
        (i >= 0) & (i < grid.width) & (j >= 0) & (j < grid.height)
        & (wy >= grid.h_min) & (wy <= grid.h_max)
    )
    valid &= inside
    return ProjectionIndex(
        valid=valid,
        cell_i=np.where(valid, i, -1),
        cell_j=np.where(valid, j, -1),
        height=np.where(valid, wy, 0.0),
        grid=grid,
    )
