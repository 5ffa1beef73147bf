"""Egocentric observations rendered from voxel scenes.

Per-pixel rays traverse the voxel grid with a 3-D digital differential
analyzer. Depth is camera-z meters to the first occupied voxel, nudged a
hair inside it so back-projected points land in the voxel that was hit.
Pseudo-color = category base color x depth shading + Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .categories import VOID, color_table
from .geometry import Intrinsics, Pose
from .worldgen import Trajectory, VoxelScene

AOBS_MAGIC = b"AOBS1"

# Pushes hit points off the voxel face they enter through (meters of camera z).
HIT_EPS = 1e-4

_COLORS = color_table()


@dataclass
class Observation:
    """One trajectory step; depth 0 marks miss rays."""

    pseudo_rgb: np.ndarray   # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray        # (H, W) float32, camera-z meters, 0 = miss
    gt_pixel_labels: np.ndarray  # (H, W) uint8 voxel ids, 255 = miss
    pose: Pose
    intrinsics: Intrinsics

    @property
    def valid_depth(self) -> np.ndarray:
        return self.depth > 0


def frame_seed(seed: int, frame: int) -> tuple[int, int]:
    return (seed & 0xFFFFFFFF, frame)


def render(scene: VoxelScene, pose: Pose, intr: Intrinsics,
           noise_seed=0, noise_sigma: float = 0.05) -> Observation:
    """Deterministic per (pose, seed); rejects poses outside scene bounds."""
    cam = pose.camera_position
    lo = scene.origin
    hi = scene.origin + scene.extent
    if not ((lo <= cam) & (cam < hi)).all():
        raise ValueError(f"camera {cam} outside scene bounds [{lo}, {hi})")

    h, w = intr.height, intr.width
    us, vs_ = np.meshgrid(np.arange(w, dtype=np.float64),
                          np.arange(h, dtype=np.float64))
    dirs_cam = np.stack(
        [(us - intr.cx) / intr.fx, (vs_ - intr.cy) / intr.fy, np.ones_like(us)],
        axis=-1,
    ).reshape(-1, 3)
    dirs_w = dirs_cam @ pose.r  # R^-1 applied row-wise

    hit_t, hit_id = _dda_batch(scene, cam, dirs_w)

    depth = np.where(hit_t > 0, hit_t + HIT_EPS, 0.0).astype(np.float32)
    labels = hit_id.astype(np.uint8)
    depth = depth.reshape(h, w)
    labels = labels.reshape(h, w)

    shade = np.where(depth > 0, 0.35 + 0.65 / (1.0 + 0.3 * depth), 0.0)
    rgb = _COLORS[labels] * shade[..., None].astype(np.float32)
    if noise_sigma > 0:
        rng = np.random.default_rng(noise_seed)
        rgb = rgb + rng.normal(0.0, noise_sigma, rgb.shape).astype(np.float32)
    rgb = np.clip(rgb, 0.0, 1.0).astype(np.float32)
    return Observation(rgb, depth, labels, pose, intr)


def _dda_batch(scene: VoxelScene, origin: np.ndarray, dirs: np.ndarray):
    """First-hit t (camera-z meters) and voxel id per ray; t=0 means miss."""
    vs = scene.voxel_size
    shape = np.array(scene.shape, dtype=np.int64)
    pos = (origin - scene.origin) / vs
    dv = dirs / vs
    n = dirs.shape[0]

    vox = np.tile(np.floor(pos).astype(np.int64), (n, 1))
    step = np.sign(dv).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        tmax = np.where(
            dv != 0, (vox + (step > 0) - pos) / dv, np.inf
        )
        tdelta = np.where(dv != 0, np.abs(1.0 / dv), np.inf)

    hit_t = np.zeros(n)
    hit_id = np.full(n, VOID, dtype=np.int64)
    active = np.ones(n, dtype=bool)

    # camera may start inside an occupied voxel only if the pose is bad;
    # treat it as an immediate hit
    start_id = scene.voxels[tuple(vox[0])]
    if start_id != VOID:
        hit_t[:] = 0.0
        hit_id[:] = start_id
        active[:] = False

    max_steps = int(shape.sum()) + 3
    rows = np.arange(n)
    for _ in range(max_steps):
        if not active.any():
            break
        axis = np.argmin(tmax, axis=1)
        t_enter = tmax[rows, axis]
        vox_next = vox.copy()
        vox_next[rows, axis] += step[rows, axis]
        tmax_next = tmax.copy()
        tmax_next[rows, axis] += tdelta[rows, axis]

        vox = np.where(active[:, None], vox_next, vox)
        tmax = np.where(active[:, None], tmax_next, tmax)

        inside = ((vox >= 0) & (vox < shape)).all(axis=1)
        active &= inside  # rays leaving the grid are misses

        ids = np.full(n, VOID, dtype=np.int64)
        safe = np.clip(vox, 0, shape - 1)
        ids[active] = scene.voxels[safe[active, 0], safe[active, 1], safe[active, 2]]
        struck = active & (ids != VOID)
        hit_t[struck] = t_enter[struck]
        hit_id[struck] = ids[struck]
        active &= ~struck
    return hit_t, hit_id


def traverse_ray(scene: VoxelScene, origin, direction, max_t: float):
    """Scalar DDA reference: ordered voxel chain a ray visits (debug/tests)."""
    vs = scene.voxel_size
    pos = (np.asarray(origin, dtype=np.float64) - scene.origin) / vs
    dv = np.asarray(direction, dtype=np.float64) / vs
    vox = np.floor(pos).astype(np.int64)
    step = np.sign(dv).astype(np.int64)
    tmax = np.where(dv != 0, (vox + (step > 0) - pos) / dv, np.inf)
    tdelta = np.where(dv != 0, np.abs(1.0 / dv), np.inf)
    chain = [tuple(vox)]
    t = 0.0
    while t <= max_t:
        axis = int(np.argmin(tmax))
        t = float(tmax[axis])
        vox[axis] += step[axis]
        tmax[axis] += tdelta[axis]
        if not ((vox >= 0).all() and (vox < np.array(scene.shape)).all()):
            break
        chain.append(tuple(vox))
    return chain


def render_trajectory(scene: VoxelScene, traj: Trajectory, intr: Intrinsics,
                      seed: int = 0, noise_sigma: float = 0.05) -> list[Observation]:
    frames = []
    for k, pose in enumerate(traj.poses):
        try:
            frames.append(render(scene, pose, intr, frame_seed(seed, k), noise_sigma))
        except ValueError as exc:
            raise ValueError(f"frame {k}: {exc}") from exc
    return frames


# ---------------------------------------------------------------------------
# observation dump format

def save_observation(path, obs: Observation) -> None:
    h, w = obs.depth.shape
    head = AOBS_MAGIC + np.asarray([h, w], dtype="<u4").tobytes()
    planes = [obs.depth.astype("<f4").tobytes()]
    for c in range(3):
        planes.append(np.ascontiguousarray(obs.pseudo_rgb[:, :, c], dtype="<f4").tobytes())
    planes.append(obs.gt_pixel_labels.tobytes())
    Path(path).write_bytes(head + b"".join(planes))


def load_observation(path, pose: Pose | None = None,
                     intr: Intrinsics | None = None) -> Observation:
    blob = Path(path).read_bytes()
    if blob[:5] != AOBS_MAGIC:
        raise ValueError(f"{path}: not an observation file (bad magic)")
    h, w = (int(v) for v in np.frombuffer(blob, "<u4", 2, 5))
    off = 13
    plane = h * w
    depth = np.frombuffer(blob, "<f4", plane, off).reshape(h, w).copy()
    off += 4 * plane
    rgb = np.zeros((h, w, 3), np.float32)
    for c in range(3):
        rgb[:, :, c] = np.frombuffer(blob, "<f4", plane, off).reshape(h, w)
        off += 4 * plane
    labels = np.frombuffer(blob, np.uint8, plane, off).reshape(h, w).copy()
    off += plane
    if off != len(blob):
        raise ValueError(f"{path}: trailing bytes")
    if intr is None:
        intr = Intrinsics.from_hfov(w, h)
    return Observation(rgb, depth, labels, pose or Pose.identity(), intr)
