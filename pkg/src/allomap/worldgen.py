"""Synthetic labeled voxel scenes, ground-truth top-down maps, trajectories.

Scenes are axis-aligned voxel grids: a floor layer, perimeter (and optional
dividing) walls, and per-category box-union furniture. Every scene embeds at
least one occluder pairing (a low object under a taller overhanging one) when
it holds two or more objects, so sequences exercise occlusion recovery.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .categories import CATEGORIES, FLOOR, VOID, WALL
from .geometry import GridSpec, Pose
from .mapio import SemanticMap

log = logging.getLogger(__name__)

AVOX_MAGIC = b"AVOX1"

# Axis-aligned box in world meters: (x0, y0, z0, x1, y1, z1).
Box = tuple[float, float, float, float, float, float]


@dataclass(frozen=True)
class SceneConfig:
    extent_range: tuple[float, float] = (4.2, 5.2)
    room_range: tuple[int, int] = (1, 2)
    object_range: tuple[int, int] = (12, 16)
    voxel_size: float = 0.05
    scene_height: float = 2.4
    wall_height: float = 2.2
    categories: tuple[int, ...] = tuple(range(len(CATEGORIES)))

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel size must be positive")
        if self.object_range[0] < 0 or self.object_range[1] < self.object_range[0]:
            raise ValueError(f"bad object count range {self.object_range}")


@dataclass
class PlacedObject:
    category: int
    boxes: list[Box]


@dataclass
class VoxelScene:
    voxels: np.ndarray          # (nx, ny, nz) uint8 class/structure ids
    voxel_size: float
    origin: np.ndarray          # world coords of voxel (0,0,0) corner
    seed: int
    objects: list[PlacedObject] = field(default_factory=list)
    room_walls: list[Box] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape

    @property
    def extent(self) -> np.ndarray:
        return np.array(self.voxels.shape, dtype=np.float64) * self.voxel_size

    @property
    def occupied(self) -> np.ndarray:
        return self.voxels != VOID

    def category_census(self) -> dict[int, int]:
        ids, counts = np.unique(self.voxels, return_counts=True)
        return {int(c): int(n) for c, n in zip(ids, counts) if c < len(CATEGORIES)}


@dataclass
class Trajectory:
    poses: list[Pose]
    camera_height: float
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.poses)


# ---------------------------------------------------------------------------
# category shape samplers: footprint (w, d) and a box-union builder

def _solid(w, d, h):
    def build(x, z, _rng):
        return [(x, 0.0, z, x + w, h, z + d)]
    return (w, d), build


def _chair(rng):
    s = rng.uniform(0.42, 0.52)
    seat_h = rng.uniform(0.38, 0.46)
    back_h = rng.uniform(0.75, 0.95)

    def build(x, z, _rng):
        return [
            (x, 0.0, z, x + s, seat_h, z + s),
            (x, 0.0, z, x + s, back_h, z + 0.1),
        ]
    return (s, s), build


def _table(rng):
    w = rng.uniform(0.9, 1.4)
    d = rng.uniform(0.7, 1.0)
    top = rng.uniform(0.62, 0.75)
    slab = 0.08
    leg = 0.1

    def build(x, z, _rng):
        boxes = [(x, top - slab, z, x + w, top, z + d)]
        for lx in (x, x + w - leg):
            for lz in (z, z + d - leg):
                boxes.append((lx, 0.0, lz, lx + leg, top - slab, lz + leg))
        return boxes
    return (w, d), build


def _plant(rng):
    pot = rng.uniform(0.25, 0.35)
    canopy = rng.uniform(0.45, 0.6)
    pot_h = rng.uniform(0.25, 0.35)
    top_h = rng.uniform(0.8, 1.3)
    off = (canopy - pot) / 2.0

    def build(x, z, _rng):
        return [
            (x + off, 0.0, z + off, x + off + pot, pot_h, z + off + pot),
            (x, pot_h, z, x + canopy, top_h, z + canopy),
        ]
    return (canopy, canopy), build


def _sink(rng):
    w = rng.uniform(0.5, 0.65)
    d = rng.uniform(0.45, 0.6)
    ped = 0.24
    ped_h = rng.uniform(0.5, 0.6)
    basin_h = ped_h + rng.uniform(0.25, 0.32)
    ox = (w - ped) / 2.0
    oz = (d - ped) / 2.0

    def build(x, z, _rng):
        return [
            (x + ox, 0.0, z + oz, x + ox + ped, ped_h, z + oz + ped),
            (x, ped_h, z, x + w, basin_h, z + d),
        ]
    return (w, d), build


def _sofa(rng):
    w = rng.uniform(1.3, 1.8)
    d = rng.uniform(0.7, 0.9)
    seat_h = rng.uniform(0.4, 0.48)
    back_h = rng.uniform(0.72, 0.9)

    def build(x, z, _rng):
        return [
            (x, 0.0, z, x + w, seat_h, z + d),
            (x, 0.0, z, x + w, back_h, z + 0.25),
        ]
    return (w, d), build


def _sampler(category: int, rng: np.random.Generator):
    name = CATEGORIES[category]
    if name == "chair":
        return _chair(rng)
    if name == "table":
        return _table(rng)
    if name == "cushion":
        return _solid(rng.uniform(0.4, 0.55), rng.uniform(0.4, 0.55), rng.uniform(0.15, 0.25))
    if name == "cabinet":
        return _solid(rng.uniform(0.5, 1.1), rng.uniform(0.4, 0.6), rng.uniform(0.9, 1.3))
    if name == "shelving":
        return _solid(rng.uniform(0.8, 1.2), rng.uniform(0.3, 0.45), rng.uniform(1.3, 1.8))
    if name == "sink":
        return _sink(rng)
    if name == "dresser":
        return _solid(rng.uniform(0.8, 1.2), rng.uniform(0.45, 0.55), rng.uniform(0.7, 1.0))
    if name == "plant":
        return _plant(rng)
    if name == "bed":
        return _solid(rng.uniform(1.4, 1.9), rng.uniform(1.0, 1.4), rng.uniform(0.45, 0.6))
    if name == "sofa":
        return _sofa(rng)
    if name == "counter":
        return _solid(rng.uniform(0.9, 1.6), rng.uniform(0.55, 0.65), rng.uniform(0.85, 0.92))
    if name == "fireplace":
        return _solid(rng.uniform(0.9, 1.2), rng.uniform(0.35, 0.5), rng.uniform(1.0, 1.4))
    raise ValueError(f"unknown category {category}")


# ---------------------------------------------------------------------------
# voxel stamping helpers

def _box_slices(scene_shape, voxel_size, box: Box):
    """Index ranges of voxels whose centers lie inside the box."""
    nx, ny, nz = scene_shape
    x0, y0, z0, x1, y1, z1 = box
    lo = [max(0, int(math.ceil(c / voxel_size - 0.5))) for c in (x0, y0, z0)]
    hi = [int(math.floor(c / voxel_size - 0.5)) for c in (x1, y1, z1)]
    hi = [min(h, n - 1) for h, n in zip(hi, (nx, ny, nz))]
    if any(l > h for l, h in zip(lo, hi)):
        return None
    return tuple(slice(l, h + 1) for l, h in zip(lo, hi))


def _stamp(voxels, voxel_size, boxes, value):
    # layer 0 stays floor; objects rest on it
    for box in boxes:
        sl = _box_slices(voxels.shape, voxel_size, box)
        if sl is not None:
            ys = slice(max(sl[1].start, 1), sl[1].stop)
            if ys.start < ys.stop:
                voxels[sl[0], ys, sl[2]] = value


def _region_free(voxels, voxel_size, boxes, pad: float) -> bool:
    """True when every padded box volume above the floor layer is void."""
    nx, ny, nz = voxels.shape
    for x0, y0, z0, x1, y1, z1 in boxes:
        sl = _box_slices(
            voxels.shape, voxel_size,
            (x0 - pad, max(y0, voxel_size), z0 - pad, x1 + pad, y1, z1 + pad),
        )
        if sl is None:
            continue
        if (voxels[sl] != VOID).any():
            return False
    return True


# ---------------------------------------------------------------------------
# scene generation

def generate_scene(seed: int, config: SceneConfig = SceneConfig()) -> VoxelScene:
    """Deterministic per seed; regenerates the layout (logged) when object
    placement runs out of retries."""
    for attempt in range(32):
        rng = np.random.default_rng((seed & 0xFFFFFFFF, attempt))
        scene = _generate_once(rng, seed, config)
        if scene is not None:
            return scene
        log.info("scene seed=%d attempt=%d infeasible, regenerating layout", seed, attempt)
    raise RuntimeError(f"could not generate a feasible scene for seed {seed}")


def _generate_once(rng, seed, cfg: SceneConfig) -> VoxelScene | None:
    vs = cfg.voxel_size
    sx = float(rng.uniform(*cfg.extent_range))
    sz = float(rng.uniform(*cfg.extent_range))
    nx = int(round(sx / vs))
    nz = int(round(sz / vs))
    ny = int(round(cfg.scene_height / vs))
    vox = np.full((nx, ny, nz), VOID, dtype=np.uint8)
    vox[:, 0, :] = FLOOR

    wall_y = int(round(cfg.wall_height / vs))
    vox[0, 1:wall_y, :] = WALL
    vox[-1, 1:wall_y, :] = WALL
    vox[:, 1:wall_y, 0] = WALL
    vox[:, 1:wall_y, -1] = WALL

    room_walls: list[Box] = []
    rooms = int(rng.integers(cfg.room_range[0], cfg.room_range[1] + 1))
    if rooms >= 2 and nx > 40 and nz > 40:
        # one dividing wall with a door gap
        along_x = bool(rng.integers(0, 2))
        span = nx if along_x else nz
        line = int(rng.integers(span // 3, 2 * span // 3))
        door_w = max(3, int(round(0.9 / vs)))
        other = nz if along_x else nx
        door0 = int(rng.integers(2, max(3, other - door_w - 2)))
        if along_x:
            vox[line, 1:wall_y, :] = WALL
            vox[line, 1:wall_y, door0:door0 + door_w] = VOID
            room_walls.append((line * vs, 0, 0, (line + 1) * vs, cfg.wall_height, sz))
        else:
            vox[:, 1:wall_y, line] = WALL
            vox[door0:door0 + door_w, 1:wall_y, line] = VOID
            room_walls.append((0, 0, line * vs, sx, cfg.wall_height, (line + 1) * vs))

    objects: list[PlacedObject] = []
    n_obj = int(rng.integers(cfg.object_range[0], cfg.object_range[1] + 1))

    def place(category, pad=0.08, tries=60, free_check=None) -> bool:
        for _ in range(tries):
            (w, d), build = _sampler(category, rng)
            if w >= sx - vs * 4 or d >= sz - vs * 4:
                continue  # footprint cannot fit this room at all
            x = float(rng.uniform(vs * 2, sx - w - vs * 2))
            z = float(rng.uniform(vs * 2, sz - d - vs * 2))
            boxes = build(x, z, rng)
            ok = (free_check or _region_free)(vox, vs, boxes, pad)
            if ok:
                _stamp(vox, vs, boxes, category)
                objects.append(PlacedObject(category, boxes))
                return True
        return False

    order = [cfg.categories[i % len(cfg.categories)] for i in range(n_obj)]
    rng.shuffle(order)

    if n_obj >= 2:
        paired = _place_occluder_pair(vox, vs, sx, sz, rng, objects, cfg)
        if paired is None:
            return None
        for cat in paired:
            if cat in order:
                order.remove(cat)
            elif order:
                order.pop()

    for category in order:
        if not place(category):
            return None

    return VoxelScene(vox, vs, np.zeros(3), seed, objects, room_walls)


def _place_occluder_pair(vox, vs, sx, sz, rng, objects, cfg):
    """A table with a low object tucked under its top slab; returns the
    placed category pair, or None when no layout fits."""
    table_id = CATEGORIES.index("table")
    low_id = CATEGORIES.index("cushion") if CATEGORIES.index("cushion") in cfg.categories \
        else cfg.categories[0]
    for _ in range(60):
        (w, d), build = _table(rng)
        if w >= sx - vs * 4 or d >= sz - vs * 4:
            continue
        x = float(rng.uniform(vs * 2, sx - w - vs * 2))
        z = float(rng.uniform(vs * 2, sz - d - vs * 2))
        t_boxes = build(x, z, rng)
        if not _region_free(vox, vs, t_boxes, 0.08):
            continue
        # low object centered under the slab, clear of the legs
        s = min(0.4, w - 0.36, d - 0.36)
        if s < 0.15:
            continue
        lx = x + (w - s) / 2.0
        lz = z + (d - s) / 2.0
        l_boxes = [(lx, 0.0, lz, lx + s, rng.uniform(0.15, 0.25), lz + s)]
        if not _region_free(vox, vs, l_boxes, 0.0):
            continue
        _stamp(vox, vs, t_boxes, table_id)
        objects.append(PlacedObject(table_id, t_boxes))
        _stamp(vox, vs, l_boxes, low_id)
        objects.append(PlacedObject(low_id, l_boxes))
        return (table_id, low_id)
    return None


# ---------------------------------------------------------------------------
# ground-truth map

def grid_for_scene(scene: VoxelScene, resolution: float = 0.02, margin: float = 0.5,
                   h_min: float = 0.05, h_max: float = 2.0) -> GridSpec:
    ex = scene.extent
    return GridSpec(
        resolution=resolution,
        origin_x=float(scene.origin[0] - margin),
        origin_z=float(scene.origin[2] - margin),
        width=int(math.ceil((ex[0] + 2 * margin) / resolution)),
        height=int(math.ceil((ex[2] + 2 * margin) / resolution)),
        h_min=h_min,
        h_max=h_max,
    )


def column_top_labels(scene: VoxelScene, h_min: float, h_max: float) -> np.ndarray:
    """(nx, nz) label of the highest in-band object voxel per column."""
    nx, ny, nz = scene.shape
    centers = (np.arange(ny) + 0.5) * scene.voxel_size + scene.origin[1]
    band = (centers >= h_min) & (centers <= h_max)
    eligible = (scene.voxels < len(CATEGORIES)) & band[None, :, None]
    score = np.where(eligible, np.arange(1, ny + 1)[None, :, None], 0)
    top = score.max(axis=1)
    ys = np.maximum(top - 1, 0)
    labels = np.take_along_axis(scene.voxels, ys[:, None, :], axis=1)[:, 0, :]
    return np.where(top > 0, labels, VOID).astype(np.uint8)


def ground_truth_map(scene: VoxelScene, grid: GridSpec) -> SemanticMap:
    """Per cell, the category of the highest labeled voxel in the height
    band at the cell center's column; structure and floor map to void."""
    tops = column_top_labels(scene, grid.h_min, grid.h_max)
    nx, _, nz = scene.shape
    xs = grid.origin_x + (np.arange(grid.width) + 0.5) * grid.resolution
    zs = grid.origin_z + (np.arange(grid.height) + 0.5) * grid.resolution
    ix = np.floor((xs - scene.origin[0]) / scene.voxel_size).astype(np.int64)
    iz = np.floor((zs - scene.origin[2]) / scene.voxel_size).astype(np.int64)
    okx = (ix >= 0) & (ix < nx)
    okz = (iz >= 0) & (iz < nz)
    data = np.full((grid.height, grid.width), VOID, dtype=np.uint8)
    sub = tops[np.ix_(np.clip(ix, 0, nx - 1), np.clip(iz, 0, nz - 1))]
    valid = okx[:, None] & okz[None, :]
    data[valid.T] = sub.T[valid.T]
    return SemanticMap(data, grid)


# ---------------------------------------------------------------------------
# trajectories

def free_floor_mask(scene: VoxelScene, clearance: float = 1.4) -> np.ndarray:
    """(nx, nz) columns with floor and nothing occupied up to `clearance`."""
    ny = scene.shape[1]
    top = min(ny, int(math.ceil(clearance / scene.voxel_size)))
    has_floor = scene.voxels[:, 0, :] == FLOOR
    clear = (scene.voxels[:, 1:top, :] == VOID).all(axis=1)
    return has_floor & clear


def sample_trajectory(scene: VoxelScene, n: int, seed: int,
                      camera_height: float = 1.0,
                      step_range: tuple[float, float] = (0.15, 0.45),
                      pitch: float = 0.15,
                      max_turn: float = 0.9) -> Trajectory:
    """Random walk over free floor with heading-aligned yaw."""
    if n < 1:
        raise ValueError("trajectory length must be >= 1")
    free = free_floor_mask(scene, clearance=camera_height + 0.4)
    if not free.any():
        raise ValueError("scene has no free floor to walk on")
    rng = np.random.default_rng((seed & 0xFFFFFFFF, scene.seed & 0xFFFFFFFF))
    vs = scene.voxel_size

    def is_free(x, z):
        ix = int(math.floor((x - scene.origin[0]) / vs))
        iz = int(math.floor((z - scene.origin[2]) / vs))
        return 0 <= ix < free.shape[0] and 0 <= iz < free.shape[1] and free[ix, iz]

    cols = np.argwhere(free)
    start = cols[rng.integers(len(cols))]
    pos = np.array([
        scene.origin[0] + (start[0] + 0.5) * vs,
        scene.origin[2] + (start[1] + 0.5) * vs,
    ])
    heading = float(rng.uniform(0, 2 * math.pi))
    positions = [pos.copy()]
    headings = [heading]
    while len(positions) < n:
        moved = False
        for _ in range(40):
            turn = float(rng.uniform(-max_turn, max_turn))
            step = float(rng.uniform(*step_range))
            cand_h = heading + turn
            cand = pos + step * np.array([math.sin(cand_h), math.cos(cand_h)])
            mid = pos + 0.5 * step * np.array([math.sin(cand_h), math.cos(cand_h)])
            if is_free(cand[0], cand[1]) and is_free(mid[0], mid[1]):
                pos = cand
                heading = cand_h
                moved = True
                break
        if not moved:
            heading += math.pi  # turn in place, stay put
        positions.append(pos.copy())
        headings.append(heading)

    poses = [
        Pose.from_position_yaw([p[0], camera_height, p[1]], yaw=h, pitch=pitch)
        for p, h in zip(positions, headings)
    ]
    return Trajectory(poses, camera_height, seed)


# ---------------------------------------------------------------------------
# file formats

def save_scene(path, scene: VoxelScene) -> None:
    head = (
        AVOX_MAGIC
        + np.float32(scene.voxel_size).tobytes()
        + np.asarray(scene.origin, dtype="<f4").tobytes()
        + np.asarray(scene.shape, dtype="<u4").tobytes()
    )
    Path(path).write_bytes(head + scene.voxels.tobytes())


def load_scene(path) -> VoxelScene:
    blob = Path(path).read_bytes()
    if blob[:5] != AVOX_MAGIC:
        raise ValueError(f"{path}: not a scene file (bad magic)")
    voxel_size = float(np.frombuffer(blob, "<f4", 1, 5)[0])
    origin = np.frombuffer(blob, "<f4", 3, 9).astype(np.float64)
    nx, ny, nz = (int(v) for v in np.frombuffer(blob, "<u4", 3, 21))
    payload = blob[33:]
    if len(payload) != nx * ny * nz:
        raise ValueError(f"{path}: voxel payload length mismatch")
    vox = np.frombuffer(payload, np.uint8).reshape(nx, ny, nz).copy()
    return VoxelScene(vox, voxel_size, origin, seed=-1)


def save_trajectory(path, traj: Trajectory) -> None:
    lines = []
    for pose in traj.poses:
        vals = list(pose.r.reshape(-1)) + list(pose.t)
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path) -> Trajectory:
    poses = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) != 12:
            raise ValueError(f"{path}: pose line needs 12 values, got {len(vals)}")
        poses.append(Pose(np.array(vals[:9]).reshape(3, 3), np.array(vals[9:])))
    if not poses:
        raise ValueError(f"{path}: no poses")
    height = float(poses[0].camera_position[1])
    return Trajectory(poses, height)
