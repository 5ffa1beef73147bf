"""Top-down semantic map container and its durable file formats.

Native format AMAP1: ASCII header line
    `AMAP1 <width> <height> <resolution_m> <num_classes>\n`
followed by row-major class-id bytes (rows are Z, columns are X, 255 = void).
Image export: binary PGM (P5) of class ids plus a text palette sidecar.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .categories import NUM_CLASSES, VOID, palette_lines
from .geometry import GridSpec


@dataclass
class SemanticMap:
    """H x W grid of class ids; data[j, i] is cell (i=X index, j=Z index)."""

    data: np.ndarray
    grid: GridSpec
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.shape != (self.grid.height, self.grid.width):
            raise ValueError(
                f"map data {self.data.shape} does not match grid "
                f"{(self.grid.height, self.grid.width)}"
            )

    @property
    def observed(self) -> np.ndarray:
        return self.data != VOID

    def copy(self) -> "SemanticMap":
        return SemanticMap(self.data.copy(), self.grid, self.num_classes)


def empty_map(grid: GridSpec, num_classes: int = NUM_CLASSES) -> SemanticMap:
    return SemanticMap(np.full((grid.height, grid.width), VOID, np.uint8),
                       grid, num_classes)


def save_map(path, smap: SemanticMap) -> None:
    header = (
        f"AMAP1 {smap.grid.width} {smap.grid.height} "
        f"{smap.grid.resolution!r} {smap.num_classes}\n"
    )
    Path(path).write_bytes(header.encode("ascii") + smap.data.tobytes())


def load_map(path, grid: GridSpec | None = None) -> SemanticMap:
    blob = Path(path).read_bytes()
    nl = blob.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: missing AMAP1 header line")
    fields = blob[:nl].decode("ascii", "replace").split()
    if len(fields) != 5 or fields[0] != "AMAP1":
        raise ValueError(f"{path}: malformed AMAP1 header {fields}")
    width, height = int(fields[1]), int(fields[2])
    resolution = float(fields[3])
    num_classes = int(fields[4])
    payload = blob[nl + 1:]
    if len(payload) != width * height:
        raise ValueError(
            f"{path}: payload is {len(payload)} bytes, header promises {width * height}"
        )
    if grid is None:
        grid = GridSpec(resolution=resolution, origin_x=0.0, origin_z=0.0,
                        width=width, height=height, h_min=0.0, h_max=2.0)
    elif (grid.width, grid.height) != (width, height):
        raise ValueError(f"{path}: grid extents disagree with header")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return SemanticMap(data.copy(), grid, num_classes)


def export_pgm(path, smap: SemanticMap) -> Path:
    """Write class ids as a P5 graymap plus an `id name r g b` palette."""
    path = Path(path)
    header = f"P5\n{smap.grid.width} {smap.grid.height}\n255\n"
    path.write_bytes(header.encode("ascii") + smap.data.tobytes())
    sidecar = path.with_suffix(path.suffix + ".palette.txt")
    sidecar.write_text("\n".join(palette_lines()) + "\n")
    return sidecar
