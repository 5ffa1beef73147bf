"""Object categories, structural voxel ids, and display colors."""

import numpy as np

# The 12 mapped object categories, ids 0..11. Everything else is void.
CATEGORIES = (
    "chair",
    "table",
    "cushion",
    "cabinet",
    "shelving",
    "sink",
    "dresser",
    "plant",
    "bed",
    "sofa",
    "counter",
    "fireplace",
)

NUM_CLASSES = len(CATEGORIES)

# Structural voxels: rendered (they occlude and produce depth) but mapped to
# void in ground-truth maps and excluded from loss/metrics.
FLOOR = 240
WALL = 241
CEILING = 242

# Void / empty marker, both for voxels and for map cells.
VOID = 255

STRUCTURE_IDS = (FLOOR, WALL, CEILING)

# Base colors in [0,1] used by the pseudo-color renderer and map export.
# Chosen to be mutually distinguishable; the encoder has to learn the
# color -> category association through the top-down loss alone.
BASE_COLORS = {
    0: (0.85, 0.30, 0.25),   # chair
    1: (0.55, 0.40, 0.20),   # table
    2: (0.90, 0.75, 0.30),   # cushion
    3: (0.35, 0.30, 0.60),   # cabinet
    4: (0.30, 0.60, 0.55),   # shelving
    5: (0.75, 0.75, 0.85),   # sink
    6: (0.50, 0.25, 0.45),   # dresser
    7: (0.25, 0.65, 0.25),   # plant
    8: (0.80, 0.50, 0.60),   # bed
    9: (0.25, 0.45, 0.80),   # sofa
    10: (0.65, 0.60, 0.40),  # counter
    11: (0.90, 0.45, 0.10),  # fireplace
    FLOOR: (0.42, 0.40, 0.38),
    WALL: (0.72, 0.70, 0.66),
    CEILING: (0.60, 0.60, 0.62),
    VOID: (0.0, 0.0, 0.0),
}


def color_table() -> np.ndarray:
    """256x3 float32 lookup table from voxel/class id to base color."""
    table = np.zeros((256, 3), dtype=np.float32)
    for cid, rgb in BASE_COLORS.items():
        table[cid] = rgb
    return table


def palette_lines() -> list[str]:
    """`id name r g b` lines (8-bit colors) for the 12 mapped categories."""
    lines = []
    for cid, name in enumerate(CATEGORIES):
        r, g, b = (int(round(255 * c)) for c in BASE_COLORS[cid])
        lines.append(f"{cid} {name} {r} {g} {b}")
    return lines
