"""Learning-free projection of ground-truth pixel labels into the map.

This is the pipeline's upper bound: per-pixel true labels are back-projected
and written into the grid, keeping the highest-scoring record per cell (max
world height, matching the ground-truth map rule). Agreement with the
ground-truth map on observed non-void cells bounds what any learned model
can reach through the same projection.
"""

from __future__ import annotations

import numpy as np

from .categories import NUM_CLASSES, VOID
from .geometry import GridSpec, projection_index
from .mapio import SemanticMap
from .worldgen import VoxelScene, ground_truth_map


def project_gt_map(frames, grid: GridSpec) -> tuple[SemanticMap, np.ndarray]:
    """Project per-pixel ground-truth labels over a frame sequence.

    Returns (map of winning labels, observed-cell mask)."""
    cells, heights, labels = [], [], []
    for obs in frames:
        index = projection_index(obs.depth, obs.intrinsics, obs.pose, grid,
                                 feature_stride=1)
        keep = index.valid & (obs.gt_pixel_labels < NUM_CLASSES)
        cells.append(index.flat_cells[keep])
        heights.append(index.height[keep])
        labels.append(obs.gt_pixel_labels[keep])
    cells = np.concatenate(cells)
    heights = np.concatenate(heights)
    labels = np.concatenate(labels)

    data = np.full(grid.cells, VOID, np.uint8)
    observed = np.zeros(grid.cells, bool)
    if cells.size:
        order = np.lexsort((heights, cells))
        cs = cells[order]
        last = np.append(np.nonzero(np.diff(cs))[0], cs.size - 1)
        win = order[last]
        data[cells[win]] = labels[win]
        observed[cells[win]] = True
    return (
        SemanticMap(data.reshape(grid.height, grid.width), grid),
        observed.reshape(grid.height, grid.width),
    )


def gt_projection_agreement(scene: VoxelScene, frames, grid: GridSpec):
    """Fraction of observed non-void cells where the projected ground-truth
    labels reproduce the ground-truth map."""
    projected, observed = project_gt_map(frames, grid)
    gt = ground_truth_map(scene, grid)
    keep = observed & (gt.data != VOID)
    total = int(keep.sum())
    if total == 0:
        return 1.0, projected, observed, gt
    agree = int((projected.data[keep] == gt.data[keep]).sum())
    return agree / total, projected, observed, gt
