"""Allocentric grid memory: feature projection and recurrent accumulation.

Per step, egocentric feature-map locations are routed to map cells by the
projective index; when several locations land in one cell, the record with
the greatest world height wins. A cell-wise GRU (shared over cells) updates
only the cells observed that step. The bidirectional variant runs a second
GRU over the reversed sequence with its own parameters and fuses the two
terminal memories with a 3x3 convolution.

The recurrence is kept sparse: only ever-observed cells carry state, and the
dense map tensor is materialized once per direction. Cells never referenced
by any step stay exactly zero.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Conv2d,
    GRUCell,
    Module,
    Tensor,
    concat,
    gather,
    reshape,
    scatter,
    zeros,
)
from .geometry import GridSpec, ProjectionIndex

VARIANTS = ("gru", "gru_conv", "gru_2cells", "bigru_concat", "bigru_convfusion")


class ProjectedFeatures:
    """Sparse per-step records: flat cell id, feature row, world height."""

    def __init__(self, cells: np.ndarray, heights: np.ndarray, features: Tensor,
                 grid: GridSpec):
        self.cells = np.asarray(cells, dtype=np.int64)
        self.heights = np.asarray(heights, dtype=np.float64)
        self.features = features
        self.grid = grid
        if self.cells.ndim != 1 or self.cells.shape != self.heights.shape:
            raise ValueError("cells and heights must be matching 1-D tables")
        if features.shape[0] != self.cells.size:
            raise ValueError(
                f"feature rows {features.shape[0]} != record count {self.cells.size}"
            )
        if np.unique(self.cells).size != self.cells.size:
            raise ValueError("aggregated records must be unique per cell")
        if self.cells.size and not np.isfinite(self.heights).all():
            raise ValueError("record heights must be finite")

    def __len__(self) -> int:
        return int(self.cells.size)


def project_step(features: Tensor, index: ProjectionIndex) -> ProjectedFeatures:
    """Aggregate one frame's features into per-cell records (max height wins).

    `features` is (h', w', C) or (1, h', w', C) at the stride that produced
    `index`. Height ties break toward the smallest feature-map location.
    """
    if features.data.ndim == 4:
        if features.shape[0] != 1:
            raise ValueError("project_step takes a single frame")
        features = reshape(features, features.shape[1:])
    hw = index.valid.shape
    if features.shape[:2] != hw:
        raise ValueError(f"features {features.shape[:2]} != index table {hw}")

    c = features.shape[2]
    flat_feats = reshape(features, (hw[0] * hw[1], c))
    locs = np.nonzero(index.valid.reshape(-1))[0]
    if locs.size == 0:
        return ProjectedFeatures(np.empty(0, np.int64), np.empty(0),
                                 gather(flat_feats, locs), index.grid)
    cells = index.flat_cells.reshape(-1)[locs]
    heights = index.height.reshape(-1)[locs]

    order = np.lexsort((-locs, heights, cells))
    cells_sorted = cells[order]
    last = np.nonzero(np.diff(cells_sorted))[0]
    winners = order[np.append(last, cells_sorted.size - 1)]
    return ProjectedFeatures(
        cells[winners], heights[winners], gather(flat_feats, locs[winners]),
        index.grid,
    )


class AllocentricMemory:
    """Dense per-cell state plus an observation mask (functional updates)."""

    def __init__(self, state: Tensor, observed: np.ndarray, grid: GridSpec,
                 direction: str = "forward"):
        if state.shape != (grid.cells, state.shape[1]):
            raise ValueError(f"state shape {state.shape} != ({grid.cells}, C)")
        if direction not in ("forward", "backward"):
            raise ValueError(f"bad direction tag {direction!r}")
        self.state = state
        self.observed = observed
        self.grid = grid
        self.direction = direction

    @classmethod
    def initial(cls, grid: GridSpec, channels: int,
                direction: str = "forward") -> "AllocentricMemory":
        return cls(zeros((grid.cells, channels)), np.zeros(grid.cells, bool),
                   grid, direction)

    @property
    def channels(self) -> int:
        return self.state.shape[1]

    def map_state(self) -> Tensor:
        return reshape(self.state, (self.grid.height, self.grid.width, self.channels))


def memory_step(mem: AllocentricMemory, proj: ProjectedFeatures,
                gru: GRUCell, step_index: int | None = None) -> AllocentricMemory:
    """GRU update at this step's observed cells; all other cells unchanged."""
    if len(proj) == 0:
        return AllocentricMemory(mem.state, mem.observed.copy(), mem.grid, mem.direction)
    try:
        h_prev = gather(mem.state, proj.cells)
        h_new = gru(proj.features, h_prev)
        state = scatter(mem.state, proj.cells, h_new)
    except ValueError as exc:
        at = "" if step_index is None else f" at step {step_index}"
        raise ValueError(f"memory update failed{at}: {exc}") from exc
    observed = mem.observed.copy()
    observed[proj.cells] = True
    return AllocentricMemory(state, observed, mem.grid, mem.direction)


class SpatialMemory(Module):
    """Recurrent map memory with the ablation variants behind one switch."""

    def __init__(self, variant: str, in_channels: int, channels: int,
                 rng: np.random.Generator, tie_directions: bool = False):
        if variant not in VARIANTS:
            raise ValueError(f"unknown memory variant {variant!r}; choose from {VARIANTS}")
        self.variant = variant
        self.in_channels = in_channels
        self.channels = channels
        self.tie_directions = tie_directions
        self.gru_f = GRUCell(in_channels, channels, rng)
        if variant == "gru_2cells":
            self.gru_f2 = GRUCell(channels, channels, rng)
        if variant in ("bigru_concat", "bigru_convfusion") and not tie_directions:
            self.gru_b = GRUCell(in_channels, channels, rng)
        if variant in ("gru_conv", "bigru_convfusion"):
            cin = channels if variant == "gru_conv" else 2 * channels
            self.fuse = Conv2d(3, 3, cin, channels, rng, stride=1, padding=1)

    @property
    def backward_cell(self) -> GRUCell:
        return self.gru_f if self.tie_directions else getattr(self, "gru_b", self.gru_f)

    @property
    def out_channels(self) -> int:
        return 2 * self.channels if self.variant == "bigru_concat" else self.channels

    def run(self, steps: list[ProjectedFeatures], grid: GridSpec):
        """Consume a step sequence, returning (map tensor H x W x C_out,
        observed mask H x W)."""
        if not steps:
            raise ValueError("memory pass requires a nonempty step sequence")
        for s in steps:
            if s.grid != grid:
                raise ValueError("projected steps disagree with the target grid")

        if self.variant == "gru":
            dense, observed = _run_direction(steps, self.gru_f, grid, self.channels)
            out = _to_map(dense, grid, self.channels)
        elif self.variant == "gru_conv":
            dense, observed = _run_direction(steps, self.gru_f, grid, self.channels)
            out = self.fuse(_as_batch(dense, grid, self.channels))
            out = reshape(out, (grid.height, grid.width, self.channels))
        elif self.variant == "gru_2cells":
            dense, observed = _run_direction(steps, self.gru_f, grid, self.channels,
                                             second=self.gru_f2)
            out = _to_map(dense, grid, self.channels)
        elif self.variant == "bigru_concat":
            fwd, observed = _run_direction(steps, self.gru_f, grid, self.channels)
            bwd, _ = _run_direction(steps[::-1], self.backward_cell, grid, self.channels)
            out = _to_map(concat([fwd, bwd], axis=1), grid, 2 * self.channels)
        else:  # bigru_convfusion
            fwd, observed = _run_direction(steps, self.gru_f, grid, self.channels)
            bwd, _ = _run_direction(steps[::-1], self.backward_cell, grid, self.channels)
            both = _as_batch(concat([fwd, bwd], axis=1), grid, 2 * self.channels)
            out = reshape(self.fuse(both), (grid.height, grid.width, self.channels))
        return out, observed.reshape(grid.height, grid.width)


def run_bidirectional(steps: list[ProjectedFeatures], module: SpatialMemory,
                      grid: GridSpec):
    if module.variant != "bigru_convfusion":
        raise ValueError("run_bidirectional requires the bigru_convfusion variant")
    return module.run(steps, grid)


def run_variant(module: SpatialMemory, steps: list[ProjectedFeatures],
                grid: GridSpec):
    return module.run(steps, grid)


# ---------------------------------------------------------------------------

def _run_direction(steps, gru, grid, channels, second=None):
    """Sparse recurrence over one direction; returns the dense final state
    (cells x C) and the flat observed mask."""
    slot_of: dict[int, int] = {}
    order: list[int] = []
    state: Tensor | None = None
    state2: Tensor | None = None
    for k, proj in enumerate(steps):
        if len(proj) == 0:
            continue
        fresh = [c for c in proj.cells.tolist() if c not in slot_of]
        if fresh:
            for c in fresh:
                slot_of[c] = len(order)
                order.append(c)
            pad = zeros((len(fresh), channels))
            state = pad if state is None else concat([state, pad], axis=0)
            if second is not None:
                pad2 = zeros((len(fresh), channels))
                state2 = pad2 if state2 is None else concat([state2, pad2], axis=0)
        idx = np.fromiter((slot_of[c] for c in proj.cells.tolist()), np.int64,
                          len(proj))
        try:
            h = gru(proj.features, gather(state, idx))
            state = scatter(state, idx, h)
            if second is not None:
                h2 = second(h, gather(state2, idx))
                state2 = scatter(state2, idx, h2)
        except ValueError as exc:
            raise ValueError(f"memory update failed at step {k}: {exc}") from exc

    dense = zeros((grid.cells, channels))
    observed = np.zeros(grid.cells, bool)
    final = state2 if second is not None else state
    if order:
        dense = scatter(dense, np.asarray(order, np.int64), final)
        observed[np.asarray(order, np.int64)] = True
    return dense, observed


def _to_map(dense: Tensor, grid: GridSpec, channels: int) -> Tensor:
    return reshape(dense, (grid.height, grid.width, channels))


def _as_batch(dense: Tensor, grid: GridSpec, channels: int) -> Tensor:
    return reshape(dense, (1, grid.height, grid.width, channels))
