"""Uniform tiling of a layout and the directed PDN graph built on it.

Nodes are tiles in row-major order (node ``i * n_w + j`` is row ``i``,
column ``j``; row 0 is y = 0).  Horizontal edge directions follow the
current flowing away from the nearest vertical power strip; vertical
neighbours are always joined in both directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .layout import Layout

# horizontal edge cases, also the per-tile codes of graph.pgm
LEFTWARD, BOTH, RIGHTWARD = 0, 1, 2


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class TileGrid:
    dx_um: float
    dy_um: float
    n_w: int
    n_h: int
    tiles: tuple[tuple[int, ...], ...]  # cell indices per node, row-major

    @property
    def n_nodes(self) -> int:
        return self.n_w * self.n_h

    def node(self, i: int, j: int) -> int:
        return i * self.n_w + j


@dataclass(frozen=True)
class PdnGraph:
    n_h: int
    n_w: int
    features: np.ndarray  # (N, C)
    edges: np.ndarray  # (E, 2) int, rows (src, dst) sorted
    feature_channel_names: tuple[str, ...]

    @property
    def n_nodes(self) -> int:
        return self.n_h * self.n_w

    @property
    def node_coords(self) -> np.ndarray:
        ii, jj = np.divmod(np.arange(self.n_nodes), self.n_w)
        return np.stack([ii, jj], axis=1)

    @property
    def src(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def dst(self) -> np.ndarray:
        return self.edges[:, 1]


def tile_index(coord: float, size: float, count: int) -> int:
    # a cell on the far die edge belongs to the last tile
    return min(int(math.floor(coord / size)), count - 1)


def tile_grid(layout: Layout, dx_um: float, dy_um: float) -> TileGrid:
    if not (dx_um > 0 and dy_um > 0):
        raise GridError(f"tile size must be positive, got {dx_um}x{dy_um}")
    W, H = layout.width_um, layout.height_um
    if dx_um > W and dy_um > H and not layout.cells:
        raise GridError("degenerate grid: tile larger than die and no cells")
    n_w = max(1, math.ceil(W / dx_um))
    n_h = max(1, math.ceil(H / dy_um))
    buckets: list[list[int]] = [[] for _ in range(n_w * n_h)]
    for k, c in enumerate(layout.cells):
        i = tile_index(c.y_um, dy_um, n_h)
        j = tile_index(c.x_um, dx_um, n_w)
        buckets[i * n_w + j].append(k)
    return TileGrid(dx_um, dy_um, n_w, n_h, tuple(tuple(b) for b in buckets))


def channel_names(t_sim: int) -> tuple[str, ...]:
    return ("leakage", "internal", "switching", *(f"frame{t}" for t in range(t_sim)))


def cell_feature_rows(layout: Layout) -> np.ndarray:
    """Per-cell rows [leakage, internal, switching, trace...], shape (n_cells, 3 + T)."""
    T = layout.t_sim
    rows = np.zeros((len(layout.cells), 3 + T))
    for k, c in enumerate(layout.cells):
        rows[k, :3] = (c.leakage_w, c.internal_w, c.switching_w)
        rows[k, 3:] = c.trace.frames
    return rows


def node_features(grid: TileGrid, layout: Layout) -> np.ndarray:
    """Sum the per-cell power rows of every tile; empty tiles are zero rows."""
    rows = cell_feature_rows(layout)
    feats = np.zeros((grid.n_nodes, rows.shape[1]))
    for node, members in enumerate(grid.tiles):
        for k in members:
            feats[node] += rows[k]
    return feats


def nearest_strip_offset(j: int, grid: TileGrid, strips: Sequence[float]) -> float:
    """Signed offset (in tiles) from the centre of column ``j`` to its nearest strip.

    Equidistant strips resolve to the left one (the negative offset).
    """
    if len(strips) == 0:
        raise GridError("no strips")
    vx = (j + 0.5) * grid.dx_um
    best = math.inf
    for x in strips:
        s = (x - vx) / grid.dx_um
        if abs(s) < abs(best) or (abs(s) == abs(best) and s < best):
            best = s
    return best


def edge_case(s: float) -> int:
    if s <= 0:
        return RIGHTWARD
    if s <= 1:
        return BOTH
    return LEFTWARD


def column_cases(grid: TileGrid, strips: Sequence[float]) -> list[int]:
    return [edge_case(nearest_strip_offset(j, grid, strips)) for j in range(grid.n_w)]


def build_edges(grid: TileGrid, strips: Sequence[float]) -> np.ndarray:
    cases = column_cases(grid, strips)
    n_w = grid.n_w
    edges = []
    for i in range(grid.n_h):
        for j in range(n_w):
            v = i * n_w + j
            if j < n_w - 1:
                right = v + 1
                if cases[j] == RIGHTWARD:
                    edges.append((v, right))
                elif cases[j] == BOTH:
                    edges += [(v, right), (right, v)]
                else:
                    edges.append((right, v))
            if i < grid.n_h - 1:
                up = v + n_w
                edges += [(v, up), (up, v)]
    if not edges:
        return np.zeros((0, 2), dtype=np.int64)
    return np.array(sorted(edges), dtype=np.int64)


def build_graph(grid: TileGrid, layout: Layout) -> PdnGraph:
    return PdnGraph(
        n_h=grid.n_h,
        n_w=grid.n_w,
        features=node_features(grid, layout),
        edges=build_edges(grid, layout.pdn.vstrip_x_um),
        feature_channel_names=channel_names(layout.t_sim),
    )


def to_bidirected(g: PdnGraph) -> PdnGraph:
    pairs = {tuple(e) for e in g.edges.tolist()}
    pairs |= {(b, a) for a, b in pairs}
    edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return replace(g, edges=edges)


def is_bidirected(edges: np.ndarray) -> bool:
    pairs = {tuple(e) for e in np.asarray(edges).tolist()}
    return all((b, a) in pairs for a, b in pairs)
