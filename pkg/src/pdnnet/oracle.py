"""Ground-truth IR drop: a resistive PDN model solved as G V = J per frame."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .graph import TileGrid, tile_index
from .layout import COORD_TOL, Layout

# Dirichlet stamp for pads (S)
G_PAD = 1e9


class NetworkError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class ResistorNetwork:
    """Tile taps (low layer) plus one node per (strip, row).

    ``nodes[k]`` is ``("tile_tap", (i, j))`` or ``("strip_node", (strip, i))``.
    Pads are Dirichlet stamps on strip nodes, so ``pads`` holds indices of
    strip nodes.
    """

    nodes: tuple[tuple[str, tuple[int, int]], ...]
    edge_a: np.ndarray
    edge_b: np.ndarray
    conductance: np.ndarray
    pads: frozenset[int]
    tap_index: np.ndarray  # (n_h, n_w) -> node index
    vdd_v: float

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class IrDropMap:
    grid: np.ndarray  # (n_h, n_w) volts
    tag: object  # frame index or "peak"


def build_resistor_network(layout: Layout, grid: TileGrid) -> ResistorNetwork:
    pdn = layout.pdn
    n_h, n_w = grid.n_h, grid.n_w
    nodes: list[tuple[str, tuple[int, int]]] = [("tile_tap", (i, j)) for i in range(n_h) for j in range(n_w)]
    tap = np.arange(n_h * n_w).reshape(n_h, n_w)
    a: list[int] = []
    b: list[int] = []
    g: list[float] = []

    g_lrl = 1.0 / pdn.r_lrl_ohm_per_tile
    for i in range(n_h):
        for j in range(n_w):
            if j + 1 < n_w:
                a.append(tap[i, j]); b.append(tap[i, j + 1]); g.append(g_lrl)
            if i + 1 < n_h:
                a.append(tap[i, j]); b.append(tap[i + 1, j]); g.append(g_lrl)

    strip_node = {}
    for k, x in enumerate(pdn.vstrip_x_um):
        col = tile_index(x, grid.dx_um, n_w)
        for i in range(n_h):
            idx = len(nodes)
            nodes.append(("strip_node", (k, i)))
            strip_node[k, i] = idx
            a.append(idx); b.append(tap[i, col]); g.append(1.0 / pdn.r_via_ohm)
            if i > 0:
                a.append(strip_node[k, i - 1]); b.append(idx); g.append(1.0 / pdn.r_hpr_ohm_per_tile)

    pads = set()
    for px, py in pdn.pad_xy_um:
        ks = [k for k, x in enumerate(pdn.vstrip_x_um) if abs(x - px) <= COORD_TOL]
        if not ks:
            raise NetworkError(f"pad ({px}, {py}) is not on a strip")
        pads.add(strip_node[ks[0], tile_index(py, grid.dy_um, n_h)])

    net = ResistorNetwork(
        nodes=tuple(nodes),
        edge_a=np.array(a, dtype=np.int64),
        edge_b=np.array(b, dtype=np.int64),
        conductance=np.array(g, dtype=float),
        pads=frozenset(pads),
        tap_index=tap,
        vdd_v=pdn.vdd_v,
    )
    check_structure(net)
    return net


def check_structure(net: ResistorNetwork) -> None:
    if not net.pads:
        raise NetworkError("network has no pads")
    n = net.n_nodes
    adj = sp.coo_matrix((np.ones(len(net.edge_a)), (net.edge_a, net.edge_b)), shape=(n, n))
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp != 1:
        raise NetworkError(f"network is disconnected ({n_comp} components)")


def tile_currents(layout: Layout, grid: TileGrid, frame: int) -> np.ndarray:
    """Per-tile load current (A) for one frame, shape (n_h, n_w)."""
    cur = np.zeros(grid.n_nodes)
    cells = layout.cells
    for node, members in enumerate(grid.tiles):
        for k in members:
            cur[node] += cells[k].leakage_w + cells[k].trace.frames[frame]
    return (cur / layout.pdn.vdd_v).reshape(grid.n_h, grid.n_w)


def assemble_system(net: ResistorNetwork, loads: np.ndarray, g_pad: float = G_PAD):
    """Stamp the weighted Laplacian plus pad stamps.

    ``loads`` holds tap currents shaped like ``net.tap_index``.  Returns the
    CSR matrix G and right-hand side J (sink currents enter negatively).
    """
    if np.any(net.conductance <= 0):
        raise NetworkError("nonpositive conductance")
    loads = np.asarray(loads, dtype=float)
    if loads.shape != net.tap_index.shape:
        raise NetworkError(f"load shape {loads.shape} does not match taps {net.tap_index.shape}")
    n = net.n_nodes
    ea, eb, ge = net.edge_a, net.edge_b, net.conductance
    pads = np.array(sorted(net.pads), dtype=np.int64)
    rows = np.concatenate([ea, eb, ea, eb, pads])
    cols = np.concatenate([ea, eb, eb, ea, pads])
    vals = np.concatenate([ge, ge, -ge, -ge, np.full(len(pads), g_pad)])
    G = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    J = np.zeros(n)
    J[net.tap_index.ravel()] -= loads.ravel()
    J[pads] += g_pad * net.vdd_v
    return G, J


def _pcg(A, b: np.ndarray, rtol: float, max_iter: int) -> tuple[np.ndarray, int]:
    y = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    stop = (rtol * np.linalg.norm(b)) ** 2
    it = 0
    while rr > stop and it < max_iter:
        Ap = A @ p
        alpha = rr / (p @ Ap)
        y += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
    return y, it


def solve(G, J: np.ndarray, tol: float = 1e-10, max_iter: Optional[int] = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients on the SPD system G V = J.

    CG runs on the symmetrically diagonal-scaled matrix.  Pad stamps put
    entries of order 1e9 into G and J, so the unscaled residual is dominated
    by roundoff on the pad rows; refinement rounds (re-solving for the
    remaining residual) are judged on the scaled residual instead, which
    weighs every row by its own stiffness.
    """
    G = sp.csr_matrix(G)
    J = np.asarray(J, dtype=float)
    n = G.shape[0]
    max_iter = 20 * n if max_iter is None else max_iter
    d = G.diagonal()
    if np.any(d <= 0):
        raise SolverError("matrix is not positive definite", float("inf"))
    jnorm = np.linalg.norm(J)
    if jnorm == 0.0:
        return np.zeros(n)
    s = 1.0 / np.sqrt(d)
    A = sp.diags(s) @ G @ sp.diags(s)

    V = np.zeros(n)
    r = J.copy()
    scaled = np.linalg.norm(s * r)
    iters = 0
    for _ in range(4):
        y, it = _pcg(A, s * r, min(tol, 1e-12), max_iter - iters)
        iters += it
        V_new = V + s * y
        r_new = J - G @ V_new
        scaled_new = np.linalg.norm(s * r_new)
        if scaled_new >= scaled:
            break
        V, r, gain, scaled = V_new, r_new, scaled / max(scaled_new, 1e-300), scaled_new
        if gain < 2.0 or iters >= max_iter:
            break
    rel = np.linalg.norm(r) / jnorm
    if rel > tol:
        raise SolverError(f"CG did not converge in {iters} iterations", rel)
    return V


def solve_drop(net: ResistorNetwork, loads: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Tap voltage drops vdd - V, shaped like the tile grid.

    Substituting V = vdd - D into G V = J leaves G D = loads on the taps
    (the Laplacian annihilates the constant and the pad stamps cancel), so
    the drop is solved for directly.  Zero loads give exactly zero drop.
    """
    G, _ = assemble_system(net, loads)
    rhs = np.zeros(net.n_nodes)
    rhs[net.tap_index.ravel()] = np.asarray(loads, dtype=float).ravel()
    D = solve(G, rhs, tol)
    return D[net.tap_index]


def simulate_dynamic(layout: Layout, grid: TileGrid, tol: float = 1e-10):
    """Per-frame DC solves; returns (frame maps, peak-over-frames map)."""
    net = build_resistor_network(layout, grid)
    frames = []
    for t in range(max(layout.t_sim, 1)):
        loads = tile_currents(layout, grid, t) if layout.cells else np.zeros(net.tap_index.shape)
        drop = solve_drop(net, loads, tol)
        # the pad stamp leaves ~1e-9 V of slack; clip it so drops stay in [0, vdd]
        frames.append(IrDropMap(np.clip(drop, 0.0, net.vdd_v), t))
    peak = np.max(np.stack([f.grid for f in frames]), axis=0)
    return frames, IrDropMap(peak, "peak")
