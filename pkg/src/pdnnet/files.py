"""Plain-text artifacts: grid CSVs, PGM heatmaps and the graph CSV.

Grid CSVs hold one tile row per line, row 0 first (y = 0).  Floats are
written with 17 significant digits so a read-back is exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .graph import BOTH, LEFTWARD, RIGHTWARD, PdnGraph


class FormatError(ValueError):
    pass


def _g(v: float) -> str:
    return f"{v:.17g}"


def write_grid_csv(grid: np.ndarray, path) -> None:
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    Path(path).write_text("".join(",".join(_g(v) for v in row) + "\n" for row in grid))


def read_grid_csv(path) -> np.ndarray:
    rows = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows:
        raise FormatError(f"{path}: empty grid file")
    try:
        data = [[float(x) for x in ln.split(",")] for ln in rows]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if len({len(r) for r in data}) != 1:
        raise FormatError(f"{path}: ragged rows")
    return np.array(data)


def write_pgm(grid: np.ndarray, path, vmax: float | None = None, bits: int = 16) -> None:
    """Binary PGM with a linear map [0, vmax] -> [0, maxval]; row 0 at the bottom."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    maxval = (1 << bits) - 1
    top = float(grid.max()) if vmax is None else float(vmax)
    scaled = np.clip(grid / top, 0.0, 1.0) if top > 0 else np.zeros_like(grid)
    pix = np.rint(scaled * maxval)[::-1]
    body = pix.astype(">u2" if bits > 8 else "u1").tobytes()
    h, w = grid.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + body)


def read_pgm(path) -> np.ndarray:
    """Raw pixel values, flipped back so row 0 is y = 0."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise FormatError(f"{path}: not a binary PGM")
    w, h = (int(x) for x in parts[1].split())
    maxval = int(parts[2])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(parts[3], dtype=dtype, count=w * h).reshape(h, w)[::-1].astype(int)


def direction_codes(g: PdnGraph) -> np.ndarray:
    """Per-tile horizontal edge code (LEFTWARD / BOTH / RIGHTWARD).

    A tile takes the code of the pair it forms with its right neighbour; the
    last column reuses the pair to its left.
    """
    pairs = {tuple(e) for e in g.edges.tolist()}
    codes = np.full((g.n_h, g.n_w), BOTH, dtype=int)
    for i in range(g.n_h):
        for j in range(g.n_w):
            a = j if j < g.n_w - 1 else j - 1
            if a < 0:
                continue
            v = i * g.n_w + a
            fwd, back = (v, v + 1) in pairs, (v + 1, v) in pairs
            codes[i, j] = BOTH if fwd and back else RIGHTWARD if fwd else LEFTWARD
    return codes


def write_graph_csv(g: PdnGraph, path) -> None:
    lines = [
        f"#grid {g.n_h} {g.n_w}",
        "#channels " + " ".join(g.feature_channel_names),
        "#nodes i j " + " ".join(f"f{k}" for k in range(g.features.shape[1])),
    ]
    for (i, j), row in zip(g.node_coords.tolist(), g.features):
        lines.append(",".join([str(i), str(j), *(_g(v) for v in row)]))
    lines.append("#edges src dst")
    lines += [f"{a},{b}" for a, b in g.edges.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_graph_csv(path) -> PdnGraph:
    lines = Path(path).read_text().splitlines()
    try:
        tag, n_h, n_w = lines[0].split()
        if tag != "#grid":
            raise FormatError(f"{path}: missing #grid header")
        n_h, n_w = int(n_h), int(n_w)
        names = tuple(lines[1].split()[1:])
        if not lines[2].startswith("#nodes"):
            raise FormatError(f"{path}: missing #nodes section")
        n = n_h * n_w
        node_rows = [ln.split(",") for ln in lines[3:3 + n]]
        if lines[3 + n] != "#edges src dst":
            raise FormatError(f"{path}: expected #edges after {n} node rows")
        coords = np.array([[int(r[0]), int(r[1])] for r in node_rows])
        feats = np.array([[float(x) for x in r[2:]] for r in node_rows]).reshape(n, -1)
        edges = np.array(
            [[int(x) for x in ln.split(",")] for ln in lines[4 + n:] if ln.strip()], dtype=np.int64
        ).reshape(-1, 2)
    except (IndexError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: malformed graph file ({exc})") from None
    g = PdnGraph(n_h, n_w, feats, edges, names)
    if not np.array_equal(coords, g.node_coords):
        raise FormatError(f"{path}: node rows out of row-major order")
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise FormatError(f"{path}: edge references a missing node")
    if len(names) != feats.shape[1]:
        raise FormatError(f"{path}: {len(names)} channel names for {feats.shape[1]} feature columns")
    return g
