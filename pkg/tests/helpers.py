"""Small fixture builders shared by the tests."""

import numpy as np

from pdnnet.layout import CellInstance, Layout, PdnSpec, PowerTrace


def make_layout(width, height, strips, pads, cells=(), vdd=0.9, r_lrl=1.0, r_hpr=0.02, r_via=0.1, t_sim=1):
    """``cells`` holds (x, y, leakage, frames...) tuples."""
    built = []
    for k, (x, y, leak, *frames) in enumerate(cells):
        frames = tuple(frames) or (0.0,) * t_sim
        built.append(CellInstance(f"c{k}", x, y, leak, 0.0, 0.0, PowerTrace(frames)))
    pdn = PdnSpec(vdd, tuple(strips), tuple(pads), r_lrl, r_hpr, r_via)
    return Layout(width, height, tuple(built), pdn)


def random_layout(rng, n_w, n_h, n_cells=None, t_sim=2, dx=1.0):
    """Random cells on an n_w x n_h unit-tile die with one to three strips."""
    W, H = n_w * dx, n_h * dx
    n_strips = int(rng.integers(1, min(3, n_w) + 1))
    cols = np.sort(rng.choice(n_w, n_strips, replace=False))
    strips = [float((c + rng.uniform(0.1, 0.9)) * dx) for c in cols]
    pads = [(strips[0], 0.0)] + [(s, H) for s in strips if rng.uniform() < 0.5]
    n_cells = int(rng.integers(1, 3 * n_w * n_h)) if n_cells is None else n_cells
    cells = []
    for _ in range(n_cells):
        frames = rng.uniform(0, 1e-3, t_sim)
        cells.append((rng.uniform(0, W), rng.uniform(0, H), rng.uniform(0, 1e-4), *frames))
    return make_layout(W, H, strips, pads, cells, r_lrl=rng.uniform(0.5, 2), r_hpr=rng.uniform(0.01, 0.1),
                       r_via=rng.uniform(0.05, 0.5), t_sim=t_sim)
