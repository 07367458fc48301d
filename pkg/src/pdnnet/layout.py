"""Layout / PDN data model, the line-oriented layout file format, and a seeded
synthetic layout generator.

Units are fixed throughout: µm for lengths, W for power, V for voltage and
Ω for resistance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

# absolute slack used when matching pad x-coordinates to strips
COORD_TOL = 1e-9


class LayoutError(ValueError):
    """Raised for malformed layout files or invalid generator specs."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class PowerTrace:
    frames: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class CellInstance:
    id: str
    x_um: float
    y_um: float
    leakage_w: float
    internal_w: float
    switching_w: float
    trace: PowerTrace


@dataclass(frozen=True)
class PdnSpec:
    vdd_v: float
    vstrip_x_um: tuple[float, ...]
    pad_xy_um: tuple[tuple[float, float], ...]
    r_lrl_ohm_per_tile: float
    r_hpr_ohm_per_tile: float
    r_via_ohm: float


@dataclass(frozen=True)
class Layout:
    width_um: float
    height_um: float
    cells: tuple[CellInstance, ...]
    pdn: PdnSpec

    @property
    def t_sim(self) -> int:
        """Frame count shared by every cell trace (0 for an empty layout)."""
        return len(self.cells[0].trace) if self.cells else 0


@dataclass(frozen=True)
class GenSpec:
    """Parameters of the synthetic generator.

    Either ``strip_pitch_um`` (regular PDN) or ``strips_um`` (explicit,
    possibly irregular PDN) must be given.
    """

    width_um: float
    height_um: float
    n_cells: int
    strip_pitch_um: Optional[float] = None
    strips_um: Optional[Sequence[float]] = None
    power_scale_w: float = 1e-5
    t_sim: int = 4
    rng_seed: int = 0
    vdd_v: float = 0.9
    r_lrl_ohm_per_tile: float = 1.0
    r_hpr_ohm_per_tile: float = 0.02
    r_via_ohm: float = 0.1


def validate(layout: Layout) -> list[str]:
    """Return one description per violated invariant; empty when valid."""
    out: list[str] = []
    W, H = layout.width_um, layout.height_um
    if not (W > 0 and H > 0):
        out.append(f"die: non-positive size {W}x{H}")
    pdn = layout.pdn
    if not pdn.vdd_v > 0:
        out.append(f"vdd: non-positive supply {pdn.vdd_v}")
    for name in ("r_lrl_ohm_per_tile", "r_hpr_ohm_per_tile", "r_via_ohm"):
        if not getattr(pdn, name) > 0:
            out.append(f"res: {name} must be > 0")
    strips = pdn.vstrip_x_um
    if not strips:
        out.append("strip: at least one strip required")
    for a, b in zip(strips, strips[1:]):
        if not b > a:
            out.append(f"strip {b}: strips not strictly increasing")
    for x in strips:
        if not 0 <= x <= W:
            out.append(f"strip {x}: outside die")
    if not pdn.pad_xy_um:
        out.append("pad: at least one pad required")
    for x, y in pdn.pad_xy_um:
        if not any(abs(x - s) <= COORD_TOL for s in strips):
            out.append(f"pad ({x}, {y}): pad off-strip")
        if not 0 <= y <= H:
            out.append(f"pad ({x}, {y}): outside die")

    seen: set[str] = set()
    t_sim = layout.t_sim
    for c in layout.cells:
        if c.id in seen:
            out.append(f"cell {c.id}: duplicate id")
        seen.add(c.id)
        if not (0 <= c.x_um <= W and 0 <= c.y_um <= H):
            out.append(f"cell {c.id}: cell outside die")
        for name in ("leakage_w", "internal_w", "switching_w"):
            if not getattr(c, name) >= 0:
                out.append(f"cell {c.id}: negative {name}")
        if len(c.trace) < 1:
            out.append(f"cell {c.id}: empty trace")
        elif len(c.trace) != t_sim:
            out.append(f"cell {c.id}: trace length {len(c.trace)} != {t_sim}")
        if any(not f >= 0 for f in c.trace.frames):
            out.append(f"cell {c.id}: negative trace frame")
    return out


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def serialize_layout(layout: Layout) -> str:
    pdn = layout.pdn
    lines = [
        f"die {_fmt(layout.width_um)} {_fmt(layout.height_um)}",
        f"vdd {_fmt(pdn.vdd_v)}",
        f"res {_fmt(pdn.r_lrl_ohm_per_tile)} {_fmt(pdn.r_hpr_ohm_per_tile)} {_fmt(pdn.r_via_ohm)}",
    ]
    lines += [f"strip {_fmt(x)}" for x in pdn.vstrip_x_um]
    lines += [f"pad {_fmt(x)} {_fmt(y)}" for x, y in pdn.pad_xy_um]
    for c in layout.cells:
        nums = [c.x_um, c.y_um, c.leakage_w, c.internal_w, c.switching_w, *c.trace.frames]
        lines.append(" ".join(["cell", c.id, *map(_fmt, nums)]))
    return "\n".join(lines) + "\n"


def _floats(tokens: list[str], lineno: int) -> list[float]:
    try:
        vals = [float(t) for t in tokens]
    except ValueError as exc:
        raise LayoutError(f"bad number ({exc})", lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise LayoutError("non-finite number", lineno)
    return vals


def parse_layout(text: str) -> Layout:
    """Parse the line-oriented layout format and validate the result.

    Raises LayoutError with the line number on syntax errors and with the
    offending entity on semantic errors.
    """
    die = vdd = res = None
    strips: list[float] = []
    pads: list[tuple[float, float]] = []
    cells: list[CellInstance] = []
    arity = {"die": 2, "vdd": 1, "res": 3, "strip": 1, "pad": 2}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        if key in arity:
            if len(rest) != arity[key]:
                raise LayoutError(f"'{key}' expects {arity[key]} fields, got {len(rest)}", lineno)
            vals = _floats(rest, lineno)
            if key == "die":
                if die is not None:
                    raise LayoutError("duplicate 'die'", lineno)
                die = vals
            elif key == "vdd":
                if vdd is not None:
                    raise LayoutError("duplicate 'vdd'", lineno)
                vdd = vals[0]
            elif key == "res":
                if res is not None:
                    raise LayoutError("duplicate 'res'", lineno)
                res = vals
            elif key == "strip":
                strips.append(vals[0])
            else:
                pads.append((vals[0], vals[1]))
        elif key == "cell":
            if len(rest) < 7:
                raise LayoutError("'cell' expects id, x, y, 3 powers and >= 1 trace frame", lineno)
            vals = _floats(rest[1:], lineno)
            cells.append(
                CellInstance(rest[0], vals[0], vals[1], vals[2], vals[3], vals[4], PowerTrace(tuple(vals[5:])))
            )
        else:
            raise LayoutError(f"unknown directive '{key}'", lineno)

    for name, val in (("die", die), ("vdd", vdd), ("res", res)):
        if val is None:
            raise LayoutError(f"missing '{name}' directive")
    layout = Layout(
        width_um=die[0],
        height_um=die[1],
        cells=tuple(cells),
        pdn=PdnSpec(vdd, tuple(strips), tuple(pads), res[0], res[1], res[2]),
    )
    problems = validate(layout)
    if problems:
        raise LayoutError(problems[0])
    return layout


def read_layout(path) -> Layout:
    with open(path, encoding="utf-8") as fh:
        return parse_layout(fh.read())


def write_layout(layout: Layout, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_layout(layout))


def regular_strips(width_um: float, pitch_um: float) -> list[float]:
    """Strip x-positions pitch/2 + k*pitch that fall inside the die."""
    xs = []
    k = 0
    while True:
        x = pitch_um / 2 + k * pitch_um
        if x > width_um:
            return xs
        xs.append(x)
        k += 1


def _r9(v: float) -> float:
    # generated values must survive the 9-significant-digit file format
    return float(_fmt(v))


def generate_synthetic(spec: GenSpec) -> Layout:
    """Draw a random placement with a regular or explicit-strip PDN.

    Pads sit at both ends (y = 0 and y = H) of every strip.
    """
    W, H = spec.width_um, spec.height_um
    if not (W > 0 and H > 0):
        raise LayoutError(f"zero-area die {W}x{H}")
    if spec.n_cells < 1:
        raise LayoutError("n_cells must be >= 1")
    if spec.t_sim < 1:
        raise LayoutError("t_sim must be >= 1")
    if spec.strips_um is not None:
        strips = sorted(_r9(x) for x in spec.strips_um)
    elif spec.strip_pitch_um is not None:
        if spec.strip_pitch_um <= 0:
            raise LayoutError("strip pitch must be > 0")
        if spec.strip_pitch_um > W:
            raise LayoutError(f"strip pitch {spec.strip_pitch_um} larger than die width {W}")
        strips = [_r9(x) for x in regular_strips(W, spec.strip_pitch_um)]
    else:
        raise LayoutError("either strip_pitch_um or strips_um is required")
    if not strips:
        raise LayoutError("PDN has no strips")

    rng = np.random.default_rng(spec.rng_seed)
    n, T, p = spec.n_cells, spec.t_sim, spec.power_scale_w
    xs = rng.uniform(0.0, W, n)
    ys = rng.uniform(0.0, H, n)
    leak = 0.1 * rng.uniform(0.0, 1.0, n) * p
    internal = np.abs(rng.standard_normal(n)) * 0.5 * p
    switching = np.abs(rng.standard_normal(n)) * 0.5 * p
    traces = np.abs(rng.standard_normal((n, T))) * p

    width = len(str(n - 1))
    cells = tuple(
        CellInstance(
            id=f"c{i:0{width}d}",
            x_um=_r9(xs[i]),
            y_um=_r9(ys[i]),
            leakage_w=_r9(leak[i]),
            internal_w=_r9(internal[i]),
            switching_w=_r9(switching[i]),
            trace=PowerTrace(tuple(_r9(v) for v in traces[i])),
        )
        for i in range(n)
    )
    pads = tuple((x, y) for x in strips for y in (0.0, _r9(H)))
    pdn = PdnSpec(
        vdd_v=spec.vdd_v,
        vstrip_x_um=tuple(strips),
        pad_xy_um=pads,
        r_lrl_ohm_per_tile=spec.r_lrl_ohm_per_tile,
        r_hpr_ohm_per_tile=spec.r_hpr_ohm_per_tile,
        r_via_ohm=spec.r_via_ohm,
    )
    return Layout(_r9(W), _r9(H), cells, pdn)
