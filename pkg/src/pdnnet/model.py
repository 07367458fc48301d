"""Dual-branch GNN / CNN IR drop predictor.

The GNN branch embeds node power features, runs voltage-drop acquiring
blocks over the directed PDN graph (messages follow edge direction) and
neighbour-influence blocks over its bidirected closure, and reads out one
tanh value per node.  The CNN branch rasterizes the same features onto a
fixed canvas whose third axis is the feature channel, encodes it with 3-D
convolutions, averages out that axis and decodes in 2-D with skip inputs.
A small per-node MLP fuses the branch outputs on the tile grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import PdnGraph, is_bidirected, to_bidirected

# small positive bias keeps ReLUs off their kink on empty tiles
BIAS_INIT = 0.1

VARIANTS = ("pdnnet", "mixed", "full_vd", "full_ni", "cnn_single", "cnn_dual", "gnn_single", "gnn_dual")


@dataclass(frozen=True)
class ModelConfig:
    c_in: int
    d_hidden: int = 32
    n_vd_blocks: int = 2
    n_ni_blocks: int = 2
    h_f: int = 32
    w_f: int = 32
    cnn_levels: int = 3
    cnn_channels: tuple[int, ...] = (8, 16, 32)
    fusion_hidden: int = 16
    variant: str = "pdnnet"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if len(self.cnn_channels) != self.cnn_levels:
            raise ValueError("cnn_channels needs one width per level")
        step = 2**self.cnn_levels
        if self.h_f % step or self.w_f % step:
            raise ValueError(f"canvas {self.h_f}x{self.w_f} not divisible by 2^{self.cnn_levels}")
        widths = (self.c_in, self.d_hidden, self.fusion_hidden, *self.cnn_channels)
        if min(widths) < 1 or self.n_vd_blocks < 0 or self.n_ni_blocks < 0:
            raise ValueError("all widths must be >= 1")

    def branches(self) -> list[tuple[str, tuple[str, ...]]]:
        """Branch kinds with their GNN block sequence (empty for CNN)."""
        n = self.n_vd_blocks + self.n_ni_blocks
        mixed = ("vd",) * self.n_vd_blocks + ("ni",) * self.n_ni_blocks
        gnn = {"full_vd": ("vd",) * n, "full_ni": ("ni",) * n}.get(self.variant, mixed)
        return {
            "cnn_single": [("cnn", ())],
            "cnn_dual": [("cnn", ()), ("cnn", ())],
            "gnn_single": [("gnn", gnn)],
            "gnn_dual": [("gnn", gnn), ("gnn", gnn)],
        }.get(self.variant, [("gnn", gnn), ("cnn", ())])


# ------------------------------------------------------------------ parameters


def _dense(params, rng, name: str, n_in: int, n_out: int, gain: float = 2.0) -> None:
    params[f"{name}.w"] = Tensor(rng.standard_normal((n_in, n_out)) * np.sqrt(gain / n_in), requires_grad=True)
    params[f"{name}.b"] = Tensor(np.full(n_out, BIAS_INIT), requires_grad=True)


def _kernel(params, rng, name: str, shape: tuple[int, ...], fan_in: int, n_bias: int) -> None:
    params[f"{name}.w"] = Tensor(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in), requires_grad=True)
    params[f"{name}.b"] = Tensor(np.full(n_bias, BIAS_INIT), requires_grad=True)


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    p: dict[str, Tensor] = {}
    d = config.d_hidden
    for b, (kind, blocks) in enumerate(config.branches()):
        pre = f"b{b}"
        if kind == "gnn":
            _dense(p, rng, f"{pre}.embed.0", config.c_in, d)
            _dense(p, rng, f"{pre}.embed.1", d, d, gain=1.0)
            for k, block in enumerate(blocks):
                _dense(p, rng, f"{pre}.{block}{k}.0", 2 * d, d)
                _dense(p, rng, f"{pre}.{block}{k}.1", d, d, gain=1.0)
            _dense(p, rng, f"{pre}.readout.0", d, d)
            # small readout keeps tanh out of saturation at the start
            _dense(p, rng, f"{pre}.readout.1", d, 1, gain=0.01)
        else:
            chans = config.cnn_channels
            c_prev = 1
            for lv, c in enumerate(chans):
                _kernel(p, rng, f"{pre}.enc{lv}.0", (c, 3, 3, 3, c_prev), 27 * c_prev, c)
                _kernel(p, rng, f"{pre}.enc{lv}.1", (c, 3, 3, 3, c), 27 * c, c)
                c_prev = c
            for lv in reversed(range(config.cnn_levels)):
                c = chans[lv]
                _kernel(p, rng, f"{pre}.dec{lv}.up", (c_prev, 2, 2, c), c_prev, c)
                _kernel(p, rng, f"{pre}.dec{lv}.conv", (c, 3, 3, 2 * c), 9 * 2 * c, c)
                c_prev = c
            _kernel(p, rng, f"{pre}.head", (1, 1, 1, c_prev), c_prev, 1)
    n_branch = len(config.branches())
    _dense(p, rng, "fuse.0", n_branch, config.fusion_hidden)
    _dense(p, rng, "fuse.1", config.fusion_hidden, 1, gain=1.0)
    return p


def param_count(params: dict[str, Tensor]) -> int:
    return int(sum(t.data.size for t in params.values()))


# ------------------------------------------------------------------ inputs


def normalize_features(features: np.ndarray) -> np.ndarray:
    """Scale all node features of one sample by a single positive factor."""
    peak = float(np.max(features)) if features.size else 0.0
    return features / peak if peak > 0 else features.copy()


def rasterize_to_canvas(features: np.ndarray, n_h: int, n_w: int, h_f: int, w_f: int) -> np.ndarray:
    """Nearest resample of the (n_h, n_w, C) feature field to (h_f, w_f, C, 1)."""
    field_ = np.asarray(features, dtype=float).reshape(n_h, n_w, -1)
    rows = ad.ops.nearest_matrix(n_h, h_f).argmax(axis=1)
    cols = ad.ops.nearest_matrix(n_w, w_f).argmax(axis=1)
    return field_[rows][:, cols][..., None]


@dataclass
class ModelInputs:
    """Per-sample arrays the forward pass needs, computed once."""

    n_h: int
    n_w: int
    features: np.ndarray  # (N, C), normalized
    src: np.ndarray
    dst: np.ndarray
    bi_src: np.ndarray
    bi_dst: np.ndarray
    canvas: np.ndarray  # (h_f, w_f, C, 1)
    extra: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.n_h * self.n_w


def prepare_inputs(graph: PdnGraph, config: ModelConfig, normalize: bool = True) -> ModelInputs:
    if graph.features.shape[1] != config.c_in:
        raise ValueError(f"graph has {graph.features.shape[1]} feature channels, model expects {config.c_in}")
    feats = normalize_features(graph.features) if normalize else np.asarray(graph.features, dtype=float)
    bi = to_bidirected(graph)
    return ModelInputs(
        n_h=graph.n_h,
        n_w=graph.n_w,
        features=feats,
        src=graph.src.copy(),
        dst=graph.dst.copy(),
        bi_src=bi.src.copy(),
        bi_dst=bi.dst.copy(),
        canvas=rasterize_to_canvas(feats, graph.n_h, graph.n_w, config.h_f, config.w_f),
    )


# ------------------------------------------------------------------ GNN branch


def linear(x: Tensor, params, name: str) -> Tensor:
    return ad.bias_add(ad.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def mlp2(x: Tensor, params, name: str) -> Tensor:
    return linear(ad.relu(linear(x, params, f"{name}.0")), params, f"{name}.1")


def gnn_embed(features, params, prefix: str = "b0") -> Tensor:
    x = ad.ops.as_tensor(features)
    if x.shape[1] != params[f"{prefix}.embed.0.w"].shape[0]:
        raise ValueError(f"feature channels {x.shape[1]} do not match embedding input")
    return mlp2(x, params, f"{prefix}.embed")


def voltage_drop_block(h: Tensor, src: np.ndarray, dst: np.ndarray, params, name: str) -> Tensor:
    """Sum in-neighbour rows along edge direction, then MLP on [h || m]."""
    m = ad.segment_sum(h, src, dst, h.shape[0])
    return mlp2(ad.concat([h, m], axis=1), params, name)


def neighbor_influence_block(
    h: Tensor, src: np.ndarray, dst: np.ndarray, params, name: str, check: bool = True
) -> Tensor:
    """Mean over neighbours k of MLP([h_v || h_k]) on a bidirected edge set.

    A node without neighbours sees a single zero neighbour row.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if check and not is_bidirected(np.stack([src, dst], axis=1)):
        raise ValueError("neighbor_influence_block needs a bidirected edge set")
    n, d = h.shape
    isolated = np.setdiff1d(np.arange(n), dst)
    e_src = np.concatenate([src, np.full(len(isolated), n)])
    e_dst = np.concatenate([dst, isolated])
    h_aug = ad.concat([h, Tensor(np.zeros((1, d)))], axis=0)
    pair = ad.concat([ad.gather_rows(h, e_dst), ad.gather_rows(h_aug, e_src)], axis=1)
    msg = mlp2(pair, params, name)
    deg = np.bincount(e_dst, minlength=n).astype(float)
    return ad.segment_sum(msg, np.arange(len(e_dst)), e_dst, n, weight=1.0 / deg[e_dst])


def gnn_readout(h: Tensor, params, prefix: str = "b0") -> Tensor:
    return ad.tanh(mlp2(h, params, f"{prefix}.readout"))


def gnn_forward(inputs: ModelInputs, params, prefix: str, blocks: tuple[str, ...]) -> Tensor:
    h = gnn_embed(inputs.features, params, prefix)
    for k, block in enumerate(blocks):
        name = f"{prefix}.{block}{k}"
        if block == "vd":
            h = voltage_drop_block(h, inputs.src, inputs.dst, params, name)
        else:
            h = neighbor_influence_block(h, inputs.bi_src, inputs.bi_dst, params, name, check=False)
    return gnn_readout(h, params, prefix)


# ------------------------------------------------------------------ CNN branch


def _conv_block(x: Tensor, params, name: str, conv) -> Tensor:
    return ad.relu(ad.bias_add(conv(x, params[f"{name}.w"], 1, 1), params[f"{name}.b"]))


def cnn_forward(canvas, params, prefix: str = "b1", levels: Optional[int] = None) -> Tensor:
    """(h_f, w_f, T, 1) canvas -> (h_f, w_f, 1) map."""
    x = ad.ops.as_tensor(canvas)
    h_f, w_f = x.shape[0], x.shape[1]
    if levels is None:
        levels = sum(1 for k in params if k.startswith(f"{prefix}.enc") and k.endswith(".0.w"))
    if h_f % 2**levels or w_f % 2**levels:
        raise ValueError(f"canvas {h_f}x{w_f} not divisible by 2^{levels}")
    x = ad.reshape(x, (1, *x.shape))
    skips = []
    for lv in range(levels):
        x = _conv_block(x, params, f"{prefix}.enc{lv}.0", ad.conv3d)
        x = _conv_block(x, params, f"{prefix}.enc{lv}.1", ad.conv3d)
        skips.append(ad.mean_over_axis(x, axis=3))
        axes = [1, 2] + ([3] if x.shape[3] > 1 else [])
        x = ad.downsample2(x, axes)
    x = ad.mean_over_axis(x, axis=3)
    for lv in reversed(range(levels)):
        up = f"{prefix}.dec{lv}.up"
        x = ad.relu(ad.bias_add(ad.transposed_conv2d(x, params[f"{up}.w"], 2, 0), params[f"{up}.b"]))
        x = ad.concat([x, skips[lv]], axis=-1)
        x = _conv_block(x, params, f"{prefix}.dec{lv}.conv", ad.conv2d)
    y = ad.bias_add(ad.conv2d(x, params[f"{prefix}.head.w"], 1, 0), params[f"{prefix}.head.b"])
    return ad.reshape(y, (h_f, w_f, 1))


# ------------------------------------------------------------------ fusion


def fuse(branch_outputs: list[Tensor], n_h: int, n_w: int, params) -> Tensor:
    """Per-node MLP over the branch outputs; returns the (n_h, n_w) prediction.

    GNN outputs arrive as (N, 1); CNN maps (h_f, w_f, 1) are bilinearly
    resampled to the tile grid first.  Node (i, j) is flat index i * n_w + j.
    """
    cols = []
    for y in branch_outputs:
        if y.data.ndim == 3:
            y = ad.reshape(ad.resample2d_bilinear(y, n_h, n_w), (n_h * n_w, 1))
        cols.append(y)
    z = cols[0] if len(cols) == 1 else ad.concat(cols, axis=1)
    return ad.reshape(mlp2(z, params, "fuse"), (n_h, n_w))


def forward(inputs: ModelInputs, params, config: ModelConfig) -> Tensor:
    outs = []
    for b, (kind, blocks) in enumerate(config.branches()):
        if kind == "gnn":
            outs.append(gnn_forward(inputs, params, f"b{b}", blocks))
        else:
            outs.append(cnn_forward(inputs.canvas, params, f"b{b}", config.cnn_levels))
    return fuse(outs, inputs.n_h, inputs.n_w, params)


def predict(graph: PdnGraph, params, config: ModelConfig) -> np.ndarray:
    return forward(prepare_inputs(graph, config), params, config).data.copy()
