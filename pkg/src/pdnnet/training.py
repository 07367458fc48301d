"""Datasets, loss, training loop, evaluation and the branch/layer ablation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import PdnGraph, build_graph, tile_grid
from .layout import GenSpec, Layout, generate_synthetic
from .metrics import METRIC_COLUMNS, MetricsReport, evaluate_maps, mean_report, nmae
from .model import VARIANTS, ModelConfig, ModelInputs, forward, init_params, prepare_inputs
from .oracle import simulate_dynamic

log = logging.getLogger(__name__)

ABLATION_COLUMNS = METRIC_COLUMNS[:7]


class TrainingError(RuntimeError):
    pass


@dataclass
class Sample:
    id: str
    graph: PdnGraph
    label: np.ndarray  # peak drop, volts, (n_h, n_w)
    _inputs: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.label.shape != (self.graph.n_h, self.graph.n_w):
            raise ValueError(f"sample {self.id}: label {self.label.shape} does not match grid")
        if not np.all(np.isfinite(self.label)):
            raise ValueError(f"sample {self.id}: label has non-finite values")

    @property
    def label_range(self) -> tuple[float, float]:
        return float(self.label.min()), float(self.label.max())

    @property
    def target(self) -> np.ndarray:
        """Label min-max normalized to [0, 1] (all zeros for a flat label)."""
        lo, hi = self.label_range
        return (self.label - lo) / (hi - lo) if hi > lo else np.zeros_like(self.label)

    def inputs(self, config: ModelConfig) -> ModelInputs:
        key = (config.c_in, config.h_f, config.w_f)
        if key not in self._inputs:
            self._inputs[key] = prepare_inputs(self.graph, config)
        return self._inputs[key]


def make_sample(sample_id: str, layout: Layout, dx_um: float, dy_um: float) -> Sample:
    grid = tile_grid(layout, dx_um, dy_um)
    _, peak = simulate_dynamic(layout, grid)
    return Sample(sample_id, build_graph(grid, layout), peak.grid)


# 6, 4 and 3 strips across the default 32 um die; held-out pitches give 5 and 7.
TRAIN_PITCHES_UM = (32 / 6, 8.0, 32 / 3)
HELDOUT_PITCHES_UM = (6.4, 32 / 7)


@dataclass(frozen=True)
class BenchmarkSpec:
    """Desk-scale synthetic benchmark: square die, mixed regular/irregular PDNs.

    Even-numbered layouts use a regular pitch drawn from ``pitches_um``;
    odd-numbered ones place strips with gaps drawn from the same set plus
    jitter.
    """

    n_samples: int = 16
    die_um: float = 32.0
    tile_um: float = 2.0
    pitches_um: tuple[float, ...] = TRAIN_PITCHES_UM
    cells_per_tile: float = 4.0
    t_sim: int = 4
    power_scale_w: float = 1e-5
    r_hpr_ohm_per_tile: float = 0.1
    seed: int = 0


def benchmark_layouts(spec: BenchmarkSpec) -> list[tuple[str, Layout]]:
    rng = np.random.default_rng(spec.seed)
    W = spec.die_um
    n_cells = max(1, int(round(spec.cells_per_tile * (W / spec.tile_um) ** 2)))
    out = []
    for k in range(spec.n_samples):
        pitch = float(rng.choice(spec.pitches_um))
        layout_seed = int(rng.integers(2**31))
        if k % 2 == 0:
            gen = GenSpec(W, W, n_cells, strip_pitch_um=pitch, power_scale_w=spec.power_scale_w,
                          t_sim=spec.t_sim, rng_seed=layout_seed, r_hpr_ohm_per_tile=spec.r_hpr_ohm_per_tile)
        else:
            x = float(rng.uniform(0.25, 0.75)) * pitch
            strips = []
            while x <= W:
                strips.append(round(x * 4) / 4)
                gap = float(rng.choice(spec.pitches_um)) * float(rng.uniform(0.8, 1.2))
                x += gap
            gen = GenSpec(W, W, n_cells, strips_um=strips, power_scale_w=spec.power_scale_w,
                          t_sim=spec.t_sim, rng_seed=layout_seed, r_hpr_ohm_per_tile=spec.r_hpr_ohm_per_tile)
        out.append((f"s{spec.seed:03d}_{k:04d}", generate_synthetic(gen)))
    return out


def benchmark_samples(spec: BenchmarkSpec) -> list[Sample]:
    return [make_sample(sid, lay, spec.tile_um, spec.tile_um) for sid, lay in benchmark_layouts(spec)]


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    epochs: int = 200
    lr0: float = 0.0008
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    accumulate: int = 1
    rng_seed: int = 0
    w_l1: float = 1.0
    w_dice: float = 1.0
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.w_l1 < 0 or self.w_dice < 0:
            raise ValueError("loss weights must be >= 0")
        if self.accumulate < 1:
            raise ValueError("accumulate must be >= 1")


def loss(pred: Tensor, label, w_l1: float = 1.0, w_dice: float = 1.0) -> Tensor:
    label = np.asarray(label, dtype=float)
    if pred.shape != label.shape:
        raise ValueError(f"loss: pred {pred.shape} vs label {label.shape}")
    l1 = ad.l1_loss(pred, label)
    dice = ad.dice_loss(pred, label)
    return ad.add(
        ad.mul(l1, Tensor(np.array(w_l1))),
        ad.mul(dice, Tensor(np.array(w_dice))),
    )


def split_ids(ids: Sequence[str], seed: int, val_fraction: float = 0.2) -> tuple[list[str], list[str]]:
    """Shuffle under ``seed`` and cut off the validation share (never all of it)."""
    ids = sorted(ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[k] for k in order]
    if len(ids) < 2:
        return shuffled, []
    n_val = min(len(ids) - 1, max(1, int(round(val_fraction * len(ids)))))
    return shuffled[n_val:], shuffled[:n_val]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_nmae: float
    val_nmae: float
    lr: float


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    history: list[EpochRecord]
    best_epoch: int
    train_ids: list[str]
    val_ids: list[str]


def _score(samples: Sequence[Sample], params, cfg: TrainConfig) -> tuple[float, float]:
    losses, errs = [], []
    for s in samples:
        pred = forward(s.inputs(cfg.model), params, cfg.model)
        losses.append(loss(pred, s.target, cfg.w_l1, cfg.w_dice).item())
        if s.label_range[1] > s.label_range[0]:
            errs.append(nmae(pred.data, s.target))
    return float(np.mean(losses)), float(np.mean(errs)) if errs else math.nan


def _snapshot(params) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def train(
    samples: Sequence[Sample],
    config: TrainConfig,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Full-graph training with Adam, cosine decay and best-validation retention.

    With a single sample there is no validation split; the training sample
    doubles as the selection set.
    """
    if not samples:
        raise TrainingError("no training samples")
    by_id = {s.id: s for s in samples}
    if len(by_id) != len(samples):
        raise TrainingError("sample ids must be unique")
    train_ids, val_ids = split_ids(list(by_id), config.rng_seed, config.val_fraction)
    train_set = [by_id[i] for i in train_ids]
    val_set = [by_id[i] for i in val_ids] or train_set

    rng = np.random.default_rng(config.rng_seed)
    params = init_params(config.model, config.rng_seed)
    state = ad.AdamState()
    k = config.accumulate
    steps_per_epoch = math.ceil(len(train_set) / k)
    total_steps = config.epochs * steps_per_epoch

    history: list[EpochRecord] = []
    best = (math.inf, -1, _snapshot(params))
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        epoch_losses = []
        lr = config.lr0
        for start in range(0, len(order), k):
            chunk = [train_set[j] for j in order[start:start + k]]
            for p in params.values():
                p.grad = None
            for s in chunk:
                pred = forward(s.inputs(config.model), params, config.model)
                value = loss(pred, s.target, config.w_l1, config.w_dice)
                if not math.isfinite(value.item()):
                    raise TrainingError(f"non-finite loss at step {step} (epoch {epoch}, sample {s.id})")
                ad.mul(value, Tensor(np.array(1.0 / len(chunk)))).backward()
                epoch_losses.append(value.item())
            lr = ad.cosine_lr(step, max(total_steps - 1, 1), config.lr0)
            grads = {n: p.grad for n, p in params.items() if p.grad is not None}
            ad.adam_step(params, grads, state, lr, config.beta1, config.beta2, weight_decay=config.weight_decay)
            step += 1

        _, train_nmae = _score(train_set, params, config)
        val_loss, val_nmae = _score(val_set, params, config)
        rec = EpochRecord(epoch + 1, float(np.mean(epoch_losses)), val_loss, train_nmae, val_nmae, lr)
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
        if val_loss < best[0]:
            best = (val_loss, epoch + 1, _snapshot(params))

    for name, arr in best[2].items():
        params[name].data[...] = arr
    return TrainResult(params, history, best[1], train_ids, val_ids)


@dataclass(frozen=True)
class Evaluation:
    mean: MetricsReport
    per_sample: list[tuple[str, MetricsReport]]
    excluded: dict[str, int]
    baseline_nmae: float


def predict_sample(sample: Sample, params, model: ModelConfig) -> np.ndarray:
    return forward(sample.inputs(model), params, model).data.copy()


def evaluate(
    params,
    samples: Sequence[Sample],
    model: Optional[ModelConfig] = None,
    predictor: Optional[Callable[[Sample], np.ndarray]] = None,
) -> Evaluation:
    """Metrics on normalized maps, averaged over samples.

    ``predictor`` overrides the model (used for oracle and baseline checks).
    The baseline is the per-sample constant predictor at the label mean.
    """
    if not samples:
        raise ValueError("evaluate needs at least one sample")
    if predictor is None:
        if model is None:
            raise ValueError("evaluate needs a model config or a predictor")
        predictor = lambda s: predict_sample(s, params, model)  # noqa: E731
    rows, base = [], []
    for s in samples:
        t = s.target
        rows.append((s.id, evaluate_maps(predictor(s), t)))
        if t.max() > t.min():
            base.append(nmae(np.full_like(t, t.mean()), t))
    mean, excluded = mean_report([r for _, r in rows])
    return Evaluation(mean, rows, excluded, float(np.mean(base)) if base else math.nan)


# ------------------------------------------------------------------ ablation


@dataclass(frozen=True)
class AblationRow:
    variant: str
    n_runs: int
    mean: tuple[float, ...]
    std: tuple[float, ...]
    runs: tuple[tuple[float, ...], ...] = ()


def ablation(
    train_samples: Sequence[Sample],
    test_samples: Sequence[Sample],
    config: TrainConfig,
    variants: Sequence[str],
    seeds: Sequence[int] = (0,),
    on_run: Optional[Callable[[str, int, MetricsReport], None]] = None,
) -> list[AblationRow]:
    """Train each variant once per seed on identical data; summarize 7 metrics."""
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ValueError(f"unknown variant(s): {', '.join(unknown)}")
    out = []
    for variant in variants:
        runs = []
        for seed in seeds:
            cfg = replace(config, rng_seed=seed, model=replace(config.model, variant=variant))
            result = train(train_samples, cfg)
            ev = evaluate(result.params, test_samples, cfg.model)
            if on_run:
                on_run(variant, seed, ev.mean)
            runs.append(ev.mean.row()[:7])
        arr = np.array(runs)
        out.append(
            AblationRow(
                variant=variant,
                n_runs=len(runs),
                mean=tuple(float(x) for x in arr.mean(axis=0)),
                std=tuple(float(x) for x in arr.std(axis=0)),
                runs=tuple(tuple(r) for r in runs),
            )
        )
    return out


def write_ablation_csv(rows: Sequence[AblationRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "runs", *ABLATION_COLUMNS, *(f"{c}_std" for c in ABLATION_COLUMNS)])
        for r in rows:
            w.writerow([r.variant, r.n_runs, *(f"{v:.6g}" for v in r.mean), *(f"{v:.6g}" for v in r.std)])


def history_rows(history: Sequence[EpochRecord]) -> list[list[str]]:
    rows = [["epoch", "train_loss", "val_loss", "train_nmae", "val_nmae", "lr"]]
    for r in history:
        rows.append([str(r.epoch), *(f"{v:.9g}" for v in (r.train_loss, r.val_loss, r.train_nmae, r.val_nmae, r.lr))])
    return rows


def write_history_csv(history: Sequence[EpochRecord], path) -> None:
    Path(path).write_text("\n".join(",".join(r) for r in history_rows(history)) + "\n")
