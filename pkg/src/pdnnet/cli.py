"""Command-line driver: ``pdnnet <command> [--key value ...]``.

Commands chain through a dataset directory::

    pdnnet gen --out d --seed 7
    pdnnet simulate --data d
    pdnnet build-graph --data d
    pdnnet train --data d --out run
    pdnnet eval --data test --ckpt run/best.ckpt --out run

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .autodiff import FORMAT_VERSION, CheckpointError, Tensor, load_checkpoint, save_checkpoint
from .files import (
    FormatError,
    direction_codes,
    read_graph_csv,
    read_grid_csv,
    write_graph_csv,
    write_grid_csv,
    write_pgm,
)
from .graph import GridError, build_graph, tile_grid
from .layout import LayoutError, read_layout, write_layout
from .metrics import METRIC_COLUMNS, evaluate_maps, mean_report
from .model import VARIANTS, ModelConfig, predict
from .oracle import NetworkError, SolverError, simulate_dynamic
from .training import (
    BenchmarkSpec,
    Sample,
    TrainConfig,
    TRAIN_PITCHES_UM,
    TrainingError,
    ablation,
    benchmark_layouts,
    train,
    write_ablation_csv,
    write_history_csv,
)

DATA_ERRORS = (
    OSError,
    LayoutError,
    FormatError,
    CheckpointError,
    GridError,
    NetworkError,
    SolverError,
    TrainingError,
)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ options


@dataclass(frozen=True)
class Opt:
    key: str
    kind: Callable
    default: object = None
    help: str = ""


def _floats(text) -> tuple[float, ...]:
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _ints(text) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _words(text) -> tuple[str, ...]:
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


def _flag(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


COMMON = [Opt("jobs", int, 1, "worker processes for per-sample work")]
GRID = [Opt("dx", float, 2.0, "tile width (um)"), Opt("dy", float, 2.0, "tile height (um)")]
MODEL = [
    Opt("variant", str, "pdnnet", "model variant"),
    Opt("d_hidden", int, 32),
    Opt("n_vd", int, 2, "voltage-drop blocks"),
    Opt("n_ni", int, 2, "neighbour-influence blocks"),
    Opt("h_f", int, 32, "CNN canvas height"),
    Opt("w_f", int, 32, "CNN canvas width"),
    Opt("cnn_channels", _ints, (8, 16, 32), "per-level CNN widths"),
    Opt("fusion_hidden", int, 16),
]
TRAIN = [
    Opt("epochs", int, 200),
    Opt("lr0", float, 0.0008),
    Opt("beta1", float, 0.9),
    Opt("beta2", float, 0.999),
    Opt("weight_decay", float, 1e-4),
    Opt("accumulate", int, 1, "samples per optimizer step"),
    Opt("seed", int, 0),
    Opt("w_l1", float, 1.0),
    Opt("w_dice", float, 1.0),
    Opt("val_fraction", float, 0.2),
]

COMMANDS: dict[str, tuple[str, list[Opt]]] = {
    "gen": (
        "generate a synthetic layout dataset",
        [
            Opt("out", str, None, "dataset directory"),
            Opt("seed", int, 0),
            Opt("n_samples", int, 16),
            Opt("die_um", float, 32.0),
            Opt("tile_um", float, 2.0),
            Opt("pitches", _floats, TRAIN_PITCHES_UM, "strip pitches (um)"),
            Opt("cells_per_tile", float, 4.0),
            Opt("t_sim", int, 4),
            Opt("power_scale_w", float, 1e-5),
            Opt("r_hpr", float, 0.1, "strip resistance per tile (ohm)"),
        ],
    ),
    "simulate": (
        "solve the IR drop label of one layout or a dataset",
        [
            Opt("layout", str, None, "layout file"),
            Opt("data", str, None, "dataset directory"),
            Opt("out", str, None, "output directory (single layout)"),
            Opt("frames", _flag, False, "also write per-frame CSVs"),
            *GRID,
        ],
    ),
    "build-graph": (
        "build the PDN graph of one layout or a dataset",
        [
            Opt("layout", str, None, "layout file"),
            Opt("data", str, None, "dataset directory"),
            Opt("out", str, None, "output directory (single layout)"),
            *GRID,
        ],
    ),
    "train": (
        "train a model on a dataset",
        [Opt("data", str, None, "dataset directory"), Opt("out", str, None, "run directory"), *MODEL, *TRAIN],
    ),
    "eval": (
        "predict and score every sample of a dataset",
        [
            Opt("data", str, None, "dataset directory"),
            Opt("ckpt", str, None, "checkpoint"),
            Opt("out", str, None, "directory for metrics.csv"),
        ],
    ),
    "predict": (
        "predict the normalized drop map of a graph, layout or dataset",
        [
            Opt("ckpt", str, None, "checkpoint"),
            Opt("graph", str, None, "graph.csv"),
            Opt("layout", str, None, "layout file"),
            Opt("data", str, None, "dataset directory"),
            Opt("out", str, None, "output directory"),
            *GRID,
        ],
    ),
    "ablate": (
        "train and score model variants over several seeds",
        [
            Opt("data", str, None, "training dataset"),
            Opt("test", str, None, "held-out dataset"),
            Opt("out", str, None, "run directory"),
            Opt("variants", _words, ("pdnnet", "cnn_single", "gnn_single"), "comma list"),
            Opt("seeds", _ints, (0, 1, 2), "comma list"),
            *MODEL,
            *TRAIN,
        ],
    ),
    "report": (
        "score existing predictions against dataset labels",
        [
            Opt("data", str, None, "dataset directory"),
            Opt("preds", str, None, "directory of <id>/pred.csv"),
            Opt("out", str, None, "directory for metrics.csv"),
        ],
    ),
}

REQUIRED = {
    "gen": ("out",),
    "train": ("data", "out"),
    "eval": ("data", "ckpt", "out"),
    "predict": ("ckpt", "out"),
    "ablate": ("data", "test", "out"),
    "report": ("data", "preds", "out"),
}


def _all_opts(command: str) -> list[Opt]:
    return COMMANDS[command][1] + COMMON


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pdnnet", description="IR drop workbench: layouts, oracle labels, PDN graphs, training.")
    parser.add_argument("--version", action="version", version=FORMAT_VERSION)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (text, _) in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", help="file of key=value lines; flags win")
        for opt in _all_opts(name):
            default = ",".join(map(str, opt.default)) if isinstance(opt.default, tuple) else opt.default
            p.add_argument(
                f"--{opt.key.replace('_', '-')}",
                dest=opt.key,
                default=None,
                help=f"{opt.help} (default {default})" if opt.help else f"default {default}",
            )
    return parser


def read_config_file(path) -> dict[str, str]:
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        values[k.strip().replace("-", "_")] = v.strip()
    return values


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then command-line flags."""
    opts = {o.key: o for o in _all_opts(command)}
    raw: dict = {}
    if args.config:
        for k, v in read_config_file(args.config).items():
            if k not in opts:
                raise UsageError(f"unknown key {k!r} in {args.config}")
            raw[k] = v
    for k in opts:
        v = getattr(args, k, None)
        if v is not None:
            raw[k] = v
    cfg = {}
    for k, o in opts.items():
        if k in raw:
            try:
                cfg[k] = o.kind(raw[k])
            except ValueError as exc:
                raise UsageError(f"bad value for {k}: {exc}") from None
        else:
            cfg[k] = o.default
    for k in REQUIRED.get(command, ()):
        if cfg[k] in (None, ""):
            raise UsageError(f"{command}: --{k.replace('_', '-')} is required")
    if cfg["jobs"] < 1:
        raise UsageError("jobs must be >= 1")
    return cfg


def format_config(command: str, cfg: dict) -> str:
    lines = [f"command={command}"]
    for k, v in cfg.items():
        lines.append(f"{k}={','.join(map(str, v)) if isinstance(v, tuple) else v}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ helpers


def _pmap(fn, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def samples_dir(data) -> Path:
    root = Path(data)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    return root / "samples" if (root / "samples").is_dir() else root


def sample_dirs(data) -> list[Path]:
    dirs = sorted(p for p in samples_dir(data).iterdir() if p.is_dir())
    if not dirs:
        raise DataError(f"no samples under {data}")
    return dirs


def load_sample(d: Path) -> Sample:
    for name in ("graph.csv", "label.csv"):
        if not (d / name).is_file():
            raise DataError(f"{d / name} missing (run simulate and build-graph first)")
    return Sample(d.name, read_graph_csv(d / "graph.csv"), read_grid_csv(d / "label.csv"))


def load_dataset(data) -> list[Sample]:
    return [load_sample(d) for d in sample_dirs(data)]


def model_config(cfg: dict, c_in: int) -> ModelConfig:
    chans = tuple(cfg["cnn_channels"])
    return ModelConfig(
        c_in=c_in,
        d_hidden=cfg["d_hidden"],
        n_vd_blocks=cfg["n_vd"],
        n_ni_blocks=cfg["n_ni"],
        h_f=cfg["h_f"],
        w_f=cfg["w_f"],
        cnn_levels=len(chans),
        cnn_channels=chans,
        fusion_hidden=cfg["fusion_hidden"],
        variant=cfg["variant"],
    )


def train_config(cfg: dict, model: ModelConfig) -> TrainConfig:
    return TrainConfig(
        model=model,
        epochs=cfg["epochs"],
        lr0=cfg["lr0"],
        beta1=cfg["beta1"],
        beta2=cfg["beta2"],
        weight_decay=cfg["weight_decay"],
        accumulate=cfg["accumulate"],
        rng_seed=cfg["seed"],
        w_l1=cfg["w_l1"],
        w_dice=cfg["w_dice"],
        val_fraction=cfg["val_fraction"],
    )


def model_meta(model: ModelConfig) -> dict[str, str]:
    meta = {}
    for f in fields(model):
        v = getattr(model, f.name)
        meta[f"model.{f.name}"] = ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
    return meta


def model_from_meta(meta: dict[str, str], path) -> ModelConfig:
    kw = {}
    try:
        for name in (f.name for f in fields(ModelConfig)):
            text = meta[f"model.{name}"]
            if name == "cnn_channels":
                kw[name] = _ints(text)
            elif name == "variant":
                kw[name] = text
            else:
                kw[name] = int(text)
        return ModelConfig(**kw)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: checkpoint lacks a usable model description ({exc})") from None


def load_model(path):
    arrays, meta = load_checkpoint(path)
    model = model_from_meta(meta, path)
    return {k: Tensor(v) for k, v in arrays.items()}, model


def _metrics_rows(ids, reports) -> list[list[str]]:
    mean, _ = mean_report(reports)
    rows = [["sample", *METRIC_COLUMNS]]
    for sid, r in zip(ids, reports):
        rows.append([sid, *(f"{v:.9g}" for v in r.row())])
    rows.append(["MEAN", *(f"{v:.9g}" for v in mean.row())])
    return rows


def write_metrics_csv(ids, reports, path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(_metrics_rows(ids, reports))


# ------------------------------------------------------------------ commands


def cmd_gen(cfg: dict) -> None:
    spec = BenchmarkSpec(
        n_samples=cfg["n_samples"],
        die_um=cfg["die_um"],
        tile_um=cfg["tile_um"],
        pitches_um=cfg["pitches"],
        cells_per_tile=cfg["cells_per_tile"],
        t_sim=cfg["t_sim"],
        power_scale_w=cfg["power_scale_w"],
        r_hpr_ohm_per_tile=cfg["r_hpr"],
        seed=cfg["seed"],
    )
    try:
        layouts = benchmark_layouts(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    root = Path(cfg["out"])
    for sid, lay in layouts:
        d = root / "samples" / sid
        d.mkdir(parents=True, exist_ok=True)
        write_layout(lay, d / "layout.txt")
    print(f"wrote {len(layouts)} layouts under {root / 'samples'}")


def _simulate_one(job) -> None:
    layout_path, out, dx, dy, label_name, frames = job
    layout = read_layout(layout_path)
    grid = tile_grid(layout, dx, dy)
    per_frame, peak = simulate_dynamic(layout, grid)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_grid_csv(peak.grid, out / label_name)
    write_pgm(peak.grid, out / "irdrop_peak.pgm", bits=16)
    for f in per_frame if frames else ():
        write_grid_csv(f.grid, out / f"irdrop_frame{f.tag}.csv")


def cmd_simulate(cfg: dict) -> None:
    if bool(cfg["layout"]) == bool(cfg["data"]):
        raise UsageError("simulate: give exactly one of --layout or --data")
    if cfg["layout"]:
        layout = Path(cfg["layout"])
        if not layout.is_file():
            raise DataError(f"layout file not found: {layout}")
        out = Path(cfg["out"] or layout.parent)
        _simulate_one((layout, out, cfg["dx"], cfg["dy"], "irdrop_peak.csv", cfg["frames"]))
        print(f"wrote {out / 'irdrop_peak.csv'}")
        return
    dirs = sample_dirs(cfg["data"])
    _pmap(_simulate_one, [(d / "layout.txt", d, cfg["dx"], cfg["dy"], "label.csv", cfg["frames"]) for d in dirs], cfg["jobs"])
    print(f"labelled {len(dirs)} samples")


def _graph_one(job) -> None:
    layout_path, out, dx, dy = job
    layout = read_layout(layout_path)
    g = build_graph(tile_grid(layout, dx, dy), layout)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_graph_csv(g, out / "graph.csv")
    write_pgm(direction_codes(g), out / "graph.pgm", vmax=2, bits=8)


def cmd_build_graph(cfg: dict) -> None:
    if bool(cfg["layout"]) == bool(cfg["data"]):
        raise UsageError("build-graph: give exactly one of --layout or --data")
    if cfg["layout"]:
        layout = Path(cfg["layout"])
        if not layout.is_file():
            raise DataError(f"layout file not found: {layout}")
        out = Path(cfg["out"] or layout.parent)
        _graph_one((layout, out, cfg["dx"], cfg["dy"]))
        print(f"wrote {out / 'graph.csv'}")
        return
    dirs = sample_dirs(cfg["data"])
    _pmap(_graph_one, [(d / "layout.txt", d, cfg["dx"], cfg["dy"]) for d in dirs], cfg["jobs"])
    print(f"built {len(dirs)} graphs")


def _check_variant(cfg: dict) -> None:
    for v in cfg.get("variants", ()) or (cfg["variant"],):
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}; expected one of {', '.join(VARIANTS)}")


def cmd_train(cfg: dict) -> None:
    _check_variant(cfg)
    samples = load_dataset(cfg["data"])
    try:
        model = model_config(cfg, samples[0].graph.features.shape[1])
        tcfg = train_config(cfg, model)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    run = Path(cfg["out"])
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.txt").write_text(format_config("train", cfg))

    def report(rec):
        print(f"epoch {rec.epoch:4d}  train {rec.train_loss:.4f}  val {rec.val_loss:.4f}  val_nmae {rec.val_nmae:.4f}")

    result = train(samples, tcfg, on_epoch=report)
    write_history_csv(result.history, run / "history.csv")
    meta = {**model_meta(model), "best_epoch": str(result.best_epoch), "seed": str(cfg["seed"])}
    save_checkpoint(run / "best.ckpt", {k: p.data for k, p in result.params.items()}, meta)
    print(f"best epoch {result.best_epoch}; checkpoint {run / 'best.ckpt'}")


def _predict_all(samples: list[Sample], params, model: ModelConfig) -> list[np.ndarray]:
    out = []
    for s in samples:
        if s.graph.features.shape[1] != model.c_in:
            raise DataError(f"sample {s.id}: {s.graph.features.shape[1]} channels, checkpoint expects {model.c_in}")
        out.append(predict(s.graph, params, model))
    return out


def cmd_eval(cfg: dict) -> None:
    params, model = load_model(cfg["ckpt"])
    samples = load_dataset(cfg["data"])
    preds = _predict_all(samples, params, model)
    reports = [evaluate_maps(p, s.target) for p, s in zip(preds, samples)]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv([s.id for s in samples], reports, out / "metrics.csv")
    mean, excluded = mean_report(reports)
    print("MEAN " + " ".join(f"{c}={v:.4f}" for c, v in zip(METRIC_COLUMNS, mean.row())))
    base = [np.mean(np.abs(s.target - s.target.mean())) for s in samples if np.ptp(s.target) > 0]
    print(f"mean-predictor NMAE {np.mean(base):.4f}")
    if any(excluded.values()):
        print("excluded NaN entries: " + ", ".join(f"{k}={v}" for k, v in excluded.items() if v))


def cmd_predict(cfg: dict) -> None:
    chosen = [k for k in ("graph", "layout", "data") if cfg[k]]
    if len(chosen) != 1:
        raise UsageError("predict: give exactly one of --graph, --layout or --data")
    params, model = load_model(cfg["ckpt"])
    out = Path(cfg["out"])
    if cfg["data"]:
        dirs = sample_dirs(cfg["data"])
        graphs = [(d.name, read_graph_csv(d / "graph.csv")) for d in dirs]
    elif cfg["graph"]:
        graphs = [(None, read_graph_csv(cfg["graph"]))]
    else:
        layout = read_layout(cfg["layout"])
        graphs = [(None, build_graph(tile_grid(layout, cfg["dx"], cfg["dy"]), layout))]
    for sid, g in graphs:
        if g.features.shape[1] != model.c_in:
            raise DataError(f"graph has {g.features.shape[1]} channels, checkpoint expects {model.c_in}")
        pred = predict(g, params, model)
        d = out / sid if sid else out
        d.mkdir(parents=True, exist_ok=True)
        write_grid_csv(pred, d / "pred.csv")
        write_pgm(np.clip(pred, 0.0, None), d / "pred.pgm", bits=16)
    print(f"wrote {len(graphs)} prediction(s) under {out}")


def cmd_ablate(cfg: dict) -> None:
    _check_variant(cfg)
    train_set = load_dataset(cfg["data"])
    test_set = load_dataset(cfg["test"])
    try:
        model = model_config(cfg, train_set[0].graph.features.shape[1])
        tcfg = train_config(cfg, model)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    run = Path(cfg["out"])
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.txt").write_text(format_config("ablate", cfg))

    def report(variant, seed, mean):
        print(f"{variant:12s} seed {seed}  NMAE {mean.nmae:.4f}  Spea {mean.spearman:.4f}")

    rows = ablation(train_set, test_set, tcfg, cfg["variants"], cfg["seeds"], on_run=report)
    write_ablation_csv(rows, run / "ablation.csv")
    print(f"wrote {run / 'ablation.csv'}")


def cmd_report(cfg: dict) -> None:
    samples = load_dataset(cfg["data"])
    preds_root = Path(cfg["preds"])
    reports = []
    for s in samples:
        path = preds_root / s.id / "pred.csv"
        if not path.is_file():
            raise DataError(f"prediction missing: {path}")
        pred = read_grid_csv(path)
        if pred.shape != s.target.shape:
            raise DataError(f"{path}: shape {pred.shape} does not match label {s.target.shape}")
        reports.append(evaluate_maps(pred, s.target))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv([s.id for s in samples], reports, out / "metrics.csv")
    print(f"wrote {out / 'metrics.csv'}")


HANDLERS = {
    "gen": cmd_gen,
    "simulate": cmd_simulate,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("pdnnet: a command is required (see --help)")
        cfg = resolve(args.command, args)
        sys.stdout.write(format_config(args.command, cfg))
        sys.stdout.flush()
        HANDLERS[args.command](cfg)
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
