import csv
from pathlib import Path

import numpy as np
import pytest

from pdnnet import __version__
from pdnnet.autodiff import FORMAT_VERSION
from pdnnet.cli import main
from pdnnet.files import read_grid_csv

TINY_MODEL = ["--d-hidden", "4", "--h-f", "8", "--w-f", "8", "--cnn-channels", "2,2,2", "--fusion-hidden", "4"]


def tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def gen_tiny(out, n=16, seed=7):
    return main(["gen", "--out", str(out), "--seed", str(seed), "--n-samples", str(n), "--die-um", "8",
                 "--tile-um", "2", "--pitches", "2,4", "--cells-per-tile", "2", "--t-sim", "2"])


def test_version(capsys):
    assert main(["--version"]) == 0
    assert capsys.readouterr().out.strip() == FORMAT_VERSION
    assert __version__


def test_usage_errors(capsys):
    assert main(["frobnicate"]) == 1
    assert main([]) == 1
    assert main(["train", "--data", "x"]) == 1
    assert main(["gen", "--out", "x", "--seed", "seven"]) == 1
    assert "usage error" in capsys.readouterr().err


def test_missing_layout_exit_2(tmp_path, capsys):
    missing = tmp_path / "missing.txt"
    assert main(["simulate", "--layout", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_gen_is_deterministic(tmp_path):
    assert gen_tiny(tmp_path / "a", n=4) == 0
    assert gen_tiny(tmp_path / "b", n=4) == 0
    a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
    assert len(a) == 4 and a == b


def test_prints_resolved_config(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed = 3\nn_samples = 2\n# comment\n")
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "d"), "--n-samples", "1"]) == 0
    out = capsys.readouterr().out
    assert "command=gen" in out and "seed=3" in out and "n_samples=1" in out
    assert len(list((tmp_path / "d" / "samples").iterdir())) == 1
    cfg.write_text("bogus = 1\n")
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "e")]) == 1


def test_simulate_single_layout(tmp_path):
    src = Path(__file__).parent / "fixtures" / "three_cells.txt"
    before = src.read_bytes()
    out = tmp_path / "sim"
    assert main(["simulate", "--layout", str(src), "--out", str(out), "--dx", "4", "--dy", "4", "--frames", "1"]) == 0
    peak = read_grid_csv(out / "irdrop_peak.csv")
    assert peak.shape == (2, 3) and peak.min() >= 0
    frames = sorted(out.glob("irdrop_frame*.csv"))
    assert len(frames) == 2
    assert np.allclose(peak, np.max([read_grid_csv(f) for f in frames], axis=0))
    assert (out / "irdrop_peak.pgm").read_bytes().startswith(b"P5")
    assert src.read_bytes() == before


def test_full_pipeline(tmp_path):
    d, run = tmp_path / "d", tmp_path / "run"
    assert gen_tiny(d) == 0
    assert main(["simulate", "--data", str(d)]) == 0
    assert main(["build-graph", "--data", str(d), "--jobs", "2"]) == 0
    assert main(["train", "--data", str(d), "--out", str(run), "--epochs", "2", *TINY_MODEL]) == 0
    assert {"config.txt", "history.csv", "best.ckpt"} <= {p.name for p in run.iterdir()}
    assert main(["eval", "--data", str(d), "--ckpt", str(run / "best.ckpt"), "--out", str(run)]) == 0
    rows = list(csv.reader(open(run / "metrics.csv")))
    assert rows[0] == ["sample", "NMAE", "R2", "PSNR", "SSIM", "Pear", "Spea", "Kend", "AUC"]
    assert len(rows) == 18 and rows[-1][0] == "MEAN"

    preds = tmp_path / "preds"
    assert main(["predict", "--data", str(d), "--ckpt", str(run / "best.ckpt"), "--out", str(preds)]) == 0
    assert main(["report", "--data", str(d), "--preds", str(preds), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "metrics.csv").read_bytes() == (run / "metrics.csv").read_bytes()

    one = next((d / "samples").iterdir())
    assert main(["predict", "--graph", str(one / "graph.csv"), "--ckpt", str(run / "best.ckpt"),
                 "--out", str(tmp_path / "single")]) == 0
    assert np.array_equal(read_grid_csv(tmp_path / "single" / "pred.csv"), read_grid_csv(preds / one.name / "pred.csv"))


def test_commands_idempotent(tmp_path):
    d = tmp_path / "d"
    gen_tiny(d, n=3)
    main(["simulate", "--data", str(d)])
    main(["build-graph", "--data", str(d)])
    first = tree(d)
    main(["simulate", "--data", str(d), "--jobs", "2"])
    main(["build-graph", "--data", str(d)])
    assert tree(d) == first
    for k in ("r1", "r2"):
        main(["train", "--data", str(d), "--out", str(tmp_path / k), "--epochs", "1", *TINY_MODEL])
    for name in ("history.csv", "best.ckpt"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_eval_without_labels_is_data_error(tmp_path, capsys):
    d = tmp_path / "d"
    gen_tiny(d, n=2)
    main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "r")])
    assert "not found" in capsys.readouterr().err
    assert main(["train", "--data", str(d), "--out", str(tmp_path / "r")]) == 2


def test_bad_checkpoint_is_data_error(tmp_path):
    d = tmp_path / "d"
    gen_tiny(d, n=2)
    (tmp_path / "bad.ckpt").write_bytes(b"junk\n")
    assert main(["eval", "--data", str(d), "--ckpt", str(tmp_path / "bad.ckpt"), "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("variant", ["nonsense"])
def test_unknown_variant_is_usage_error(tmp_path, variant):
    d = tmp_path / "d"
    gen_tiny(d, n=2)
    assert main(["train", "--data", str(d), "--out", str(tmp_path / "r"), "--variant", variant]) == 1
