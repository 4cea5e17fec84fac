import filecmp
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from bsblfr.bench import CSV_HEADER
from bsblfr.cli import main
from bsblfr.data import read_pgm, synth_dataset, write_pgm

ROOT = Path(__file__).parents[1]
PLANTED = ROOT / "tests" / "fixtures" / "planted_10x16"


def same_tree(a: Path, b: Path) -> bool:
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(same_tree(a / d, b / d) for d in cmp.common_dirs)


def test_synth_twice_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["synth", "--seed", "7", "--out", str(tmp_path / name), "--dims", "10x8"]) == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")
    assert len(list((tmp_path / "a").rglob("*.pgm"))) == 75
    assert main(["synth", "--seed", "8", "--out", str(tmp_path / "c"), "--dims", "10x8"]) == 0
    assert not same_tree(tmp_path / "a", tmp_path / "c")


@pytest.mark.parametrize("solver", ["bsbl", "l1", "block_l1"])
def test_recover_planted_fixture(solver, capsys, tmp_path):
    out = tmp_path / "x.csv"
    code = main(["recover", str(PLANTED / "phi.csv"), str(PLANTED / "y.csv"), "--blocks", "4",
                 "--solver", solver, "--out", str(out)])
    assert code == 0
    assert "support:    {2}" in capsys.readouterr().out
    x_true = np.loadtxt(PLANTED / "x_true.csv", delimiter=",")
    x_hat = np.loadtxt(out, delimiter=",")
    assert np.linalg.norm(x_hat - x_true) < 1e-3 * np.linalg.norm(x_true)


def test_recover_bad_blocks(capsys):
    assert main(["recover", str(PLANTED / "phi.csv"), str(PLANTED / "y.csv"), "--blocks", "5"]) == 1
    assert "does not divide" in capsys.readouterr().err


def test_bench_example_config(tmp_path):
    out = tmp_path / "report.csv"
    assert main(["bench", str(ROOT / "configs" / "example.toml"), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) - 1 == 6 * 2 * 2 * 1  # classifiers x features x corruption x trials


def test_bench_failed_cell_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text(
        "[dataset.synthetic]\nclasses = 2\nper_class = 4\ndims = [6, 5]\nsubspace_dim = 2\nnoise_sigma = 1.0\n"
        "[split]\nmode = \"count\"\ncount = 2\n"
        "[[features]]\nkind = \"eigenfaces\"\nd = 10\n[[classifiers]]\nname = \"nn\"\n"
    )
    assert main(["bench", str(cfg), "--format", "markdown", "--no-timing"]) == 2
    captured = capsys.readouterr()
    assert "| nan |" in captured.out and "failed" in captured.err


def test_bench_bad_config_exit_1(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("seed = 1\n[dataset]\npath = \"x\"\n[[classifiers]]\nname = \"svm\"\n")
    assert main(["bench", str(cfg)]) == 1
    assert "svm" in capsys.readouterr().err


def test_unknown_flag_exit_1(capsys):
    assert main(["recover", "--frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1


def test_selftest_passes(capsys):
    assert main(["selftest", "--instances", "10"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 2


def test_classify_command(tmp_path, capsys):
    ds = synth_dataset(classes=3, per_class=6, dims=(12, 10), subspace_dim=3, noise_sigma=1.0, seed=2, quantize=True)
    for c in range(3):
        folder = tmp_path / "dict" / f"person{c}"
        folder.mkdir(parents=True)
        for k, idx in enumerate(np.flatnonzero(ds.labels == c)[:5]):
            write_pgm(folder / f"{k}.pgm", ds.images[idx])
    probe = tmp_path / "probe.pgm"
    write_pgm(probe, ds.images[np.flatnonzero(ds.labels == 1)[5]])
    assert main(["classify", str(tmp_path / "dict"), str(probe), "--solver", "src"]) == 0
    assert "predicted: person1" in capsys.readouterr().out
    assert main(["classify", str(tmp_path / "dict"), str(probe), "--robust", "--downsample", "6x5"]) == 0
    assert "predicted: person1" in capsys.readouterr().out
    assert read_pgm(probe).shape == (12, 10)


def test_console_script_module_entry():
    proc = subprocess.run([sys.executable, "-m", "bsblfr", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "selftest" in proc.stdout
