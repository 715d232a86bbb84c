import os
import subprocess
import sys

import numpy as np
import pytest

from cdg import analysis, precondition as pc, tensor
from cdg.cli import main
from cdg.precondition import PrecondConfig


def test_verify_single_suite(capsys):
    assert main(["verify", "--suite", "duality"]) == 0
    out = capsys.readouterr().out
    assert "[PASS] duality" in out and "oracle" not in out


def test_verify_rejects_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.txt"
    cfg.write_text("lambda = -1\n")
    assert main(["verify", "--suite", "residual", "--config", str(cfg)]) == 2
    assert "lambda" in capsys.readouterr().err


def test_verify_failure_exit_code(monkeypatch, capsys):
    from cdg import verify

    monkeypatch.setitem(verify.SUITES, "broken",
                        lambda rng: [verify.Check("always fails", False, "injected")])
    assert main(["verify", "--suite", "broken"]) == 1
    assert "always fails" in capsys.readouterr().out


def test_precondition_command(tmp_path, rng):
    f = rng.standard_normal((8, 3, 5, 5))
    src, dst = tmp_path / "g.cdg", tmp_path / "out.cdg"
    tensor.save(src, f)
    assert main(["precondition", "--in", str(src), "--out", str(dst), "--metric", "sobolev_h1",
                 "--lambda", "0.5", "--beta", "0", "--axis", "input"]) == 0
    expect = pc.precondition(f, PrecondConfig(metric="sobolev_h1", lam=0.5, beta=0.0, axis="input"))
    assert tensor.load(dst).tobytes() == expect.tobytes()


def test_precondition_bad_lambda(tmp_path, rng):
    src = tmp_path / "g.cdg"
    tensor.save(src, rng.standard_normal((4, 1, 1, 1)))
    assert main(["precondition", "--in", str(src), "--out", str(tmp_path / "o"),
                 "--lambda", "-1"]) == 2


def test_precondition_io_errors(tmp_path):
    assert main(["precondition", "--in", str(tmp_path / "missing"), "--out",
                 str(tmp_path / "o")]) == 3
    bad = tmp_path / "bad.cdg"
    bad.write_bytes(b"nope")
    assert main(["precondition", "--in", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_analyze_command(tmp_path, rng):
    x = np.repeat(rng.standard_normal((1, 4, 3, 3)), 5, axis=0)
    src, out = tmp_path / "w.cdg", tmp_path / "corr.csv"
    tensor.save(src, x)
    assert main(["analyze", "--in", str(src), "--out", str(out), "--max-d", "3"]) == 0
    rows = analysis.read_csv(out)
    assert [int(r["d"]) for r in rows] == [1, 2, 3]
    assert all(float(r["mean_corr"]) == pytest.approx(1.0) for r in rows)
    assert rows[0]["layer"] == "w"


def test_analyze_too_few_slices(tmp_path):
    src = tmp_path / "w.cdg"
    tensor.save(src, np.ones((1, 2, 1, 1)))
    assert main(["analyze", "--in", str(src), "--out", str(tmp_path / "c.csv")]) == 2


def test_train_synthetic(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["train", "--task", "synthetic", "--seed", "1", "--epochs", "5", "--lr", "0.5",
                 "--set", "momentum=0", "--set", "weight_decay=0", "--out-dir", str(out),
                 "--no-figures", "--save-tensors"])
    assert code == 0
    assert {"accuracy.csv", "correlation.csv", "summary.json", "config.txt",
            "seed1_x.cdg"} <= set(os.listdir(out))
    assert "final loss" in capsys.readouterr().out


def test_train_missing_data(tmp_path, monkeypatch):
    monkeypatch.delenv("CDG_DATA_DIR", raising=False)
    assert main(["train", "--data-dir", str(tmp_path / "none"), "--out-dir", str(tmp_path / "o"),
                 "--epochs", "1", "--seed", "1"]) == 3
    assert not (tmp_path / "o").exists()


def test_train_mnist_and_analyze_saved_tensor(idx_dir, tmp_path):
    out = tmp_path / "m"
    assert main(["train", "--data-dir", idx_dir, "--seed", "2", "--epochs", "1", "--train-n", "40",
                 "--test-n", "20", "--batch-size", "20", "--set", "c1=4", "--set", "c2=6",
                 "--out-dir", str(out), "--save-tensors", "--no-figures"]) == 0
    w = out / "seed2_conv2.weight.cdg"
    assert tensor.load(w).shape == (6, 4, 5, 5)
    assert main(["analyze", "--in", str(w), "--axis", "input", "--out", str(tmp_path / "c.csv")]) == 0


def test_sweep_and_ablate_commands(idx_dir, tmp_path, capsys):
    common = ["--data-dir", idx_dir, "--seed", "1", "--epochs", "1", "--train-n", "40",
              "--test-n", "20", "--batch-size", "20", "--set", "c1=4", "--set", "c2=6",
              "--no-figures"]
    assert main(["sweep", "--lambdas", "0,1", "--metrics", "sobolev_tilde_h1",
                 "--out-dir", str(tmp_path / "s"), *common]) == 0
    assert len(analysis.read_csv(tmp_path / "s" / "sweep.csv")) == 2
    assert main(["ablate", "--out-dir", str(tmp_path / "a"), *common]) == 0
    assert len(analysis.read_csv(tmp_path / "a" / "ablation.csv")) == 5


@pytest.mark.parametrize("argv", [
    [], ["bogus"], ["train", "--metric", "nope"], ["train", "--set", "noequals"],
    ["train", "--set", "unknown=1"], ["train", "--task", "synthetic", "--lambda", "-2"],
])
def test_argument_errors(argv, tmp_path):
    assert main(argv + (["--out-dir", str(tmp_path)] if len(argv) > 1 else [])) == 2


def test_console_script(tmp_path):
    res = subprocess.run([sys.executable, "-m", "cdg.cli", "verify", "--suite", "residual"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0, res.stderr
    assert "[PASS] residual" in res.stdout
