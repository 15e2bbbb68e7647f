import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from cwdae.cli import main
from cwdae.data import file_digest

SCHEMA = "x1,continuous\nx2,continuous\nb,discrete,no|yes\n"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(0)
    x = rng.multivariate_normal([0, 0], [[1, 0.7], [0.7, 1]], size=300)
    pd.DataFrame({"x1": x[:, 0], "x2": x[:, 1], "b": np.where(x[:, 0] > 0, "yes", "no")}).to_csv(
        d / "data.csv", index=False)
    (d / "s.schema").write_text(SCHEMA)
    return d


def train_args(d, out, *extra):
    return ["train", "--data", str(d / "data.csv"), "--schema", str(d / "s.schema"), "--out", str(d / out),
            "--epochs", "2", "--batch-size", "100", "--train-fraction", "0.8", *extra]


def manifest(path):
    return dict(line.split(": ", 1) for line in path.read_text().splitlines() if ": " in line)


@pytest.fixture(scope="module")
def trained(workdir):
    assert main(train_args(workdir, "run")) == 0
    return workdir / "run"


def test_train_outputs_and_manifest(trained):
    for name in ("model.ckpt", "loss_history.csv", "train.csv", "test.csv", "manifest.txt"):
        assert (trained / name).exists()
    assert len(pd.read_csv(trained / "train.csv")) == 240
    m = manifest(trained / "manifest.txt")
    assert m["command"] == "train"
    assert m["output.model.ckpt.sha256"] == file_digest(trained / "model.ckpt")
    assert '"pi": 0.05' in m["config"] and m["n_train"] == "240"
    assert {"version", "git_describe", "wall_clock_seconds", "input.data.sha256"} <= set(m)


def test_generate_defaults_to_training_size(trained, workdir):
    assert main(["generate", "--checkpoint", str(trained / "model.ckpt"), "--out", str(workdir / "gen")]) == 0
    assert len(pd.read_csv(workdir / "gen" / "synthetic.csv")) == 240
    assert main(["generate", "--checkpoint", str(trained / "model.ckpt"), "--n", "0",
                 "--out", str(workdir / "gen0")]) == 0
    assert (workdir / "gen0" / "synthetic.csv").read_text() == "x1,x2,b\n"


def test_evaluate_and_compare(trained, workdir, capsys):
    reports = []
    for seed in (1, 2):
        gen, ev = workdir / f"g{seed}", workdir / f"e{seed}"
        assert main(["generate", "--checkpoint", str(trained / "model.ckpt"), "--seed", str(seed),
                     "--out", str(gen)]) == 0
        assert main(["evaluate", "--real-train", str(trained / "train.csv"), "--real-test",
                     str(trained / "test.csv"), "--synth", str(gen / "synthetic.csv"),
                     "--schema", str(workdir / "s.schema"), "--out", str(ev)]) == 0
        reports.append(str(ev))
    assert "dcr_rs" in capsys.readouterr().out
    report = pd.read_csv(reports[0] + "/report.csv")
    assert list(report["metric"])[:2] == ["ks", "w1"]
    assert main(["compare", "--reports", *reports, "--names", "a", "b", "--out", str(workdir / "cmp")]) == 0
    ranks = pd.read_csv(workdir / "cmp" / "ranks.csv", index_col=0)
    assert list(ranks.index) == ["a", "b"]
    assert set(ranks.loc[:, "ks"]) <= {1.0, 1.5, 2.0}
    assert "mean_rank" in ranks.columns


def test_emit_latent(trained, workdir):
    assert main(["emit-latent", "--checkpoint", str(trained / "model.ckpt"), "--mode", "grid",
                 "--out", str(workdir / "lat")]) == 0
    df = pd.read_csv(workdir / "lat" / "latent_scatter.csv")
    assert len(df) == 1681 and list(df.columns[:2]) == ["z1", "z2"]


def test_invalid_inputs_exit_2(workdir, capsys):
    assert main(["generate", "--checkpoint", str(workdir / "missing.ckpt"), "--out", str(workdir / "x")]) == 2
    (workdir / "other.schema").write_text("x1,continuous\n")
    assert main(["generate", "--checkpoint", str(workdir / "run" / "model.ckpt"), "--schema",
                 str(workdir / "other.schema"), "--out", str(workdir / "y")]) == 2
    assert main(train_args(workdir, "bad", "--pi", "1.5")) == 2
    assert "cwdae:" in capsys.readouterr().err


def test_numerical_failure_exits_3(workdir):
    assert main(train_args(workdir, "nan", "--lr", "1e6")) == 3
    assert (workdir / "nan" / "model.aborted.ckpt").exists()


def test_flags_after_subcommand_and_module_entry(workdir):
    out = subprocess.run([sys.executable, "-m", "cwdae.cli", "emit-latent", "--checkpoint",
                          str(workdir / "run" / "model.ckpt"), "--n", "3", "--out", str(workdir / "sub"),
                          "--threads", "1", "-v"], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert len(pd.read_csv(workdir / "sub" / "latent_scatter.csv")) == 3
