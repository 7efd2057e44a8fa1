import hashlib

import numpy as np
import pytest

from urcod import cli
from urcod.imagedata import load_dataset, read_gray
from urcod.trainer import load_pipeline

TINY = ["--set", "epochs=2", "--set", "decay_start_epoch=1", "--set", "peg_epochs=2", "--set", "batch_size=3"]


def digest(root):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.glob("*.png"))}


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "data"
    assert cli.run(["prepare", "--count", "6", "--size", "64", "--seed", "7", "--out", str(root)]) == 0
    return root


@pytest.fixture(scope="module")
def checkpoint(data):
    out = data.parent / "run"
    assert cli.run(["train", "--data", str(data), "--out", str(out), "--seed", "1", *TINY]) == 0
    return out / "final.urcod"


def test_prepare_cardinality(tmp_path):
    assert cli.run(["prepare", "--count", "200", "--size", "64", "--seed", "7", "--out", str(tmp_path)]) == 0
    assert len(list((tmp_path / "images").glob("*.png"))) == 200
    assert len(list((tmp_path / "masks").glob("*.png"))) == 200


def test_prepare_is_reproducible(tmp_path, data):
    assert cli.run(["prepare", "--count", "6", "--size", "64", "--seed", "7", "--out", str(tmp_path)]) == 0
    assert digest(tmp_path / "images") == digest(data / "images")
    assert digest(tmp_path / "masks") == digest(data / "masks")


def test_eval_perfect_predictions(data, tmp_path, capsys):
    csv = tmp_path / "scores.csv"
    assert cli.run(["eval", "--pred", str(data / "masks"), "--data", str(data), "--out", str(csv)]) == 0
    lines = csv.read_text().splitlines()
    assert lines[0] == "id,mae,s_measure,e_measure,weighted_f"
    assert lines[-1] == "MEAN,0.000000,1.000000,1.000000,1.000000"
    assert len(lines) == 8


def test_infer_quantizes_prediction(data, checkpoint, tmp_path):
    out = tmp_path / "preds"
    assert cli.run(["infer", "--data", str(data), "--checkpoint", str(checkpoint), "--out", str(out)]) == 0
    samples = load_dataset(data)
    pipe = load_pipeline(checkpoint)
    expected = pipe.predict(samples)
    for s, m in zip(samples, expected):
        written = read_gray(out / f"{s.id}.png")
        np.testing.assert_array_equal(np.rint(written * 255), np.rint(np.clip(m, 0, 1) * 255))


def test_infer_then_eval(data, checkpoint, tmp_path, capsys):
    preds = tmp_path / "p"
    assert cli.run(["infer", "--data", str(data), "--checkpoint", str(checkpoint), "--out", str(preds)]) == 0
    capsys.readouterr()
    assert cli.run(["eval", "--pred", str(preds), "--data", str(data)]) == 0
    assert capsys.readouterr().out.splitlines()[-1].startswith("MEAN,")


def test_infer_sample_mode_seeded(data, checkpoint, tmp_path):
    runs = []
    for name, seed in (("a", "3"), ("b", "3")):
        out = tmp_path / name
        args = ["infer", "--data", str(data), "--checkpoint", str(checkpoint), "--out", str(out)]
        assert cli.run(args + ["--mode", "sample", "--seed", seed]) == 0
        runs.append(digest(out))
    assert runs[0] == runs[1]


def test_visualize_writes_panels(data, checkpoint, tmp_path):
    out = tmp_path / "vis"
    assert cli.run(["visualize", "--data", str(data), "--checkpoint", str(checkpoint), "--out", str(out), "--limit", "2"]) == 0
    panels = sorted(out.glob("*_panel.png"))
    assert len(panels) == 2
    import cv2

    assert cv2.imread(str(panels[0])).shape == (64, 256, 3)


@pytest.mark.parametrize(
    "argv",
    [
        ["frobnicate"],
        [],
        ["eval", "--pred", "x"],
        ["infer", "--data", "d", "--checkpoint", "c", "--out", "o", "--mode", "median"],
        ["prepare", "--out", "o", "--count", "many"],
    ],
)
def test_bad_flags_exit_1_with_usage(argv, capsys):
    assert cli.run(argv) == 1
    assert "usage:" in capsys.readouterr().err


def test_user_errors_exit_1(tmp_path, capsys):
    assert cli.run(["eval", "--pred", str(tmp_path), "--data", str(tmp_path / "missing")]) == 1
    assert "error" in capsys.readouterr().err
    assert cli.run(["prepare", "--out", str(tmp_path), "--count", "0"]) == 1


def test_internal_error_exit_2(monkeypatch, tmp_path, capsys):
    def boom(args):
        raise RuntimeError("kaboom")

    monkeypatch.setitem(cli.COMMANDS, "prepare", boom)
    assert cli.run(["prepare", "--out", str(tmp_path)]) == 2
    assert "kaboom" in capsys.readouterr().err


def test_config_file_and_overrides(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("epochs=5\nlr0=0.01\n# comment\n")
    args = cli.build_parser().parse_args(
        ["train", "--data", "d", "--out", "o", "--config", str(conf), "--set", "epochs=3", "--set", "decay_start_epoch=2", "--seed", "9"]
    )
    cfg = cli._config(args)
    assert (cfg.epochs, cfg.lr0, cfg.seed, cfg.decay_start_epoch) == (3, 0.01, 9, 2)
    paper = cli._config(cli.build_parser().parse_args(["train", "--data", "d", "--out", "o", "--preset", "paper"]))
    assert (paper.epochs, paper.lr0) == (100, 5e-5)
