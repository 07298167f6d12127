import json

import numpy as np
import pytest

from anchorflow.cli import main
from anchorflow.store import load_arrays, save_arrays, sha256_file

TOY = """
name = "toy"
seed = 3
[data]
kind = "two_moons"
n = 400
[net]
widths = [16, 16]
emb_dim = 16
[train]
steps = 10
batch = 32
"""

SHAPES = """
name = "shapes"
[data]
kind = "shapes"
n = 6
frames = 2
lr_res = [4, 4]
factor = 2
[degrade]
resize_factor = 2
[net]
widths = [16]
emb_dim = 8
hidden = 4
gate_width = 4
[train]
steps = 4
batch = 3
"""


@pytest.fixture
def toy_cfg(tmp_path):
    p = tmp_path / "toy.toml"
    p.write_text(TOY)
    return p


def _digest(folder, skip=("timing.json",)):
    return {f.name: sha256_file(f) for f in sorted(folder.iterdir()) if f.name not in skip}


def test_train_writes_checkpoint_csv_and_echo(toy_cfg, tmp_path):
    assert main(["train", "shortcut", str(toy_cfg), "--out", str(tmp_path / "r")]) == 0
    rows = (tmp_path / "r" / "loss.csv").read_text().splitlines()
    assert rows[0] == "step,phase,loss,lambda_mean" and len(rows) == 11
    assert sum(r.split(",")[1] == "fm" for r in rows[1:]) == 5
    assert {"checkpoint.afpk", "config.toml", "timing.json"} <= {f.name for f in (tmp_path / "r").iterdir()}


def test_train_rerun_is_byte_identical(toy_cfg, tmp_path):
    for d in ("a", "b"):
        assert main(["train", "shortcut", str(toy_cfg), "--out", str(tmp_path / d)]) == 0
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_resume_matches_straight_run(toy_cfg, tmp_path):
    main(["train", "shortcut", str(toy_cfg), "--out", str(tmp_path / "full")])
    short = tmp_path / "short.toml"
    short.write_text(TOY.replace("steps = 10", "steps = 6"))
    main(["train", "shortcut", str(short), "--out", str(tmp_path / "half")])
    main(["train", "shortcut", str(toy_cfg), "--out", str(tmp_path / "resumed"), "--resume", str(tmp_path / "half" / "checkpoint.afpk")])
    assert _digest(tmp_path / "full") == _digest(tmp_path / "resumed")


def test_unknown_key_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("foo = 1\n" + TOY)
    assert main(["train", "shortcut", str(p)]) == 2
    assert "foo" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_exit_3(tmp_path, capsys):
    p = tmp_path / "hot.toml"
    p.write_text(TOY.replace("batch = 32", "batch = 32\nlr = 1e300"))
    assert main(["train", "shortcut", str(p), "--out", str(tmp_path / "o")]) == 3
    assert "numerical" in capsys.readouterr().err


def test_missing_checkpoint_exit_2(tmp_path):
    assert main(["sample", str(tmp_path / "none.afpk"), "--out", str(tmp_path / "s")]) == 2


def test_argparse_usage_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["train", "nonsense", "cfg"])
    assert exc.value.code == 2


def test_sample_determinism_and_empty_request(toy_cfg, tmp_path):
    main(["train", "shortcut", str(toy_cfg), "--out", str(tmp_path / "r")])
    ckpt = str(tmp_path / "r" / "checkpoint.afpk")
    for d in ("s1", "s2"):
        assert main(["sample", ckpt, "--n", "50", "--sweep", "--out", str(tmp_path / d)]) == 0
    assert _digest(tmp_path / "s1") == _digest(tmp_path / "s2")
    manifest = json.loads((tmp_path / "s1" / "manifest.json").read_text())
    assert manifest["steps"] == [2, 3, 4, 5]
    assert main(["sample", ckpt, "--n", "0", "--out", str(tmp_path / "empty")]) == 0
    assert {f.name for f in (tmp_path / "empty").iterdir()} == {"manifest.json", "timing.json"}


def test_eval_outputs(toy_cfg, tmp_path):
    video = tmp_path / "const.afpk"
    save_arrays(video, {"video": np.full((2, 1, 32, 32), 0.37)})
    assert main(["eval", "mhd_mse", "--input", str(video), "--out", str(tmp_path / "m")]) == 0
    assert json.loads((tmp_path / "m" / "report.json").read_text())[0]["value"] == 0.0

    assert main(["eval", "latency", "--latency", "146", "--frames", "121", "--res", "2560x1440", "--out", str(tmp_path / "l")]) == 0
    rows = {r["metric"]: r["value"] for r in json.loads((tmp_path / "l" / "report.json").read_text())}
    assert round(rows["latency_per_frame"], 2) == 1.21

    main(["train", "shortcut", str(toy_cfg), "--out", str(tmp_path / "r")])
    main(["sample", str(tmp_path / "r" / "checkpoint.afpk"), "--n", "40", "--out", str(tmp_path / "s")])
    samples = str(tmp_path / "s" / "samples_4.afpk")
    for d in ("w1", "w2"):
        assert main(["eval", "sliced_w2", "--input", samples, "--ref", samples, "--out", str(tmp_path / d)]) == 0
    assert json.loads((tmp_path / "w1" / "report.json").read_text())[0]["value"] == 0.0
    assert _digest(tmp_path / "w1") == _digest(tmp_path / "w2")
    assert (tmp_path / "w1" / "report.csv").read_text().startswith("metric,value,config,note\n")


def test_eval_unknown_metric_exit_2(tmp_path):
    assert main(["eval", "fid", "--out", str(tmp_path / "x")]) == 2


def test_gen_manifest(toy_cfg, tmp_path):
    assert main(["gen", str(toy_cfg), "--out", str(tmp_path / "g")]) == 0
    text = (tmp_path / "g" / "manifest.txt").read_text()
    assert "shape.points = 400x2" in text and sha256_file(tmp_path / "g" / "data.afpk") in text


def test_two_stage_pipeline(tmp_path):
    cfg = tmp_path / "shapes.toml"
    cfg.write_text(SHAPES)
    assert main(["train", "anchor", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["train", "hr", str(cfg), "--out", str(tmp_path / "h")]) == 0
    hr_ckpt, a_ckpt = str(tmp_path / "h" / "checkpoint.afpk"), str(tmp_path / "a" / "checkpoint.afpk")
    assert main(["sample", hr_ckpt, "--n", "3", "--out", str(tmp_path / "s")]) == 2
    assert main(["sample", hr_ckpt, "--anchor-checkpoint", a_ckpt, "--n", "3", "--out", str(tmp_path / "s")]) == 0
    arrays, _ = load_arrays(tmp_path / "s" / "samples_4.afpk")
    assert arrays["anchor"].shape == (3, 2, 4, 4) and arrays["hr"].shape == (3, 2, 8, 8)
    assert (tmp_path / "s" / "hr_4.pgm").read_bytes().startswith(b"P5\n16 24\n255\n")
    assert main(["sample", hr_ckpt, "--gt-anchor", "--n", "2", "--out", str(tmp_path / "g")]) == 0


def test_env_output_root(toy_cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("ANCHORFLOW_OUT", str(tmp_path / "root"))
    assert main(["gen", str(toy_cfg)]) == 0
    assert (tmp_path / "root" / "toy" / "data.afpk").is_file()


def test_bench_small(tmp_path):
    cfg = tmp_path / "b.toml"
    cfg.write_text(TOY.replace("steps = 10", "steps = 4") + "[infer]\nsweep = [2]\n")
    assert main(["bench", str(cfg), "--seeds", "0", "--n-eval", "50", "--out", str(tmp_path / "b")]) == 0
    rows = json.loads((tmp_path / "b" / "bench.json").read_text())
    assert {(r["objective"], r["sampler"], r["steps"]) for r in rows} >= {("fm", "euler", 50), ("shortcut", "fewstep", 2)}
