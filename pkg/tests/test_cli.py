import json
import subprocess
import sys

import numpy as np
import pytest

from boolfield.cli import main
from boolfield.modelfile import load_model, save_model
from boolfield.pbm import read_pbm, write_pbm
from boolfield.witnesses import life_network

CONFIG = {
    "seed": 3,
    "network": {"grid": [3, 3], "d": 2, "kernel_widths": [8, 4, 2, 1], "bias": 5.0,
                "use_position": False},
    "train": {"epochs": 2, "batch_size": 64, "frozen": ["*.bias"]},
    "task": {"kind": "exhaustive_rule_table", "rule": "life"},
}


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps(CONFIG))
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


def test_gen_train_harden_eval(workdir, capsys):
    w = workdir
    assert run("gen", "--config", w / "cfg.json", "--out", w / "data") == 0
    assert (w / "data" / "manifest.txt").exists()
    assert run("train", "--config", w / "cfg.json", "--data", w / "data",
               "--model-out", w / "soft.json") == 0
    metrics = (w / "soft.metrics.csv").read_text().splitlines()
    assert metrics[0].startswith("epoch,loss") and len(metrics) == 3
    assert run("harden", "--model", w / "soft.json", "--out", w / "hard.json",
               "--netlist-dir", w / "nets") == 0
    assert {p.name for p in (w / "nets").iterdir()} == {
        "layer0_kernel.net", "layer0_query.net", "layer0_key.net"}
    capsys.readouterr()
    results = {}
    for model, mode in [("soft.json", "soft"), ("hard.json", "hard"), ("hard.json", "packed"),
                        ("hard.json", "soft")]:
        assert run("eval", "--model", w / model, "--data", w / "data", "--mode", mode) == 0
        results[(model, mode)] = json.loads(capsys.readouterr().out)
    hard = results[("hard.json", "hard")]
    assert results[("hard.json", "packed")]["bit_accuracy"] == hard["bit_accuracy"]
    assert results[("hard.json", "soft")]["bit_accuracy"] == hard["bit_accuracy"]


def test_eval_life_witness_exact(workdir, capsys):
    save_model(life_network((3, 3)), workdir / "life.json")
    assert run("gen", "--config", workdir / "cfg.json", "--out", workdir / "data") == 0
    capsys.readouterr()
    assert run("eval", "--model", workdir / "life.json", "--data", workdir / "data") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["exact_match"] == 1.0 and out["bit_accuracy"] == 1.0


def test_packed_needs_hard_model(workdir, capsys):
    run("gen", "--config", workdir / "cfg.json", "--out", workdir / "data")
    run("train", "--config", workdir / "cfg.json", "--data", workdir / "data",
        "--model-out", workdir / "soft.json", "--epochs", "1")
    capsys.readouterr()
    assert run("eval", "--model", workdir / "soft.json", "--data", workdir / "data",
               "--mode", "packed") == 1
    assert "harden" in capsys.readouterr().err


def test_evolve(tmp_path, rng):
    save_model(life_network((8, 8)), tmp_path / "life.json")
    f = np.zeros((8, 8), dtype=np.uint8)
    f[3, 2:5] = 1
    write_pbm(f, tmp_path / "seed.pbm")
    assert run("evolve", "--model", tmp_path / "life.json", "--seed-image", tmp_path / "seed.pbm",
               "--steps", 2, "--out", tmp_path / "frames") == 0
    frames = sorted((tmp_path / "frames").iterdir())
    assert [p.name for p in frames] == ["frame_000.pbm", "frame_001.pbm", "frame_002.pbm"]
    np.testing.assert_array_equal(read_pbm(frames[0]), f)
    np.testing.assert_array_equal(read_pbm(frames[1]), f.T)
    np.testing.assert_array_equal(read_pbm(frames[2]), f)


def test_evolve_zero_steps(tmp_path, capsys):
    save_model(life_network((4, 4)), tmp_path / "life.json")
    write_pbm(np.zeros((4, 4), dtype=np.uint8), tmp_path / "s.pbm")
    assert run("evolve", "--model", tmp_path / "life.json", "--seed-image", tmp_path / "s.pbm",
               "--steps", 0, "--out", tmp_path / "f") == 1
    assert "steps" in capsys.readouterr().err


def test_bench(tmp_path, capsys):
    save_model(life_network((16, 16)), tmp_path / "life.json")
    assert run("bench", "--model", tmp_path / "life.json", "--size", "16x16", "--steps", 2,
               "--runs", 1) == 0
    header, row = capsys.readouterr().out.splitlines()
    cols = header.split(",")
    assert "ratio" in cols and "packed_updates_per_s" in cols
    assert float(row.split(",")[cols.index("ratio")]) > 0


def test_reproducible_and_thread_independent(workdir):
    w = workdir
    run("gen", "--config", w / "cfg.json", "--out", w / "data")
    outputs = []
    for name, threads in [("a", 1), ("b", 1), ("c", 3)]:
        assert run("train", "--config", w / "cfg.json", "--data", w / "data", "--threads",
                   threads, "--model-out", w / f"{name}.json") == 0
        outputs.append(((w / f"{name}.json").read_bytes(),
                        (w / f"{name}.metrics.csv").read_bytes()))
    assert outputs[0] == outputs[1] == outputs[2]


def test_seed_override_changes_data(workdir):
    w = workdir
    cfg = dict(CONFIG, task={"kind": "ca_rule", "grid": [4, 4], "samples": 3})
    (w / "ca.json").write_text(json.dumps(cfg))
    run("gen", "--config", w / "ca.json", "--out", w / "d1")
    run("gen", "--config", w / "ca.json", "--out", w / "d2", "--seed", 99)
    assert (w / "d1" / "input_00000.pbm").read_bytes() != (w / "d2" / "input_00000.pbm").read_bytes()


def test_errors(tmp_path, capsys):
    assert run("eval", "--model", tmp_path / "none.json", "--data", tmp_path) == 1
    assert capsys.readouterr().err.startswith("boolfield: error:")
    (tmp_path / "bad.json").write_text('{"train": {"epochz": 1}}')
    assert run("gen", "--config", tmp_path / "bad.json", "--out", tmp_path / "d") == 1
    assert "epochz" in capsys.readouterr().err
    assert run("gen", "--out", tmp_path / "d", "--threads", 0) == 2
    with pytest.raises(SystemExit):
        run("bench", "--model", "m", "--size", "big")


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "boolfield", "--help"], capture_output=True,
                         text=True, check=True)
    for cmd in ("gen", "train", "harden", "eval", "evolve", "bench"):
        assert cmd in out.stdout
