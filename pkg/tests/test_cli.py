from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from macprune import cli
from macprune.config import ConfigError, ExperimentConfig, load_config, parse_pairs
from macprune.emsim import read_traces


def _run(tmp_path, *args):
    return cli.main(list(args))


def _tree(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


# --- config ------------------------------------------------------------------------

def test_parse_pairs():
    got = parse_pairs(["# comment", "", "p = 0.5", "seed=3", "forward=soft"])
    assert got == {"p": 0.5, "seed": 3, "forward": "soft"}
    for bad in (["nokey"], ["zzz=1"], ["p=abc"], ["p=0.5", "p=0.6"], ["=3"]):
        with pytest.raises(ConfigError):
            parse_pairs(bad)


@pytest.mark.parametrize("kw", [
    {"p": 0.0}, {"p": 1.5}, {"q": 0.6, "p": 0.5}, {"sigma": 0.0}, {"mode": "dance"},
    {"j_max": 9}, {"D": 4}, {"n_traces": -1}, {"forward": "x"}, {"layer": "/no/such.csv"},
    {"mode": "train-iapam", "q": 0.0}, {"mode": "simulate", "p": 0.7, "q": 0.4},
    {"p": float("nan")},
])
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kw)


def test_config_file_and_hash(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("p=0.5\nsigma=8\n")
    cfg = load_config(f, ["seed=2"], mode="attack")
    assert (cfg.p, cfg.sigma, cfg.seed, cfg.mode) == (0.5, 8.0, 2, "attack")
    same = ExperimentConfig(mode="attack", p=0.5, sigma=8.0, seed=2, out="elsewhere")
    assert cfg.hash() == same.hash()
    assert cfg.hash() != ExperimentConfig(mode="attack", p=0.5, sigma=8.0, seed=3).hash()
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


# --- runner --------------------------------------------------------------------------

def test_strength_reproduces_table(tmp_path):
    assert _run(tmp_path, "strength", f"out={tmp_path}") == 0
    rows = list(csv.reader(open(tmp_path / "j_star.csv")))
    assert [int(r[1]) for r in rows[1:]] == [12, 10, 8, 6, 5, 7, 10, 16, 33]
    side = json.loads((tmp_path / "j_star.csv.json").read_text())
    assert side["config_hash"] == load_config(None, [], mode="strength").hash()


def test_simulate_zero_traces_header_only(tmp_path):
    assert _run(tmp_path, "simulate", "n_traces=0", f"out={tmp_path}") == 0
    raw = (tmp_path / "traces.macp").read_bytes()
    assert len(raw) == 16 and raw[:4] == b"MACP"
    samples, meta = read_traces(tmp_path / "traces.macp")
    assert samples.shape == (0, 8) and meta["traces"]["n_traces"] == 0
    assert "config_hash" in meta


def test_attack_defaults_recover_all(tmp_path):
    assert _run(tmp_path, "attack", f"out={tmp_path}") == 0
    rows = list(csv.DictReader(open(tmp_path / "attack.csv")))
    assert len(rows) == 8
    assert all(r["success"] == "1" and r["recovered_weight"] == r["truth_weight"] for r in rows)


def test_attack_from_simulated_file(tmp_path):
    sim = tmp_path / "sim"
    assert _run(tmp_path, "simulate", f"out={sim}") == 0
    assert _run(tmp_path, "attack", f"traces={sim / 'traces.macp'}", f"out={tmp_path / 'a'}") == 0
    rows = list(csv.DictReader(open(tmp_path / "a" / "attack.csv")))
    assert sum(r["success"] == "1" for r in rows) == 8


def test_byte_identical_reruns(tmp_path):
    for mode in ("simulate", "overhead", "strength"):
        a, b = tmp_path / f"{mode}1", tmp_path / f"{mode}2"
        assert _run(tmp_path, mode, "p=0.5", "n_traces=300", f"out={a}") == 0
        assert _run(tmp_path, mode, "p=0.5", "n_traces=300", f"out={b}") == 0
        assert _tree(a) == _tree(b)


def test_train_iapam_outputs(tmp_path):
    args = ["train-iapam", "p=0.7", "q=0.4", "epochs=2", "iterations=1"]
    assert _run(tmp_path, *args, f"out={tmp_path / 'a'}") == 0
    assert _run(tmp_path, *args, f"out={tmp_path / 'b'}") == 0
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
    names = set(_tree(tmp_path / "a"))
    assert {"map.csv", "importance.csv", "training_curve.csv", "accuracy.csv"} <= names
    assert all(n + ".json" in names for n in names if not n.endswith(".json"))


def test_every_csv_has_a_unit_header(tmp_path):
    for mode in ("simulate", "attack", "strength", "overhead"):
        assert _run(tmp_path, mode, "n_traces=200", f"out={tmp_path}") == 0
    for f in tmp_path.glob("*.csv"):
        head = f.read_text().splitlines()[0]
        assert any(ch.isalpha() for ch in head), f.name


def test_invalid_config_exit_and_single_line(tmp_path, capsys):
    assert _run(tmp_path, "simulate", "p=2", f"out={tmp_path / 'x'}") == 2
    err = capsys.readouterr().err
    assert err.startswith("error:") and err.count("\n") == 1
    assert not (tmp_path / "x").exists()
    assert _run(tmp_path, "simulate", "bogus=1") == 2


def test_partial_outputs_removed(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(cli, "write_int_grid", boom)
    out = tmp_path / "o"
    assert _run(tmp_path, "simulate", "n_traces=50", f"out={out}") == 2
    assert list(out.iterdir()) == []
    assert "disk full" in capsys.readouterr().err


def test_trained_map_drives_simulation(tmp_path):
    assert _run(tmp_path, "train-iapam", "p=0.7", "q=0.4", "epochs=1", "iterations=1", f"out={tmp_path / 't'}") == 0
    m = tmp_path / "t" / "map.csv"
    args = ["simulate", "p=0.7", "q=0.4", "M=64", "n_traces=300", f"map={m}", f"out={tmp_path / 's'}"]
    assert _run(tmp_path, *args) == 0
    rows = np.loadtxt(tmp_path / "s" / "inputs.csv", delimiter=",", comments="#")
    crit = np.loadtxt(m, delimiter=",", comments="#").ravel().astype(bool)
    assert rows.shape == (300, 64)
    # masking shows up in the leakage, not the inputs; inputs stay the raw pixels
    samples, _ = read_traces(tmp_path / "s" / "traces.macp")
    assert samples.shape == (300, 64) and crit.sum() == int(0.4 * 64)


def test_map_size_mismatch_is_config_error(tmp_path):
    m = tmp_path / "map.csv"
    m.write_text("1,0,0\n")
    assert _run(tmp_path, "simulate", "p=0.7", "q=0.3", f"map={m}", f"out={tmp_path / 'o'}") == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "macprune", "overhead", f"out={tmp_path}"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "0.454545" in r.stdout
    r = subprocess.run([sys.executable, "-m", "macprune", "overhead", "D=9"], capture_output=True, text=True)
    assert r.returncode == 2 and r.stderr.count("\n") == 1
