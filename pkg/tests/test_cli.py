import csv
import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from apwave.cli import ConfigError, list_presets, load_config, main
from apwave.solver import load_snapshot

GOLDEN = Path(__file__).parent / "golden"


def write_toml(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def read_csv(path: Path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return np.array([[float(r["t"]), float(r["value"])] for r in rows])


def test_presets_listed(capsys):
    assert main(["presets"]) == 0
    names = capsys.readouterr().out.split()
    assert "decay_burgers" in names and names == list_presets()


def test_invalid_config_lists_every_problem(tmp_path, capsys):
    cfg = write_toml(tmp_path / "bad.toml", """
kind = "decay"
[flux]
preset = "nosuchflux"
[grid]
cells = 2
[time]
schedule = [1.0, 0.5]
[tolerances]
final_max = -1.0
[scheme]
cfl = 3.0
""")
    assert main(["decay", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    for field in ("flux:", "initial:", "grid.cells", "time.schedule", "tolerances.final_max", "scheme"):
        assert field in err, field
    assert not (tmp_path / "o").exists()


def test_load_config_collects_problems():
    with pytest.raises(ConfigError) as exc:
        load_config("decay", {"kind": "simulate"}, Path("."))
    probs = exc.value.problems
    assert any(p.startswith("kind:") for p in probs)
    assert sum(p.endswith("required for kind 'decay'") for p in probs) == 4


def test_memory_cap_rejected(tmp_path, monkeypatch):
    monkeypatch.setenv("APWAVE_MEM_CAP_MB", "1")
    raw = {"flux": {"preset": "burgers"}, "grid": {"cells": 256}, "time": {"schedule": [1.0]},
           "initial": {"basis": {"labels": ["1", "s2"], "values": [1.0, 2**0.5]},
                       "terms": [{"kind": "sin", "coords": ["1", "0"], "amplitude": 1.0},
                                 {"kind": "sin", "coords": ["0", "1"], "amplitude": 1.0}]}}
    with pytest.raises(ConfigError) as exc:
        load_config("decay", raw, tmp_path)
    assert "APWAVE_MEM_CAP_MB" in str(exc.value)


def test_missing_config_file(tmp_path):
    assert main(["decay", "--config", str(tmp_path / "nope.toml")]) == 1


def test_simulate_constant_is_unchanged(tmp_path):
    cfg = write_toml(tmp_path / "c.toml", """
kind = "simulate"
[flux]
preset = "burgers"
[initial]
constant = 0.3
[grid]
cells = 32
[time]
schedule = [0.5, 1.0]
""")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    snaps = sorted((tmp_path / "o").glob("snapshot_*.bin"))
    assert len(snaps) == 2
    for p in snaps:
        assert np.all(load_snapshot(p).values == 0.3)


def test_nondeg_witness_exits_2(tmp_path):
    out = tmp_path / "nd"
    assert main(["nondeg-check", "--config", "preset:nondeg_witness", "--out", str(out)]) == 2
    doc = json.loads((out / "nondeg.json").read_text())
    assert doc["verdict"] == "fail"
    assert doc["witness_coords"] == [0, 1]
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "verdict-failure" and man["exit_code"] == 2


def test_nondeg_burgers_passes(tmp_path):
    assert main(["nondeg-check", "--config", "preset:nondeg_burgers", "--out", str(tmp_path)]) == 0


def test_decay_matches_golden(tmp_path):
    out = tmp_path / "d"
    assert main(["decay", "--config", str(GOLDEN / "decay_small.toml"), "--out", str(out)]) == 0
    got, want = read_csv(out / "decay.csv"), read_csv(GOLDEN / "decay_small.csv")
    assert got.shape == want.shape
    assert np.max(np.abs(got - want)) <= 1e-9
    # midpoint rule for the mean of |sin| at t = 0
    assert abs(got[0, 1] - 2 / math.pi) <= 1e-3


def test_manifest_complete(tmp_path):
    out = tmp_path / "d"
    main(["decay", "--config", str(GOLDEN / "decay_small.toml"), "--out", str(out)])
    man = json.loads((out / "manifest.json").read_text())
    for key in ("kind", "config", "config_hash", "code_version", "backend", "wall_time_s", "artifacts",
                "status", "exit_code", "error", "rerun"):
        assert key in man, key
    assert man["artifacts"] == ["decay.csv", "decay.json"]
    assert man["error"] is None and man["exit_code"] == 0
    rep = json.loads((out / "decay.json").read_text())["reproducibility"]
    assert rep["config_hash"] == man["config_hash"] and rep["seed"] == 7
    # the recorded config reruns to the same numbers
    again = tmp_path / "again"
    assert main(["decay", "--config", str(out / "config.json"), "--out", str(again)]) == 0
    assert (again / "decay.csv").read_text() == (out / "decay.csv").read_text()


def _strip(doc):
    doc = dict(doc)
    doc.pop("wall_time_s", None)
    doc.pop("rerun", None)
    return doc


def test_deterministic_across_runs_and_threads(tmp_path):
    outs = []
    for i, threads in enumerate(("1", "2", "1")):
        out = tmp_path / f"r{i}"
        assert main(["contract", "--config", "preset:contraction_burgers", "--out", str(out),
                     "--threads", threads]) == 0
        outs.append(out)
    ref = outs[0]
    for out in outs[1:]:
        assert (out / "contract.csv").read_text() == (ref / "contract.csv").read_text()
        assert (out / "contract.json").read_text() == (ref / "contract.json").read_text()
        a = _strip(json.loads((out / "manifest.json").read_text()))
        b = _strip(json.loads((ref / "manifest.json").read_text()))
        assert a == b


def test_backends_agree_through_cli(tmp_path):
    env = dict(os.environ, APWAVE_BACKEND="numpy")
    out = tmp_path / "np"
    subprocess.run([sys.executable, "-m", "apwave.cli", "decay", "--config", str(GOLDEN / "decay_small.toml"),
                    "--out", str(out)], check=True, env=env, capture_output=True)
    got, want = read_csv(out / "decay.csv"), read_csv(GOLDEN / "decay_small.csv")
    assert np.max(np.abs(got - want)) <= 1e-12
    assert json.loads((out / "manifest.json").read_text())["backend"] == "numpy"
