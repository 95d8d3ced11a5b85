import json
from pathlib import Path

import numpy as np
import pytest

from hystrelax.cli import main
from hystrelax.controls import ControlField, OpenLoopControl, RelaxedControl
from hystrelax.io import (
    ConfigError,
    config_sha,
    dump_config,
    load_config,
    read_control,
    read_ndjson,
    resolve_config,
    write_control,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert cfg["preset"] in ("budworm", "stop-test", "decoupled")


def test_negative_dt_names_field(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"solver": {"dt": -0.1}}))
    with pytest.raises(ConfigError, match="solver.dt"):
        load_config(p)


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown key 'solver.dtt'"):
        resolve_config({"solver": {"dtt": 1}})
    with pytest.raises(ConfigError, match="params.bogus"):
        resolve_config({"params": {"bogus": 1}})
    p = tmp_path / "broken.json"
    p.write_text("{\n  \"seed\": 1,\n}")
    with pytest.raises(ConfigError, match="broken.json:3"):
        load_config(p)


def test_round_trip(tmp_path):
    cfg = load_config(CONFIGS / "budworm.json")
    p = tmp_path / "resolved.json"
    p.write_text(dump_config(cfg))
    again = load_config(p)
    assert again == cfg
    assert config_sha(again) == config_sha(cfg)


def test_config_sha_ignores_output_location():
    a = resolve_config({"out": "x"})
    b = resolve_config({"out": "y"})
    assert config_sha(a) == config_sha(b)
    assert config_sha(a) != config_sha(resolve_config({"seed": 5}))


@pytest.mark.parametrize("control", [
    ControlField(0.1, np.array([[0, 1], [1, 1]])),
    RelaxedControl.constant(0.1, 2, [0.25, 0.75], (2,)),
    OpenLoopControl(0.1, np.array([[0.5, -0.25], [0.0, 1.0]])),
])
def test_control_file_round_trip(tmp_path, control):
    path = write_control(tmp_path / "c.ndjson", control)
    back = read_control(path, 0.1)
    assert type(back) is type(control)
    for attr in ("indices", "weights", "values"):
        if hasattr(control, attr):
            np.testing.assert_array_equal(getattr(back, attr), getattr(control, attr))


def test_validate_all_presets(tmp_path):
    assert main(["validate", "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    names = [a["name"] for a in manifest["artifact_list"]]
    assert "resolved_config.json" in names and "validation.csv" in names


def test_simulate_artifacts(tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--config", str(CONFIGS / "budworm.json"), "--out", str(out),
                 "--grid", "16", "--dt", "0.002", "--plot-data"])
    assert code == 0
    recs = read_ndjson(out / "trajectory.ndjson")
    assert set(recs[0]) == {"t", "sigma", "v", "w", "u"}
    assert len(recs[0]["sigma"]) == 16
    assert recs[-1]["t"] == pytest.approx(2.0)
    assert len(read_ndjson(out / "control.ndjson")) == 1000
    header = (out / "diagnostics.csv").read_text().splitlines()[0]
    assert header.startswith("step,t,sigma_dot_H")
    assert (out / "long.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert json.loads((out / "resolved_config.json").read_text())["grid"]["n_cells"] == [16]


def test_simulate_from_control_file(tmp_path):
    ctrl = write_control(tmp_path / "u.ndjson", ControlField(0.01, np.ones((10, 8), dtype=np.int64)))
    cfg = {"grid": {"n_cells": [8]}, "solver": {"dt": 0.01, "t_end": 0.1, "stride": 1},
           "control": {"kind": "file", "path": str(ctrl)}, "out": str(tmp_path / "o")}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    assert main(["simulate", "--config", str(p)]) == 0
    recs = read_ndjson(tmp_path / "o" / "trajectory.ndjson")
    assert len(recs) == 11


def test_relax_small(tmp_path):
    code = main(["relax", "--grid", "16", "--windows", "2,4,8", "--dt", "0.005", "--out", str(tmp_path)])
    assert code == 0
    lines = (tmp_path / "relaxation.csv").read_text().splitlines()
    assert lines[0] == "windows,weak_defect,defect_bound,distance,passed"
    assert [l.split(",")[0] for l in lines[1:]] == ["2", "4", "8"]


def test_lipschitz_small(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"grid": {"n_cells": [8]}, "solver": {"dt": 0.002, "t_end": 0.1}}))
    assert main(["lipschitz", "--config", str(p), "--pairs", "4", "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["n_calibration"] == 2 and summary["n_held_out"] == 2


def test_errors_give_nonzero_exit(tmp_path, capsys):
    assert main(["simulate", "--dt", "-1", "--out", str(tmp_path)]) == 2
    assert "solver.dt" in capsys.readouterr().err
    # a time step beyond the stability bound is a runtime error
    assert main(["simulate", "--dt", "0.5", "--out", str(tmp_path)]) == 1
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
