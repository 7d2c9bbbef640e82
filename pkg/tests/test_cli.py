"""Config validation, output files and exit codes of the command line."""

import json
import math

import numpy as np
import pytest

from fishmig.cli import main, parse_config


def write_config(path, **extra):
    raw = {"schema_version": 1, "seed": 7, "params": {"n_fish": 2, "horizon": 0.05, "dt": 0.01}}
    raw.update(extra)
    path.write_text(json.dumps(raw))
    return path


def test_config_is_required(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path)]) == 1
    assert "--config is required" in capsys.readouterr().err


def test_config_not_found(tmp_path, capsys):
    rc = main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
    assert rc == 1
    assert "not found" in capsys.readouterr().err


def test_config_bad_json(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "not valid JSON" in capsys.readouterr().err


def test_unknown_keys_are_named_by_path(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json")
    raw = json.loads(cfg.read_text())
    raw["params"]["bogus"] = 1
    cfg.write_text(json.dumps(raw))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "unknown key params.bogus" in capsys.readouterr().err
    raw = json.loads(cfg.read_text())
    del raw["params"]["bogus"]
    raw["exterior"] = {}
    cfg.write_text(json.dumps(raw))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "unknown key exterior" in capsys.readouterr().err


def test_schema_and_types():
    with pytest.raises(Exception, match="schema_version is required"):
        parse_config({"seed": 0, "params": {"n_fish": 2, "horizon": 1.0, "dt": 0.01}})
    with pytest.raises(Exception, match="schema_version must be 1"):
        parse_config({"schema_version": 2, "seed": 0,
                      "params": {"n_fish": 2, "horizon": 1.0, "dt": 0.01}})
    with pytest.raises(Exception, match="params.n_fish must be an integer"):
        parse_config({"schema_version": 1, "seed": 0,
                      "params": {"n_fish": 2.5, "horizon": 1.0, "dt": 0.01}})
    with pytest.raises(Exception, match="params.dt is required"):
        parse_config({"schema_version": 1, "seed": 0,
                      "params": {"n_fish": 2, "horizon": 1.0}})
    with pytest.raises(Exception, match="seed must be nonnegative"):
        parse_config({"schema_version": 1, "seed": -1,
                      "params": {"n_fish": 2, "horizon": 1.0, "dt": 0.01}})
    cfg = parse_config({"schema_version": 1, "seed": 0,
                        "params": {"n_fish": 2, "horizon": 1.0, "dt": 0.01}})
    assert cfg["grid"]["nx"] == 41 and cfg["policy"]["kind"] == "zero"


def test_simulate_outputs(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", mc={"n_paths": 2})
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "trajectories.csv").read_text().splitlines()
    assert lines[0] == "path,step,time,fish,x,v,u"
    # 2 paths x 6 time rows x 2 fish
    assert len(lines) == 1 + 2 * 6 * 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 7
    assert manifest["config"]["grid"]["nx"] == 41
    assert set(manifest["versions"]) == {"fishmig", "numpy", "scipy", "python"}


def test_simulate_deterministic_and_seed_override(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", mc={"n_paths": 2})
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(b)]) == 0
    assert (a / "trajectories.csv").read_bytes() == (b / "trajectories.csv").read_bytes()
    assert main(["simulate", "--config", str(cfg), "--out", str(c), "--seed", "8"]) == 0
    assert (a / "trajectories.csv").read_bytes() != (c / "trajectories.csv").read_bytes()
    assert json.loads((c / "manifest.json").read_text())["seed"] == 8


def test_mode_overrides(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json")
    out = tmp_path / "run"
    rc = main(["simulate", "--config", str(cfg), "--out", str(out),
               "--mode", "mc.n_paths=3", "--mode", "policy.kind=constant",
               "--mode", "policy.value=0.2"])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["mc"]["n_paths"] == 3
    assert manifest["config"]["policy"]["value"] == 0.2
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--mode", "nonsense"]) == 1
    assert "KEY=VALUE" in capsys.readouterr().err


def test_bad_policy_kind(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json", policy={"kind": "pid"})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "policy.kind" in capsys.readouterr().err


def test_solve_hjb_outputs(tmp_path):
    cfg = write_config(tmp_path / "cfg.json",
                       grid={"nx": 15, "nv": 15, "x_min": -2.0, "x_max": 2.0,
                             "v_min": -2.0, "v_max": 2.0},
                       hjb={"s_end": 0.2})
    out = tmp_path / "run"
    assert main(["solve-hjb", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "theta.csv").read_text().splitlines()
    assert lines[0] == "x,v,value"
    assert len(lines) == 1 + 15 * 15
    meta = json.loads((out / "theta.json").read_text())
    assert meta["nx"] == 15 and meta["tag"] == "theta" and meta["time"] == 0.0
    assert meta["n_time_steps"] >= 1
    # default sigmas 0.1 with zero corr
    np.testing.assert_almost_equal(meta["omega"], 0.02, decimal=15)


def test_estimate_theta_outputs(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", mc={"n_paths": 50, "dt": 0.01},
                       estimate={"x": 0.2, "v": -0.1, "tau": 0.2})
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["estimate-theta", "--config", str(cfg), "--out", str(out1)]) == 0
    assert main(["estimate-theta", "--config", str(cfg), "--out", str(out2)]) == 0
    e1 = json.loads((out1 / "estimate.json").read_text())
    e2 = json.loads((out2 / "estimate.json").read_text())
    assert e1 == e2
    assert e1["n_paths"] == 50 and e1["tau"] == 0.2
    assert 0.0 < e1["estimate"] <= 1.0001


def test_strategy_outputs(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", params={"n_fish": 3, "horizon": 1.0, "dt": 0.01})
    out = tmp_path / "run"
    assert main(["strategy", "--config", str(cfg), "--out", str(out)]) == 0
    controls = json.loads((out / "strategy.json").read_text())["controls"]
    assert [c["fish"] for c in controls] == [0, 1, 2]
    assert all(math.isfinite(c["u_star"]) for c in controls)
    cases = json.loads((out / "cases.json").read_text())
    assert cases["equal_velocities"]["computed_is_zero"]
    assert cases["survival_scaling"]["exact"]


def test_strategy_singular_cleans_up(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json",
                       init={"positions": [0.0, 1.0], "velocities": [1.0, 1.0]})
    out = tmp_path / "run"
    assert main(["strategy", "--config", str(cfg), "--out", str(out)]) == 2
    assert "strategy singular" in capsys.readouterr().err
    assert not (out / "strategy.json").exists()
    assert not (out / "cases.json").exists()
    assert not (out / "manifest.json").exists()


def test_field_outputs_frozen(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    out = tmp_path / "run"
    rc = main(["field", "--config", str(cfg), "--out", str(out), "--seed", "3",
               "--mode", "field.truncation=4", "--mode", "field.l=0.7"])
    assert rc == 0
    data = json.loads((out / "field.json").read_text())
    np.testing.assert_almost_equal(
        data["cos_coef"],
        [1.054133761305216, 0.37192021404778114, 0.8624161922161944, 0.1952520448118382],
        decimal=15,
    )
    np.testing.assert_almost_equal(data["k_at_l"], -0.6469676966028002, decimal=15)
    np.testing.assert_almost_equal(data["q_constant"], 2.0412414523193148, decimal=15)
    np.testing.assert_almost_equal(data["gamma"], math.sqrt(8.0 / 3.0), decimal=15)
