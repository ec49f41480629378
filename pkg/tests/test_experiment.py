import json

import numpy as np
import pytest
from click.testing import CliRunner

from whfl.cli import main
from whfl.experiment import (BOUND_COLUMNS, ConfigError, ExperimentConfig, env_overrides,
                             load_config, read_csv)
from whfl.learning import TRACE_COLUMNS

SMOKE = {"schema_version": 1, "objective": "quadratic", "C": 2, "M": 2, "K": 4, "K_ps": 4,
         "I": 2, "T": 3, "N": 5, "optimizer": "sgd", "lr0": 0.1, "batch_size": 1}


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_defaults_roundtrip():
    exp = ExperimentConfig()
    assert ExperimentConfig.from_dict(exp.to_dict()) == exp


def test_unknown_keys_rejected(tmp_path):
    p = _write(tmp_path, dict(SMOKE, bogus=1, other=2))
    with pytest.raises(ConfigError, match="bogus, other"):
        load_config(p, environ={})


def test_schema_version_required(tmp_path):
    doc = dict(SMOKE)
    del doc["schema_version"]
    with pytest.raises(ConfigError, match="schema_version"):
        load_config(_write(tmp_path, doc), environ={})
    with pytest.raises(ConfigError, match="schema_version"):
        load_config(_write(tmp_path, dict(SMOKE, schema_version=99)), environ={})


def test_invalid_values_reported(tmp_path):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, dict(SMOKE, C=0)), environ={})
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, dict(SMOKE, modes=["fast"])), environ={})


def test_env_overrides(tmp_path):
    env = {"WHFL_SIGMA_Z2": "2.5", "WHFL_K_PS": "7", "WHFL_PARTITION": "noniid_users",
           "WHFL_MODES": '["ideal"]', "OTHER": "x"}
    assert env_overrides(env) == {"sigma_z2": 2.5, "K_ps": 7, "partition": "noniid_users",
                                  "modes": ["ideal"]}
    exp = load_config(_write(tmp_path, SMOKE), environ=env)
    assert exp.system.sigma_z2 == 2.5 and exp.system.K_ps == 7 and exp.modes == ("ideal",)


def test_cli_simulate_writes_one_csv_per_mode(tmp_path):
    out = tmp_path / "out"
    r = CliRunner().invoke(main, ["simulate", "--config", _write(tmp_path, SMOKE),
                                  "--out", str(out), "--seed", "4"])
    assert r.exit_code == 0, r.output
    for mode in ("ota", "ideal", "conventional"):
        header, rows = read_csv(out / f"metrics_{mode}.csv")
        assert tuple(header) == TRACE_COLUMNS
        assert len(rows) == 6
    assert json.loads((out / "topology.json").read_text())["path_loss_exp"] == 4.0


def test_cli_simulate_is_byte_identical(tmp_path):
    cfg = _write(tmp_path, SMOKE)
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert CliRunner().invoke(main, ["simulate", "--config", cfg, "--out", str(out)]).exit_code == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]


def test_cli_missing_dataset_message(tmp_path):
    doc = dict(SMOKE, objective="mnist_softmax", mnist_dir=str(tmp_path / "nowhere"))
    r = CliRunner().invoke(main, ["simulate", "--config", _write(tmp_path, doc),
                                  "--out", str(tmp_path / "o")])
    assert r.exit_code != 0 and "not found" in r.output


def test_cli_invalid_config(tmp_path):
    r = CliRunner().invoke(main, ["simulate", "--config", _write(tmp_path, dict(SMOKE, zz=1))])
    assert r.exit_code == 2 and "zz" in r.output


def test_cli_bound_headers_and_rows(tmp_path):
    doc = dict(SMOKE, T=25, lr0=0.05, lr_slope=1e-4)
    r = CliRunner().invoke(main, ["bound", "--config", _write(tmp_path, doc),
                                  "--out", str(tmp_path / "b")])
    assert r.exit_code == 0, r.output
    header, rows = read_csv(tmp_path / "b" / "bound.csv")
    assert tuple(header) == BOUND_COLUMNS and len(rows) == 26
    w = np.array([float(r[1]) for r in rows])
    assert np.all(np.diff(w) < 0)


def test_cli_validate_low_confidence_and_stable_schema(tmp_path):
    cfg = _write(tmp_path, {"schema_version": 1})
    reps = []
    for k in range(2):
        out = tmp_path / f"v{k}"
        r = CliRunner().invoke(main, ["validate", "--config", cfg, "--trials", "10",
                                      "--out", str(out)])
        assert r.exit_code in (0, 1)
        reps.append((out / "lemma_report.json").read_bytes())
    rep = json.loads(reps[0])
    assert reps[0] == reps[1]
    assert rep["low_confidence"] is True
    assert [t["term"] for t in rep["terms"]][:9] == [f"ps_term_{i}" for i in range(1, 10)]


def test_cli_validate_exit_code_follows_checks(tmp_path):
    cfg = _write(tmp_path, {"schema_version": 1})
    r = CliRunner().invoke(main, ["validate", "--config", cfg, "--trials", "4000",
                                  "--out", str(tmp_path / "v")])
    rep = json.loads((tmp_path / "v" / "lemma_report.json").read_text())
    assert r.exit_code == (0 if rep["pass"] else 1)


def test_cli_sweep(tmp_path):
    r = CliRunner().invoke(main, ["sweep", "--config", _write(tmp_path, SMOKE), "--param",
                                  "sigma_z2=0.1,10", "--out", str(tmp_path / "s")])
    assert r.exit_code == 0, r.output
    header, rows = read_csv(tmp_path / "s" / "sweep_summary.csv")
    assert header[0] == "sweep_key" and len(rows) == 6
    assert {row[1] for row in rows} == {"0.1", "10"}


def test_cli_sweep_requires_values(tmp_path):
    r = CliRunner().invoke(main, ["sweep", "--config", _write(tmp_path, SMOKE),
                                  "--out", str(tmp_path / "s")])
    assert r.exit_code != 0


def test_shipped_configs_load():
    import pathlib
    root = pathlib.Path(__file__).resolve().parents[1] / "configs"
    names = sorted(p.name for p in root.glob("*.json"))
    assert names == ["bound_fig.json", "mnist_iid.json", "smoke.json", "validate_small.json"]
    for p in root.glob("*.json"):
        load_config(p, environ={})
