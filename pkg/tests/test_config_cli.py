import copy
import csv
import io
import json

import numpy as np
import pytest
import yaml

from protmeas.cli import main
from protmeas.config import ConfigError, ExperimentConfig, load_config, parse_text, validate
from protmeas.runner import (
    ACCEPTANCE_PRESETS,
    deterministic_view,
    load_preset,
    preset_names,
    run_command,
    to_csv,
    to_json,
)

QUICK = {
    "command": "protective",
    "seed": 11,
    "system": {"kind": "spin"},
    "states": [{"preset": "0"}, {"preset": "+"}],
    "observable": {"preset": "P0"},
    "protection": {"kind": "magnetic", "omega_tau": 200},
    "coupling": {"shape": "sin2", "tau": 1.0, "dt": 0.0005},
    "pointer": {"cells": 64, "x_min": -2.0, "x_max": 3.0, "sigma": 0.25},
    "checks": [{"metric": "max_residual", "max": 1.0e-3}],
}

READOUT = {
    "command": "realistic-sweep",
    "mode": "readout",
    "seed": 5,
    "system": {"kind": "spin"},
    "states": [{"preset": "0"}, {"preset": "+"}],
    "observable": {"preset": "P0"},
    "protection": {"kind": "zeno", "n": 16},
    "coupling": {"shape": "sin2", "tau": 1.0, "dt": 0.0009765625},
    "pointer": {"cells": 64, "x_min": -2.0, "x_max": 3.0, "sigma": 0.05},
    "runs": 200,
    "sweep": {"parameter": "zeno_n", "values": [16, 32, 64, 128, 256, 512, 1024]},
}


def variant(base, **changes):
    d = copy.deepcopy(base)
    for path, value in changes.items():
        node = d
        keys = path.split("__")
        for k in keys[:-1]:
            node = node[k]
        node[keys[-1]] = value
    return d


def paths(issues):
    return [i.path for i in issues]


def write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


class TestValidation:
    def test_quick_config_is_valid(self):
        assert validate(QUICK) == []

    def test_bundled_presets_are_valid(self):
        assert set(ACCEPTANCE_PRESETS) <= set(preset_names())
        for name in preset_names():
            assert validate(load_preset(name).to_dict()) == [], name

    def test_nonpositive_tau_names_the_field(self):
        issues = validate(variant(QUICK, coupling__tau=0.0))
        assert "coupling/tau" in paths(issues)

    def test_zeno_step_must_divide_interval(self):
        d = variant(QUICK, protection={"kind": "zeno", "n": 3}, states=[{"preset": "+"}])
        issues = validate(d)
        assert paths(issues) == ["coupling/dt"]
        # the hint is itself a valid step
        hint = float(issues[0].message.rsplit("e.g. ", 1)[1])
        assert validate(variant(d, coupling__dt=hint)) == []

    def test_unknown_observable_lists_presets(self):
        issues = validate(variant(QUICK, observable={"preset": "P7"}))
        assert paths(issues) == ["observable/preset"]
        for name in ("P0", "P1", "sigma_x", "sigma_z"):
            assert name in issues[0].message

    def test_unknown_keys_are_rejected(self):
        assert validate(variant(QUICK, colour="blue"))
        assert "pointer" in paths(validate(variant(QUICK, pointer__width=0.1)))[0]

    def test_all_problems_are_reported(self):
        d = variant(QUICK, coupling__tau=-1.0, observable={"preset": "P7"}, runs=0)
        assert len(validate(d)) >= 3

    def test_semantic_checks(self):
        assert "coupling/dt" in paths(validate(variant(QUICK, coupling__dt=0.1)))
        assert "states" in paths(validate(variant(READOUT, states=[{"preset": "0"}])))
        assert "protection" in paths(validate(variant(QUICK, protection={"kind": "magnetic"})))
        bad_state = variant(QUICK, states=[{"preset": "ho0"}])
        assert "states/0/preset" in paths(validate(bad_state))

    def test_preflight_catches_unprotected_state(self):
        d = variant(QUICK, protection={"kind": "magnetic", "omega_tau": 200, "axis": [1.0, 0.0, 0.0]})
        assert validate(d)

    def test_non_mapping(self):
        assert validate(["command"])
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"command": "nope"})


class TestConfigObject:
    def test_echo_round_trip(self):
        cfg = ExperimentConfig.from_dict(QUICK)
        echo = json.loads(to_json(run_command(cfg)))["config"]
        assert ExperimentConfig.from_dict(echo) == cfg
        assert ExperimentConfig.from_dict(parse_text(yaml.safe_dump(echo))) == cfg

    def test_seed_override(self):
        cfg = ExperimentConfig.from_dict(QUICK)
        assert cfg.with_overrides(seed=99).master_seed == 99
        assert cfg.with_overrides().master_seed == 11

    def test_load_rejects_bad_yaml(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("command: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(str(p))


class TestDeterminism:
    def test_same_seed_same_envelope(self):
        cfg = ExperimentConfig.from_dict(READOUT)
        a, b = run_command(cfg), run_command(cfg)
        assert to_json(deterministic_view(a)) == to_json(deterministic_view(b))

    def test_parallel_matches_serial(self):
        cfg = ExperimentConfig.from_dict(READOUT)
        a, b = run_command(cfg, jobs=1), run_command(cfg, jobs=2)
        assert deterministic_view(a) == deterministic_view(b)

    def test_seed_changes_samples(self):
        cfg = ExperimentConfig.from_dict(READOUT)
        a, b = run_command(cfg), run_command(cfg.with_overrides(seed=6))
        assert a["summaries"]["overlaps"] != b["summaries"]["overlaps"]


class TestOutput:
    def test_csv_has_one_row_per_projection_count(self):
        env = run_command(ExperimentConfig.from_dict(READOUT))
        rows = list(csv.DictReader(io.StringIO(to_csv(env["records"]))))
        assert [int(r["sweep_value"]) for r in rows] == READOUT["sweep"]["values"]
        for row, rec in zip(rows, env["records"]):
            # floats survive the text round trip exactly
            assert float(row["overlap"]) == rec["overlap"]
            assert float(row["mean[+]"]) == rec["mean[+]"]

    def test_csv_float_format(self):
        text = to_csv([{"x": 0.1 + 0.2, "y": np.float64(1e-17), "z": None, "w": [1, 2]}])
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == ["x", "y", "z", "w"]
        assert float(rows[1][0]) == 0.1 + 0.2 and rows[1][0] == repr(0.1 + 0.2)
        assert float(rows[1][1]) == 1e-17
        assert json.loads(rows[1][3]) == [1, 2]

    def test_envelope_fields(self):
        env = run_command(ExperimentConfig.from_dict(QUICK))
        for key in ("config", "version", "command", "seed", "records", "summaries", "checks", "passed", "wall_time"):
            assert key in env
        assert env["passed"]
        outcomes = sorted(r["outcome"] for r in env["records"])
        assert outcomes == pytest.approx([0.5, 1.0], abs=1e-3)


class TestCli:
    def test_presets_lists_every_scenario(self, capsys):
        assert main(["presets"]) == 0
        out = capsys.readouterr().out
        for name in ACCEPTANCE_PRESETS:
            assert name in out

    def test_validate_ok_and_invalid(self, tmp_path, capsys):
        assert main(["validate", write(tmp_path, QUICK)]) == 0
        assert main(["validate", write(tmp_path, variant(QUICK, coupling__tau=-1.0), "bad.yaml")]) == 2
        assert "coupling/tau" in capsys.readouterr().err

    def test_run_writes_json(self, tmp_path):
        out = tmp_path / "env.json"
        assert main(["run", write(tmp_path, QUICK), "--out", str(out)]) == 0
        env = json.loads(out.read_text())
        assert env["command"] == "protective" and env["seed"] == 11

    def test_run_seed_flag(self, tmp_path):
        out = tmp_path / "env.json"
        assert main(["run", write(tmp_path, QUICK), "--seed", "123", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["seed"] == 123

    def test_run_csv(self, tmp_path):
        out = tmp_path / "rows.csv"
        assert main(["run", write(tmp_path, QUICK), "--format", "csv", "--out", str(out)]) == 0
        assert len(out.read_text().strip().splitlines()) == 3

    def test_invalid_config_exit_code(self, tmp_path):
        assert main(["run", write(tmp_path, variant(QUICK, observable={"preset": "P7"}))]) == 2

    def test_failed_check_exit_code(self, tmp_path, capsys):
        d = variant(QUICK, checks=[{"metric": "max_residual", "max": 1e-12}])
        assert main(["run", write(tmp_path, d), "--out", str(tmp_path / "o.json")]) == 3
        assert "FAIL max_residual" in capsys.readouterr().err

    def test_protection_too_weak_exit_code(self, tmp_path):
        d = variant(QUICK, protection={"kind": "magnetic", "omega_tau": 0.5},
                    pointer={"cells": 64, "x_min": -2.0, "x_max": 3.0, "sigma": 0.05},
                    states=[{"bloch": [1.0, 0.4]}], observable={"preset": "sigma_x"}, checks=[],
                    tolerance=1e-3)
        assert main(["run", write(tmp_path, d), "--out", str(tmp_path / "o.json")]) == 3

    def test_io_failures(self, tmp_path):
        assert main(["run", str(tmp_path / "missing.yaml")]) == 4
        assert main(["validate", str(tmp_path / "missing.yaml")]) == 4
        assert main(["run", write(tmp_path, QUICK), "--out", str(tmp_path / "no" / "such" / "dir.json")]) == 4

    def test_unknown_preset_mentions_listing(self, capsys):
        assert main(["run", "no_such_preset"]) == 4
        assert "presets" in capsys.readouterr().err

    def test_bad_seed_is_rejected(self):
        with pytest.raises(SystemExit) as info:
            main(["run", "spin_p0_ideal", "--seed", "-1"])
        assert info.value.code == 2
