from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pytest

import ase_lab.cli as cli
from ase_lab.modelio import trajectory_to_dict

from conftest import FIXTURES, m2_factual

M2 = str(FIXTURES / "m2.json")
M2PRIME = str(FIXTURES / "m2prime.json")


@pytest.fixture
def tau_file(tmp_path) -> str:
    path = tmp_path / "tau.json"
    path.write_text(json.dumps(trajectory_to_dict(m2_factual())))
    return str(path)


def run_cli(capsys, argv):
    code = cli.main(argv)
    out = capsys.readouterr()
    payload = json.loads(out.out.strip().splitlines()[-1]) if out.out.strip() else {}
    return code, payload, out.err


class TestEffectCommand:
    def test_factual_action_is_zero(self, capsys, tau_file):
        code, payload, _ = run_cli(capsys, [
            "effect", "--model", M2, "--kind", "tcfe", "--trajectory", tau_file,
            "--agent", "0", "--time", "0", "--action", "0",
            "--outcome", "final_state==v1", "--samples", "64", "--seed", "1",
        ])
        assert code == 0
        assert payload["value"] == 0.0
        assert payload["seed"] == 1

    def test_m2_cf_ase_near_oracle(self, capsys, tau_file):
        code, payload, _ = run_cli(capsys, [
            "effect", "--model", M2, "--kind", "cf-ase", "--trajectory", tau_file,
            "--agent", "0", "--time", "0", "--action", "1", "--effect-agents", "1",
            "--outcome", "final_state==v1", "--samples", "100000", "--seed", "3",
        ])
        assert code == 0
        assert abs(payload["value"] - 0.8) <= 0.02
        assert payload["H"] == 100000

    def test_missing_effect_agents_exits_2(self, capsys, tau_file):
        code, payload, _ = run_cli(capsys, [
            "effect", "--model", M2, "--kind", "cf-ase", "--trajectory", tau_file,
            "--agent", "0", "--time", "0", "--action", "1",
            "--outcome", "final_state==v1", "--samples", "16",
        ])
        assert code == 2
        assert "error" in payload

    def test_zero_probability_evidence_exits_3(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"states": ["start", "v0"], "actions": [["1", "0"]]}))
        code, payload, _ = run_cli(capsys, [
            "effect", "--model", M2PRIME, "--kind", "tcfe", "--trajectory", str(bad),
            "--agent", "0", "--time", "0", "--action", "0",
            "--outcome", "final_state==v1", "--samples", "16",
        ])
        assert code == 3

    def test_env_seed_fallback(self, capsys, tau_file, monkeypatch):
        monkeypatch.setenv("ASE_LAB_SEED", "42")
        code, payload, _ = run_cli(capsys, [
            "effect", "--model", M2, "--kind", "tcfe", "--trajectory", tau_file,
            "--agent", "0", "--time", "0", "--action", "1",
            "--outcome", "final_state==v1", "--samples", "32",
        ])
        assert code == 0
        assert payload["seed"] == 42


class TestOracleCommand:
    def test_m2_exact_value(self, capsys, tau_file):
        code, payload, _ = run_cli(capsys, [
            "oracle", "--model", M2, "--kind", "cf-ase", "--trajectory", tau_file,
            "--agent", "0", "--time", "0", "--action", "1", "--effect-agents", "1",
            "--outcome", "final_state==v1",
        ])
        assert code == 0
        assert payload["value"] == pytest.approx(0.8, abs=1e-12)

    def test_path_effect_decomposition_flag(self, capsys):
        code, payload, _ = run_cli(capsys, [
            "oracle", "--model", M2, "--kind", "pse",
            "--agent", "0", "--time", "0", "--action", "1", "--ref-action", "0",
            "--effect-agents", "1", "--outcome", "final_state==v1",
            "--check-prop-fpse-pse",
        ])
        assert code == 0
        assert abs(payload["pse"] - payload["fpse_plus_tce"]) < 1e-12

    def test_budget_exceeded_exits_4(self, capsys, tau_file):
        code, payload, _ = run_cli(capsys, [
            "oracle", "--model", M2, "--kind", "tcfe", "--trajectory", tau_file,
            "--agent", "0", "--time", "0", "--action", "1",
            "--outcome", "final_state==v1", "--budget", "1",
        ])
        assert code == 4


class TestExperimentCommand:
    def config_file(self, tmp_path) -> Path:
        path = tmp_path / "exp.json"
        path.write_text(json.dumps({
            "experiment": "trust_sweep",
            "environment": "sepsis",
            "n_trajectories": 2,
            "tcfe_threshold": 0.8,
            "samples": 40,
            "mu_grid": [0.4, 1.0],
            "seed": 3,
        }))
        return path

    def test_writes_deterministic_artifacts(self, capsys, tmp_path):
        cfg = self.config_file(tmp_path)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        code, payload, _ = run_cli(capsys, [
            "experiment", "--config", str(cfg), "--out", str(out1), "--threads", "1",
        ])
        assert code == 0
        assert Path(payload["csv"]).exists()
        code, _, _ = run_cli(capsys, [
            "experiment", "--config", str(cfg), "--out", str(out2), "--threads", "2",
        ])
        assert code == 0
        h1 = hashlib.sha256((out1 / "trust_sweep.csv").read_bytes()).hexdigest()
        h2 = hashlib.sha256((out2 / "trust_sweep.csv").read_bytes()).hexdigest()
        assert h1 == h2
        s1 = hashlib.sha256((out1 / "trust_sweep_summary.json").read_bytes()).hexdigest()
        s2 = hashlib.sha256((out2 / "trust_sweep_summary.json").read_bytes()).hexdigest()
        assert s1 == s2

    def test_config_error_exits_2(self, capsys, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"experiment": "trust_sweep", "tcfe_threshold": 2.0}))
        code, payload, _ = run_cli(capsys, ["experiment", "--config", str(cfg)])
        assert code == 2

    def test_paper_scale_flag_accepted(self, capsys, tmp_path, monkeypatch):
        cfg = self.config_file(tmp_path)
        seen = {}

        def stub(name, config):
            seen["paper_scale"] = config.paper_scale
            return {"csv": "stub.csv"}

        monkeypatch.setattr(cli, "run_experiment", stub)
        code, _, err = run_cli(capsys, [
            "experiment", "--config", str(cfg), "--paper-scale",
        ])
        assert code == 0
        assert seen["paper_scale"] is True
        assert "paper-scale" in err
