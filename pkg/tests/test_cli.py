"""Command-line interface tests: config precedence, artifacts, exit codes."""

import json

import pytest
import yaml

from swarmot.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_VERIFY, main


def run_cli(argv):
    return main(argv)


class TestRun:
    def test_artifacts_written(self, tmp_path):
        out = tmp_path / "out"
        rc = run_cli(["run", "--world", "double_integrator_3d", "--n", "3",
                      "--seed", "2", "--output-dir", str(out)])
        assert rc == EXIT_OK
        for name in ("trace_dyn.csv", "trace_dyn.json", "trace_emd.csv",
                     "trace_emd.json", "cumulative_cost.csv", "summary.json"):
            assert (out / name).exists(), name
        summary = json.loads((out / "summary.json").read_text())
        assert summary["status"] == "ok"
        assert summary["results"]["dyn"]["assignments"] == 1
        assert summary["results"]["emd"]["assignments"] >= 1
        assert summary["results"]["dyn"]["terminal_status"] == "captured"

    def test_single_policy(self, tmp_path):
        out = tmp_path / "out"
        rc = run_cli(["run", "--n", "2", "--seed", "3", "--policy", "dyn",
                      "--output-dir", str(out)])
        assert rc == EXIT_OK
        assert (out / "trace_dyn.csv").exists()
        assert not (out / "trace_emd.csv").exists()

    def test_summary_echoes_config_and_defaults(self, tmp_path):
        out = tmp_path / "out"
        run_cli(["run", "--n", "2", "--seed", "3", "--policy", "dyn",
                 "--output-dir", str(out)])
        summary = json.loads((out / "summary.json").read_text())
        cfg = summary["resolved_config"]
        assert cfg["n"] == 2 and cfg["seed"] == 3
        assert cfg["world"] == "double_integrator_3d"
        # flags were given for n/seed/policy/output_dir; world fell back
        assert "world" in summary["defaulted_fields"]
        assert "n" not in summary["defaulted_fields"]

    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg_path = tmp_path / "cfg.yaml"
        cfg_path.write_text(yaml.safe_dump({
            "scenario": {"n": 2, "seed": 11, "world": "double_integrator_3d"},
            "run": {"policy": "dyn", "output_dir": str(tmp_path / "from_file")},
        }))
        out = tmp_path / "from_flag"
        rc = run_cli(["run", "--config", str(cfg_path), "--seed", "12",
                      "--output-dir", str(out)])
        assert rc == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        # flag beats file for seed; file beats default for n and policy
        assert summary["resolved_config"]["seed"] == 12
        assert summary["resolved_config"]["n"] == 2
        assert summary["resolved_config"]["policy"] == "dyn"
        assert "seed" not in summary["defaulted_fields"]

    def test_missing_config_is_config_error(self, tmp_path, capsys):
        rc = run_cli(["run", "--config", str(tmp_path / "nope.yaml")])
        assert rc == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_invalid_field_named_in_error(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.yaml"
        cfg_path.write_text(yaml.safe_dump({"run": {"policy": "teleport"}}))
        rc = run_cli(["run", "--config", str(cfg_path)])
        assert rc == EXIT_CONFIG
        assert "policy" in capsys.readouterr().err

    def test_rerun_bit_identical(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        argv = ["run", "--n", "3", "--seed", "8"]
        run_cli(argv + ["--output-dir", str(out1)])
        run_cli(argv + ["--output-dir", str(out2)])
        for name in ("trace_dyn.csv", "trace_emd.csv", "cumulative_cost.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        s1 = json.loads((out1 / "summary.json").read_text())
        s2 = json.loads((out2 / "summary.json").read_text())
        s1["resolved_config"].pop("output_dir")
        s2["resolved_config"].pop("output_dir")
        assert s1 == s2


class TestSweep:
    def test_reports_per_size(self, tmp_path):
        out = tmp_path / "sweep"
        rc = run_cli(["sweep", "--sizes", "2,3", "--runs", "2", "--seed", "99",
                      "--output-dir", str(out)])
        assert rc == EXIT_OK
        for n in (2, 3):
            assert (out / f"report_n{n}.json").exists()
            assert (out / f"report_n{n}.csv").exists()
            assert (out / f"timings_n{n}.json").exists()
        summary = json.loads((out / "sweep_summary.json").read_text())
        assert summary["sizes"] == [2, 3]
        assert len(summary["table"]) == 2
        assert summary["table"][0]["completed"] == 2

    def test_reports_deterministic_across_job_counts(self, tmp_path):
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        base = ["sweep", "--sizes", "3", "--runs", "2", "--seed", "77"]
        run_cli(base + ["--output-dir", str(out1), "--jobs", "1"])
        run_cli(base + ["--output-dir", str(out2), "--jobs", "2"])
        assert ((out1 / "report_n3.json").read_bytes()
                == (out2 / "report_n3.json").read_bytes())
        assert ((out1 / "report_n3.csv").read_bytes()
                == (out2 / "report_n3.csv").read_bytes())

    def test_invalid_runs(self, capsys):
        rc = run_cli(["sweep", "--sizes", "2", "--runs", "0"])
        assert rc == EXIT_CONFIG


class TestVerify:
    def test_all_oracles_pass(self, capsys):
        rc = run_cli(["verify"])
        out = capsys.readouterr().out
        assert rc == EXIT_OK
        assert out.count("PASS") == 4
        assert "FAIL" not in out

    def test_json_output(self, capsys):
        rc = run_cli(["verify", "--json"])
        assert rc == EXIT_OK
        results = json.loads(capsys.readouterr().out)
        assert {r["oracle"] for r in results} == {
            "care_residual", "matching_bruteforce",
            "cost_consistency", "stationarity",
        }
        assert all(r["passed"] for r in results)

    def test_fault_injection_detected(self, capsys):
        # the residual oracle must notice a perturbed Riccati solution
        rc = run_cli(["verify", "--inject-care-fault"])
        out = capsys.readouterr().out
        assert rc == EXIT_VERIFY
        assert "FAIL  care_residual" in out
