import csv
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from dcfsec import cli
from dcfsec.netmodel import ProcessModel
from dcfsec.service.app import create_app

from conftest import ring_scenario


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


def secure_file(tmp_path):
    rng = np.random.default_rng(0)
    sc = ring_scenario(N=3, n=2, m=2, a_scale=0.9, C=[rng.standard_normal((2, 2)) for _ in range(3)])
    return write(tmp_path, "secure.json", sc.to_dict())


def infeasible_file(tmp_path):
    sc = ring_scenario(N=3, C=[np.array([[0.0, 1.0]])] * 3)
    sc = sc.with_(process=ProcessModel(np.diag([1.05, 0.7]), 0.01 * np.eye(2), 0.01 * np.eye(2)))
    return write(tmp_path, "infeasible.json", sc.to_dict())


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr().out
    return code, out


class TestExitCodes:
    def test_analyze_paper_is_vulnerable(self, capsys):
        code, out = run(capsys, "analyze", "paper", "--no-steady-state")
        assert code == cli.EXIT_VULNERABLE
        assert json.loads(out)["vulnerable_nodes"] == [2, 20, 27]

    def test_analyze_secure(self, tmp_path, capsys):
        code, out = run(capsys, "analyze", secure_file(tmp_path))
        assert code == cli.EXIT_OK and json.loads(out)["status"] == "secure"

    def test_malformed_json(self, tmp_path, capsys, caplog):
        path = write(tmp_path, "bad.json", '{\n  "A": [[1.0]],\n  "Q": oops\n}')
        code, _ = run(capsys, "analyze", path)
        assert code == cli.EXIT_ERROR
        assert f"{path}:3:" in caplog.text and '"Q": oops' in caplog.text

    def test_missing_file(self, capsys, caplog):
        assert run(capsys, "analyze", "/nonexistent/scenario.json")[0] == cli.EXIT_ERROR
        assert "cannot read" in caplog.text

    def test_usage_error_is_not_a_finding(self, capsys):
        with pytest.raises(SystemExit) as info:
            cli.main(["analyze"])
        assert info.value.code == cli.EXIT_ERROR

    def test_bad_channel_syntax(self, capsys):
        assert run(capsys, "analyze", "paper", "--attack-set", "14-2")[0] == cli.EXIT_ERROR

    def test_allocate_paper(self, tmp_path, capsys):
        out = tmp_path / "alloc.json"
        assert run(capsys, "allocate", "paper", "-o", str(out))[0] == cli.EXIT_OK
        body = json.loads(out.read_text())
        assert body["channels"] == [[14, 2], [17, 27], [19, 20]] and body["count"] == 3

    def test_allocate_secure(self, tmp_path, capsys):
        code, out = run(capsys, "allocate", secure_file(tmp_path))
        assert code == cli.EXIT_OK and json.loads(out)["count"] == 0

    def test_allocate_infeasible(self, tmp_path, capsys):
        code, out = run(capsys, "allocate", infeasible_file(tmp_path))
        assert code == cli.EXIT_INFEASIBLE
        assert json.loads(out)["infeasible_nodes"] == [1]

    def test_validate(self, tmp_path, capsys):
        assert run(capsys, "validate", "paper")[0] == cli.EXIT_OK
        d = json.loads(open(secure_file(tmp_path)).read())
        d["epsilon"] = 1.0
        code, out = run(capsys, "validate", write(tmp_path, "eps.json", d))
        assert code == cli.EXIT_ERROR
        assert not next(c for c in json.loads(out)["checks"] if c["check"] == "consensus-gain")["ok"]


class TestCommands:
    def test_thresholds_table(self, capsys):
        code, out = run(capsys, "thresholds", "--df", "1", "5", "6")
        lines = out.strip().splitlines()
        assert code == 0 and lines[0].split("\t") == ["df", "window", "confidence", "threshold"]
        assert [l.split("\t")[3] for l in lines[1:]] == ["3.8415", "11.0705", "12.5916"]

    def test_tolerance_flags_echoed(self, tmp_path, capsys):
        code, out = run(capsys, "analyze", secure_file(tmp_path), "--subspace-tol", "1e-6", "--rank-tol-factor", "2")
        tol = json.loads(out)["tolerances"]
        assert tol["subspace_tol"] == 1e-6 and tol["rank_tol_factor"] == 2.0

    def test_design_codes_from_allocation(self, tmp_path, capsys):
        alloc = write(tmp_path, "alloc.json", {"channels": [[14, 2]]})
        code, out = run(capsys, "design-codes", "paper", "--allocation", alloc, "--seed", "5", "--steps", "1")
        body = json.loads(out)
        assert code == 0 and body["schedule"]["channels"] == [[14, 2]] and body["schedule"]["seed"] == 5

    def test_simulate_writes_outputs(self, tmp_path, capsys):
        exp = write(tmp_path, "exp.json", {"attack": {"strategy": "theorem3", "target": 2, "magnitude": 0.01},
                                           "mu_edges": "monitored", "tests": "monitored", "label": "t3"})
        outdir = tmp_path / "out"
        code, _ = run(capsys, "simulate", "paper", exp, "--runs", "3", "--seed", "4", "--horizon", "56",
                      "-o", str(outdir))
        assert code == 0
        summary = json.loads((outdir / "t3_summary.json").read_text())
        prov = summary["provenance"]["experiment"]
        assert (prov["runs"], prov["seed"], prov["horizon"]) == (3, 4, 56)
        assert len(summary["provenance"]["inputs"]["scenario"]) == 64
        rows = list(csv.reader(open(outdir / "t3_alarms.csv", encoding="utf-8")))
        assert rows[0] == ["time", "family", "rate", "stderr", "runs"]
        assert int(rows[1][0]) == -50

    def test_scenario_export_round_trips(self, tmp_path, capsys):
        out = tmp_path / "paper.json"
        assert run(capsys, "scenario", "-o", str(out))[0] == 0
        code, body = run(capsys, "analyze", str(out), "--no-steady-state")
        assert code == cli.EXIT_VULNERABLE

    def test_parse_edges(self):
        assert cli.parse_edges("14,2; 2,10;") == [[14, 2], [2, 10]]
        assert cli.scenario_arg("paper:3") == {"builtin": "paper", "seed": 3}
        with pytest.raises(cli.CliError):
            cli.scenario_arg("paper:x")


class TestServerMode:
    @pytest.fixture
    def served(self, monkeypatch):
        client = TestClient(create_app())
        monkeypatch.setattr("httpx.post", lambda url, json=None, timeout=None: client.post(
            url.replace("http://svc", ""), json=json))

    def test_same_answer_as_local(self, served, capsys):
        code_l, local = run(capsys, "allocate", "paper")
        code_r, remote = run(capsys, "--server", "http://svc", "allocate", "paper")
        assert code_l == code_r == 0 and json.loads(local) == json.loads(remote)

    def test_server_error_maps_to_exit_1(self, served, capsys, caplog):
        code, _ = run(capsys, "--server", "http://svc", "analyze", "paper", "--attack-set", "2,3",
                      "--no-steady-state")
        assert code == cli.EXIT_ERROR and "server error 400" in caplog.text

    def test_vulnerable_exit_code_over_http(self, served, capsys):
        assert run(capsys, "--server", "http://svc", "analyze", "paper", "--no-steady-state")[0] == 2
