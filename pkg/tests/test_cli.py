import json
import subprocess
import sys

import numpy as np
import pytest

import redsafe as rs
from redsafe.cli import main
from redsafe.reach import simulate

from test_model import minimal_problem


def run_cli(*args):
    proc = subprocess.run([sys.executable, "-m", "redsafe.cli", *map(str, args)],
                          capture_output=True, text=True)
    return proc.returncode, proc.stdout, proc.stderr


def scalar_manifest(tmp_path):
    prob = rs.VerificationProblem(
        system=rs.LtiSystem([[-1.0]], [[2.0]], [[3.0]]),
        x0=rs.HyperBox([-1.0], [1.0]), inputs=rs.HyperBox([0.0], [1.0]),
        spec=(rs.PolytopeSpec([[1.0]], [-100.0], "safe-region"),), t_f=2.0,
        name="scalar")
    return rs.serialize_problem(prob, tmp_path / "scalar.json")


def small_manifest(tmp_path, seed=5, spec_scale=8.0):
    prob = rs.random_problem(seed, n=4, m=1, p=1, free_dims=3,
                             spec_scale=spec_scale)
    return rs.serialize_problem(prob, tmp_path / "small.json")


class TestGen:
    def test_deterministic_manifest(self, tmp_path):
        code1 = main(["gen", "-n", "4", "--seed", "11",
                      "--output", str(tmp_path / "a.json")])
        code2 = main(["gen", "-n", "4", "--seed", "11",
                      "--output", str(tmp_path / "b.json")])
        assert code1 == 0 and code2 == 0
        assert json.loads((tmp_path / "a.json").read_text())["type"] == "lti"
        # matrix files are byte-identical across runs with the same seed
        assert (tmp_path / "a_A.mtx").read_bytes() == (tmp_path / "b_A.mtx").read_bytes()

    def test_generated_system_is_stable(self, tmp_path):
        main(["gen", "-n", "6", "-m", "2", "-p", "2", "--seed", "3",
              "--output", str(tmp_path / "g.json")])
        prob = rs.parse_problem(tmp_path / "g.json")
        assert rs.check_stability(prob.system).stable

    def test_p_not_below_n_rejected(self, tmp_path):
        code = main(["gen", "-n", "3", "-p", "3",
                     "--output", str(tmp_path / "x.json")])
        assert code == 3


class TestReduce:
    def test_scalar_hsv(self, tmp_path, capsys):
        path = scalar_manifest(tmp_path)
        code = main(["reduce", str(path), "--format", "json"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["hsv"] == pytest.approx([3.0], abs=1e-12)

    def test_identity_reduction_simulates_identically(self, tmp_path, capsys):
        path = small_manifest(tmp_path)
        code = main(["reduce", str(path), "-k", "4", "--format", "json"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        reduced = rs.parse_problem(doc["reduced_manifest"])
        original = rs.parse_problem(path)
        x0 = original.x0.center
        bal = rs.balance(original.system)
        t1 = simulate(original.system, x0, np.array([0.5]), 1.0, 0.01)
        t2 = simulate(reduced.system, bal.H @ x0, np.array([0.5]), 1.0, 0.01)
        assert np.allclose(t1.outputs, t2.outputs, atol=1e-8)

    def test_missing_matrix_file_names_path(self, tmp_path):
        path = minimal_problem(tmp_path, matrices={"A": "gone.mtx", "B": "B.mtx",
                                                   "C": "C.mtx"})
        code, out, err = run_cli("reduce", path)
        assert code == 3
        assert "gone.mtx" in err


class TestBoundsCmd:
    def test_json_rows(self, tmp_path, capsys):
        path = small_manifest(tmp_path)
        code = main(["bounds", str(path), "-k", "2", "--format", "json"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        methods = {r["method"] for r in doc["rows"]}
        assert "theorem1+theorem3" in methods and "min" in methods
        assert all(r["time_s"] == 0.0 for r in doc["rows"])

    def test_text_table(self, tmp_path, capsys):
        path = small_manifest(tmp_path)
        code = main(["bounds", str(path), "-k", "2"])
        assert code == 0
        out = capsys.readouterr().out
        assert "delta" in out and "method" in out

    def test_csv(self, tmp_path, capsys):
        path = small_manifest(tmp_path)
        code = main(["bounds", str(path), "-k", "2", "--format", "csv"])
        assert code == 0
        header = capsys.readouterr().out.splitlines()[0]
        assert header == "system,k,method,output,e1,e2,delta,time_s"


class TestTransformSpecCmd:
    def test_round_trip(self, tmp_path, capsys):
        doc = {"spec": {"kind": "polytope", "polarity": "safe-region",
                        "Gamma": [[1.0]], "Psi": [-0.0015]},
               "delta": [3.7219e-4]}
        path = tmp_path / "ts.json"
        path.write_text(json.dumps(doc))
        code = main(["transform-spec", str(path), "--format", "json"])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        psi = out["transformed"][0]["safe_region"]["Psi"][0]
        assert psi == pytest.approx(-0.00112781, abs=1e-12)

    def test_per_mode_deltas(self, tmp_path, capsys):
        doc = {"spec": {"kind": "ellipsoid", "polarity": "unsafe-region",
                        "Q": [[178.0, 0.0], [0.0, 625.0]], "a": [0.325, 0.16],
                        "R": 1.0},
               "delta": [[0.0234, 0.0189], [0.0228, 0.0177]]}
        path = tmp_path / "tsm.json"
        path.write_text(json.dumps(doc))
        code = main(["transform-spec", str(path), "--format", "json"])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert len(out["per_mode"]) == 2
        assert out["per_mode"][0][0]["unsafe_region"]["R"] == pytest.approx(1.566, abs=5e-3)


class TestReachCmd:
    def test_json_and_csv(self, tmp_path, capsys):
        path = small_manifest(tmp_path)
        code = main(["reach", str(path), "--format", "json"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["steps"][0]["t0"] == 0.0
        assert "center" in doc["steps"][0] and "generators" in doc["steps"][0]
        code = main(["reach", str(path), "--format", "csv",
                     "--output", str(tmp_path / "r.csv")])
        assert code == 0
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0].startswith("t0,t1,y0_lo,y0_hi")
        assert len(lines) > 10

    def test_pss_rejected(self, tmp_path):
        path = rs.serialize_problem(rs.motor_benchmark(), tmp_path / "motor.json")
        code, out, err = run_cli("reach", path)
        assert code == 3
        assert "LTI" in err


class TestVerifyCmd:
    def test_safe_exit_zero(self, tmp_path, capsys):
        path = small_manifest(tmp_path, spec_scale=8.0)
        code = main(["verify", str(path), "--format", "json"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["outcome"] == "Safe"
        assert all(e["seconds"] == 0.0 for e in doc["per_k_log"])

    def test_unsafe_exit_one(self, tmp_path, capsys):
        prob = rs.VerificationProblem(
            system=rs.LtiSystem(np.diag([-1.0, -2.0]), np.array([[0.1], [0.2]]),
                                np.ones((1, 2))),
            x0=rs.HyperBox([1.0, 1.0], [1.1, 1.1]),
            inputs=rs.HyperBox([0.0], [0.0]),
            spec=(rs.PolytopeSpec([[1.0]], [-0.5], "safe-region"),), t_f=1.0)
        path = rs.serialize_problem(prob, tmp_path / "unsafe.json")
        code = main(["verify", str(path), "--format", "json"])
        assert code == 1
        doc = json.loads(capsys.readouterr().out)
        assert doc["outcome"] == "Unsafe" and "witness" in doc

    def test_unknown_flag_exits_three(self, tmp_path):
        path = small_manifest(tmp_path)
        code, out, err = run_cli("verify", path, "--definitely-not-a-flag")
        assert code == 3

    def test_missing_manifest_exits_three(self, tmp_path):
        code, out, err = run_cli("verify", tmp_path / "absent.json")
        assert code == 3

    def test_verify_pss_motor_smoke(self, capsys):
        from redsafe.benchmarks import MOTOR_MANIFEST
        code = main(["verify-pss", str(MOTOR_MANIFEST), "--k0", "5",
                     "--k-max", "5", "--e1", "theorem2", "--e1", "simulation",
                     "--e2", "simulation", "--step-lh", "0.05",
                     "--format", "json"])
        doc = json.loads(capsys.readouterr().out)
        assert doc["outcome"] == "Safe"
        assert code == 0


class TestBench:
    def test_motor_rows_and_determinism(self, tmp_path):
        code1 = main(["bench", "--format", "json", "--output", str(tmp_path / "b1.json")])
        code2 = main(["bench", "--format", "json", "--output", str(tmp_path / "b2.json")])
        assert code1 == 0 and code2 == 0
        assert (tmp_path / "b1.json").read_bytes() == (tmp_path / "b2.json").read_bytes()
        doc = json.loads((tmp_path / "b1.json").read_text())
        rows = doc["rows"]
        assert {r["k"] for r in rows} == {4, 5}
        assert {r["method"] for r in rows} == {"theoretical", "mixed"}
        assert any("mode1" in r["system"] for r in rows)

    def test_missing_extra_skipped(self, tmp_path, capsys):
        code = main(["bench", "--extra", str(tmp_path / "nope.json"),
                     "--ks", "5", "--format", "json"])
        captured = capsys.readouterr()
        assert code == 0
        assert "skipped" in captured.err


class TestHelp:
    @pytest.mark.parametrize("sub", ["reduce", "bounds", "transform-spec",
                                     "reach", "verify", "verify-pss", "bench",
                                     "gen"])
    def test_help_documents_flags(self, sub):
        code, out, err = run_cli(sub, "--help")
        assert code == 0
        for flag in ("--seed", "--threads", "--output", "--format"):
            assert flag in out
