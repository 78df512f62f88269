import csv
import json
import subprocess
import sys
from fractions import Fraction
from pathlib import Path

import jsonschema
import pytest

from fvmc import data_path, schema_path
from fvmc.cli import main

from conftest import write_json


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def schema(name):
    return json.loads(Path(schema_path(name)).read_text())


def check(doc, name):
    jsonschema.validate(doc, schema(name))


def error_doc(err):
    doc = json.loads(err)
    check(doc, "error")
    return doc


CX = str(data_path("counterexample.json"))
ABS4 = str(data_path("absorbing4.json"))


def test_solve_counterexample(capsys):
    code, out, _ = run(capsys, "solve", CX)
    doc = json.loads(out)
    check(doc, "solve")
    assert code == 0 and doc["exact"]
    assert doc["v_star"] == {"e": "4"}
    assert doc["q_star"] == {"e|0": "3", "e|1": "4"}


def test_solve_float_and_csv(capsys):
    code, out, _ = run(capsys, "solve", CX, "--float", "--gamma", "1/2")
    doc = json.loads(out)
    check(doc, "solve")
    assert abs(doc["v_star"]["e"] - 2.0) < 1e-10
    code, out, _ = run(capsys, "solve", CX, "--format", "csv")
    assert list(csv.reader(out.splitlines())) == [["x", "a", "q_star"], ["e", "0", "3"], ["e", "1", "4"]]


def test_validate(capsys, tmp_path):
    code, out, _ = run(capsys, "validate", ABS4)
    doc = json.loads(out)
    check(doc, "validate")
    assert code == 0 and doc["violations"] == [] and doc["absorbing"]["ok"]


def test_bad_row_sum(capsys, tmp_path):
    doc = json.loads(Path(CX).read_text())
    doc["transitions"]["e|0"] = {"e": 0.999}
    bad = write_json(tmp_path / "bad.json", doc)
    code, _, err = run(capsys, "solve", bad)
    e = error_doc(err)
    assert code == 2 and e["error"] == "invalid_mdp" and e["details"]


def test_nonzero_triangle_reward(capsys, tmp_path):
    doc = json.loads(Path(ABS4).read_text())
    tri = doc["triangle"][0]
    key = next(k for k in doc["rewards"] if k.startswith(tri + "|"))
    doc["rewards"][key] = [["1", "1"]]
    bad = write_json(tmp_path / "tri.json", doc)
    code, out, _ = run(capsys, "validate", bad)
    assert code == 2 and any("absorbing" in v for v in json.loads(out)["violations"])


@pytest.mark.parametrize(
    "argv, kind",
    [
        (["solve", CX, "--bogus"], "usage"),
        ([], "usage"),
        (["solve", "/nonexistent/m.json"], "io_error"),
        (["counterexample", "--q", "1/4"], "invalid_argument"),
        (["counterexample", "--v0", "not a number"], "invalid_argument"),
        (["run-fva"], "usage"),
        (["solve", CX, "--jobs", "0"], "usage"),
    ],
)
def test_error_kinds(capsys, argv, kind):
    code, _, err = run(capsys, *argv)
    assert code == 2 and error_doc(err)["error"] == kind


def test_malformed_json(capsys, tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{not json")
    code, _, err = run(capsys, "solve", p)
    assert code == 2 and error_doc(err)["error"] == "parse_error"


def test_gen_mdp_byte_identical(capsys, tmp_path):
    argv = ["gen-mdp", "--seed", "17", "--n-states", "4", "--absorbing-fraction", "0.25"]
    code, first, _ = run(capsys, *argv, "-o", tmp_path / "a.json")
    code, second, _ = run(capsys, *argv)
    assert code == 0 and first == second == (tmp_path / "a.json").read_text()
    check(json.loads(first), "mdp")
    code, out, _ = run(capsys, "validate", tmp_path / "a.json")
    assert code == 0


def _experiment(tmp_path, **extra):
    cfg = {"mdp": ABS4, "episodes": 400, "replicates": 3, "master_seed": 5, "stride": 100}
    cfg.update(extra)
    check(cfg, "experiment")
    return write_json(tmp_path / "exp.json", cfg)


def test_run_fva_artifacts(capsys, tmp_path):
    cfg = _experiment(tmp_path)
    out_dir = tmp_path / "out"
    code, out, _ = run(capsys, "run-fva", "--config", cfg, "--out-dir", out_dir)
    summary = json.loads(out)
    assert code == 0
    check(summary, "run_summary")
    assert json.loads((out_dir / "summary.json").read_text()) == summary
    _, solved, _ = run(capsys, "solve", ABS4)
    q_star = json.loads(solved)["q_star"]
    for r in range(3):
        dump = json.loads((out_dir / f"q_r{r:03d}.json").read_text())
        check(dump, "q_dump")
        err = max(abs(dump["q"][k] - float(Fraction(v))) for k, v in q_star.items())
        rows = list(csv.reader((out_dir / f"trace_r{r:03d}.csv").read_text().splitlines()))
        assert rows[0][:3] == ["k", "q_error", "v_error"]
        assert int(rows[-1][0]) == 400
        assert abs(float(rows[-1][1]) - err) < 1e-12
        assert summary["replicates"][r]["q_error"] == float(rows[-1][1])


def test_run_general_and_jobs(capsys, tmp_path):
    cfg = _experiment(tmp_path)
    code, one, _ = run(capsys, "run-general", "--config", cfg)
    code2, two, _ = run(capsys, "run-general", "--config", cfg, "--jobs", "2")
    assert code == code2 == 0 and one == two
    assert json.loads(one)["config"]["algorithm"] == "general"


def test_relative_mdp_path_and_unknown_key(capsys, tmp_path):
    (tmp_path / "m.json").write_text(Path(ABS4).read_text())
    cfg = write_json(tmp_path / "e.json", {"mdp": "m.json", "episodes": 50})
    code, _, _ = run(capsys, "run-fva", "--config", cfg)
    assert code == 0
    cfg = write_json(tmp_path / "e2.json", {"mdp": "m.json", "episodes": 50, "thetaa": 1})
    code, _, err = run(capsys, "run-fva", "--config", cfg)
    assert code == 2 and error_doc(err)["error"] == "invalid_config"


def test_counterexample_cli(capsys, tmp_path):
    code, out, _ = run(capsys, "counterexample", "--steps", "300", "--out-dir", tmp_path)
    doc = json.loads(out)
    check(doc, "counterexample")
    assert code == 0 and doc["cycles"] >= 5
    assert all(a["alpha_sum_ok"] for a in doc["audit"].values())
    assert (tmp_path / "counterexample.csv").exists()
    code, out, _ = run(capsys, "counterexample", "--mdp", CX, "--steps", "5", "--format", "csv")
    assert out.splitlines()[0] == "k,zone,u,v,L0,L1,V_policy"


def test_check_contraction(capsys, tmp_path):
    code, out, _ = run(capsys, "check-contraction", "--count", "20", "--gammas", "1/10,2/5", "--seed", "3")
    doc = json.loads(out)
    check(doc, "contraction")
    assert code == 0 and doc["violations"] == 0 and doc["count"] == 20


def test_check_robbins_monro(capsys):
    code, out, _ = run(capsys, "check-robbins-monro", "--steps", "20000", "--seeds", "3")
    doc = json.loads(out)
    check(doc, "robbins_monro")
    assert code in (0, 2) and len(doc["seeds"]) == 3
    code, out, _ = run(capsys, "check-robbins-monro", "--theta", "geometric", "--noise", "0", "--z0", "1", "--steps", "60", "--seeds", "1")
    assert json.loads(out)["seeds"][0]["final"] > 0.2


def test_check_abstract_sa(capsys):
    code, out, _ = run(capsys, "check-abstract-sa", "--steps", "500")
    doc = json.loads(out)
    check(doc, "abstract_sa")
    assert code == 0 and doc["all_dominated"]


def test_couple_check(capsys):
    code, out, _ = run(capsys, "couple-check", ABS4, "--episodes", "30", "--seeds", "2")
    doc = json.loads(out)
    check(doc, "coupling")
    assert code == 0 and doc["all_ok"]
    code, _, err = run(capsys, "couple-check", CX)
    assert code == 2 and error_doc(err)["error"] == "invalid_mdp"


def test_console_script():
    proc = subprocess.run([sys.executable, "-m", "fvmc.cli", "solve", CX], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["v_star"]["e"] == "4"
    proc = subprocess.run([sys.executable, "-m", "fvmc.cli", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2 and json.loads(proc.stderr)["error"] == "usage"
