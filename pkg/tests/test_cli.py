import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from spendmax.cli import main
from conftest import make


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_boundaries_table(capsys, base):
    code, out, _ = run(capsys, "boundaries", "--h-min", "0", "--h-max", "3", "--n", "7")
    assert code == 0
    table = rows(out)
    assert table[0] == ["h", "x_zero", "x_modr", "x_aggv", "x_splg"]
    assert len(table) == 8
    h, *xs = map(float, table[3])
    np.testing.assert_allclose(xs, base.boundaries(h).as_tuple(), rtol=1e-15)


def test_boundaries_lambda_sweep_json(capsys):
    code, out, _ = run(capsys, "boundaries", "--lambda-sweep", "0.01", "0.98", "5",
                       "--format", "json")
    assert code == 0
    doc = json.loads(out)
    assert doc["schema"] == "spendmax.table/1"
    assert doc["columns"][0] == "lambda" and len(doc["rows"]) == 5


def test_policy_table(capsys, base):
    code, out, _ = run(capsys, "policy", "--x-min", "0", "--x-max", "20", "--n", "5")
    assert code == 0
    table = rows(out)
    assert table[0] == ["x", "u", "c", "pi", "regime", "h"]
    x, u, c = (float(v) for v in table[3][:3])
    pt = base.policy(x, 1.0)
    assert (u, c) == (pt.u, pt.c)
    assert table[3][4] == pt.regime.label


def test_sweep(capsys):
    code, out, _ = run(capsys, "sweep", "--param", "sigma", "--values", "0.1,0.2,0.4",
                       "--n", "4")
    assert code == 0
    table = rows(out)
    assert table[0][0] == "sigma" and len(table) == 13


def test_params_file_formats(capsys, tmp_path):
    kv = tmp_path / "p.txt"
    kv.write_text("# market\nr = 0.05\nmu = 0.12  # drift\nsigma=0.25\nbeta=1\nlambda=0.3\n")
    js = tmp_path / "p.json"
    js.write_text(json.dumps({"r": 0.05, "mu": 0.12, "sigma": 0.25, "beta": 1, "lambda": 0.3}))
    outs = [run(capsys, "boundaries", "--n", "3", "--params", str(f))[1] for f in (kv, js)]
    assert outs[0] == outs[1]
    expect = make(mu=0.12, **{"lambda": 0.3}).boundaries(3.0).x_splg
    assert float(rows(outs[0])[-1][-1]) == expect


@pytest.mark.parametrize("argv", [
    ["boundaries", "--n", "1"],
    ["boundaries", "--set", "mu=0.01"],
    ["boundaries", "--set", "lambda"],
    ["boundaries", "--params", "/nonexistent/params.json"],
    ["policy", "--x-min", "5", "--x-max", "1"],
    ["simulate", "--dt", "0"],
    ["simulate", "--threads", "0"],
    ["sweep", "--param", "lambda", "--values", "0.2,abc"],
])
def test_usage_errors_exit_2(capsys, argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
    assert "spendmax" in capsys.readouterr().err


def test_bad_json_params(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(SystemExit) as exc:
        main(["boundaries", "--params", str(bad)])
    assert exc.value.code == 2


def test_domain_error_exit_1(capsys):
    code, _, err = run(capsys, "policy", "--h", "-1")
    assert code == 1 and "error" in err


def test_verify_report(capsys, tmp_path):
    out = tmp_path / "report.json"
    code, _, _ = run(capsys, "verify", "--out", str(out))
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["schema"] == "spendmax.verify/1" and doc["passed"]
    assert any(c["name"] == "bvp_oracle" for c in doc["checks"])


def test_verify_rho_general(capsys):
    code, out, _ = run(capsys, "verify", "--set", "rho=0.06", "--convexity-probe", "1", "5")
    assert code == 0 and json.loads(out)["passed"]


def test_simulate_outputs_and_thread_independence(capsys, tmp_path):
    common = ["simulate", "--paths", "12", "--horizon", "2", "--budget-paths", "8",
              "--consistency-paths", "4", "--consistency-horizon", "1"]
    docs = []
    for threads in ("1", "3"):
        d = tmp_path / threads
        code, _, _ = run(capsys, *common, "--threads", threads, "--out", str(d),
                         "--dump-paths", "2")
        assert code == 0
        docs.append(json.loads((d / "summary.json").read_text()))
    assert docs[0] == docs[1]
    doc = docs[0]
    assert doc["schema"] == "spendmax.simulate/1"
    assert {"value", "budget", "consistency"} <= set(doc)
    dump = rows((tmp_path / "1" / "paths.csv").read_text())
    assert dump[0] == ["path", "t", "w", "x", "c", "pi", "h"]
    assert len(dump) == 1 + 2 * 201


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "spendmax", "boundaries", "--n", "2"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and res.stdout.startswith("h,x_zero")
    res = subprocess.run([sys.executable, "-m", "spendmax"], capture_output=True, text=True)
    assert res.returncode == 2
