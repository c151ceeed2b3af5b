import json

import jsonschema
import numpy as np
import pytest

from gpsh.cli import MANIFEST_SCHEMA_PATH, main


def manifest(out):
    m = json.loads((out / "manifest.json").read_text())
    jsonschema.validate(m, json.loads(MANIFEST_SCHEMA_PATH.read_text()))
    return m


def matrix_csv(tmp_path, A):
    p = tmp_path / "A.csv"
    np.savetxt(p, np.asarray(A), delimiter=",")
    return str(p)


def test_classify_exit_codes(tmp_path):
    out = tmp_path / "o"
    assert main(["--out", str(out), "-G", "full:1:2", "classify", "--matrix", matrix_csv(tmp_path, np.eye(2))]) == 0
    assert manifest(out)["exit_code"] == 0
    bad = matrix_csv(tmp_path, np.diag([1.0, -1.0]))
    assert main(["--out", str(out), "-G", "full:1:2", "classify", "--matrix", bad]) == 1
    assert manifest(out)["exit_code"] == 1


def test_usage_errors(tmp_path):
    assert main(["frobnicate"]) == 2
    out = tmp_path / "o"
    assert main(["--out", str(out), "-G", "full:1:2", "classify", "--matrix", str(tmp_path / "missing.csv")]) == 2
    m = manifest(out)
    assert m["exit_code"] == 2 and m["error"]


def test_solve_csv_is_deterministic(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code = main(["--out", str(out), "-G", "full:2:2", "solve", "--h", "0.125", "--boundary", "saddle"])
        assert code == 0
        m = manifest(out)
        csvs = sorted(o for o in m["outputs"] if o.endswith(".csv"))
        assert csvs
        outs.append({c: (out / c).read_bytes() for c in csvs})
    assert outs[0] == outs[1]


def test_config_file_is_overridden_by_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"h": 0.25, "boundary": "xsq"}))
    out = tmp_path / "o"
    assert main(["--config", str(cfg), "--out", str(out), "-G", "full:1:2", "solve", "--h", "0.125"]) == 0
    c = manifest(out)["config"]
    assert c["h"] == 0.125 and c["boundary"] == "xsq"


def test_hull_and_repro(tmp_path):
    out = tmp_path / "o"
    assert main(["--out", str(out), "-G", "full:1:2", "hull", "--h", "0.125",
                 "--points=-0.5,-0.5;0.5,-0.5;0.5,0.5"]) == 0
    assert main(["--out", str(out), "repro", "ex6.6"]) == 0
    assert main(["--out", str(out), "repro", "unknown"]) == 2


def test_mp_check_on_cylinder_reports_failure(tmp_path):
    out = tmp_path / "o"
    G = json.dumps({"variant": "finite", "n": 2, "p": 1, "planes": [[[1.0], [0.0]]]})
    code = main(["--out", str(out), "-G", G, "mp-check", "--box", "0,2,-1,1", "--h", "0.125",
                 "--periodic", "0", "--trials", "30"])
    assert code == 1
