import csv
import io
import json

import numpy as np
import pytest

from reorgheat import cli, experiments
from reorgheat.config import defaults, load_config, parse_config
from reorgheat.errors import ValidationError

SPIN = """\
[model]
kind = spin
[baths]
lambda1 = 3e-3
lambda2 = 1e-3
[temperatures]
t1 = 1.0
t2 = 1.2
[methods]
exact = none
[run]
label = smoke
"""


def test_unknown_key_reports_line():
    text = SPIN.replace("lambda2 = 1e-3", "lambda2 = 1e-3\nlamda3 = 2")
    with pytest.raises(ValidationError, match=r"cfg.ini:6"):
        parse_config(text, "cfg.ini")


def test_unknown_section_and_bad_value():
    with pytest.raises(ValidationError, match=":1"):
        parse_config("[bogus]\nx = 1\n", "c")
    with pytest.raises(ValidationError, match=":2"):
        parse_config("[baths]\nlambda1 = -1\n", "c")
    with pytest.raises(ValidationError):
        parse_config("[model]\nkind = rotor\n", "c")


def test_defaults_and_overrides():
    cfg = parse_config(SPIN)
    assert cfg.get("heom", "depth") == 3
    assert cfg.is_set("baths", "lambda1") and not cfg.is_set("heom", "depth")
    cfg2 = cfg.with_values(baths__lambda1=1e-2)
    assert cfg2.get("baths", "lambda1") == 1e-2 and cfg.get("baths", "lambda1") == 3e-3
    with pytest.raises(ValidationError):
        cfg.with_values(baths__nope=1)


def test_grid_parsing_excludes_diagonal():
    cfg = parse_config("[temperatures]\nt1_grid = 0.5:1.5:3\nt2_grid = 0.5, 1.0\n")
    pts = experiments.temperature_points(cfg)
    assert len(pts) == 4
    assert all(a != b for a, b in pts)
    one = parse_config("[temperatures]\nt1_grid = 1.0\nt2_grid = 1.0\n")
    assert experiments.temperature_points(one) == []


def test_currents_command_deterministic(tmp_path):
    p = tmp_path / "spin.ini"
    p.write_text(SPIN)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["currents", "--config", str(p), "--out", str(out1)]) == 0
    assert cli.main(["currents", "--config", str(p), "--out", str(out2)]) == 0
    a = (out1 / "smoke_currents.csv").read_bytes()
    assert a == (out2 / "smoke_currents.csv").read_bytes()
    rows = list(csv.DictReader(io.StringIO(a.decode())))
    assert len(rows) == 4
    for r in rows:
        assert r["method"] and r["reference"] and r["flavor"] and r["status"] == "ok"
        assert abs(float(r["q1"]) + float(r["q2"])) < 1e-10
    mirror = json.loads((out1 / "smoke_currents.json").read_text())
    assert len(mirror["rows"]) == 4


def test_float_format():
    assert cli.format_value(0.1) == "0.10000000000000001"
    assert cli.format_value(3) == "3"


def test_exit_code_validation(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[model]\nkind = spin\nwobble = 1\n")
    assert cli.main(["currents", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "bad.ini:3" in capsys.readouterr().err
    assert cli.main(["sweep", "--jobs", "0", "--out", str(tmp_path)]) == 2


def test_exit_code_regression(tmp_path):
    golden = {"schema": "other/0", "entries": []}
    p = tmp_path / "g.json"
    p.write_text(json.dumps(golden))
    assert cli.main(["regression", "--golden", str(p)]) == 3


def test_zero_coupling_dynamics_coincide(tmp_path):
    text = ("[baths]\nlambda1 = 0\nlambda2 = 0\n[temperatures]\nt1 = 1\nt2 = 2\n"
            "[heom]\ndepth = 1\n[dynamics]\nt_final = 6\nn_points = 7\n[run]\nlabel = free\n")
    p = tmp_path / "free.ini"
    p.write_text(text)
    assert cli.main(["dynamics", "--config", str(p), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "free_dynamics.csv")))
    assert len({(r["method"], r["reference"], r["flavor"]) for r in rows}) == 5
    by_t = {}
    for r in rows:
        by_t.setdefault(r["t"], []).append(float(r["re_coherence"]))
    assert len(by_t) == 7
    for t, vals in by_t.items():
        assert np.ptp(vals) < 1e-6
        assert np.isclose(vals[0], 0.5 * np.cos(float(t)), atol=1e-6)


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = parse_config(SPIN).with_values(
        temperatures__t1_grid=(0.8, 1.0), temperatures__t2_grid=(1.0, 1.3),
        methods__flavors=("gkls",))
    serial = experiments.run_current_sweep(cfg, jobs=1)
    parallel = experiments.run_current_sweep(cfg, jobs=2)
    assert cli.rows_to_csv(serial) == cli.rows_to_csv(parallel)
    assert {(r["t1"], r["t2"]) for r in serial} == {(0.8, 1.0), (0.8, 1.3), (1.0, 1.3)}


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ValidationError):
        load_config(tmp_path / "absent.ini")
    assert defaults().get("model", "kind") == "spin"
