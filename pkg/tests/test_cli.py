import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cssmpc import cli

ROOT = Path(__file__).resolve().parents[1]
MINI = ROOT / "configs" / "mini_scalar.json"
VEHICLE = ROOT / "configs" / "vehicle.json"
GOLDEN = Path(__file__).resolve().parent / "golden" / "mini_scalar"


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def _close(a, b, rtol=1e-6, atol=1e-9):
    """Structural equality with numeric tolerance (solver output may differ in the last digits)."""
    if isinstance(a, dict):
        assert a.keys() == b.keys()
        for k in a:
            _close(a[k], b[k], rtol, atol)
    elif isinstance(a, list):
        assert len(a) == len(b)
        for x, y in zip(a, b):
            _close(x, y, rtol, atol)
    elif isinstance(a, float) or isinstance(b, float):
        assert math.isclose(a, b, rel_tol=rtol, abs_tol=atol), (a, b)
    else:
        assert a == b


@given(v=st.floats(allow_nan=False, allow_infinity=False))
def test_json_floats_roundtrip(v):
    assert json.loads(cli.dumps({"v": v}))["v"] == v


def test_dumps_layout():
    text = cli.dumps({"a": [1.0, 2], "b": {"c": True, "d": None}, "e": []})
    assert json.loads(text) == {"a": [1.0, 2], "b": {"c": True, "d": None}, "e": []}
    assert "[1.0, 2]" in text


def test_shipped_configs_validate(capsys):
    assert cli.main(["validate", "--config", str(MINI)]) == 0
    assert cli.main(["validate", "--config", str(VEHICLE)]) == 0
    assert "config ok" in capsys.readouterr().out


def test_schema_error_exit_codes(tmp_path, capsys):
    cfg = json.loads(MINI.read_text())
    cfg["horizon"] = 0
    cfg["colour"] = "blue"
    p = _write(tmp_path, cfg)
    assert cli.main(["validate", "--config", str(p)]) == 1
    out = capsys.readouterr().out
    assert "horizon" in out and "colour" in out
    assert cli.main(["terminal", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2


def test_dimension_audit(tmp_path, capsys):
    cfg = json.loads(MINI.read_text())
    cfg["x0"] = [1.0, 2.0]
    cfg["cost"]["Q"] = {"shape": [2, 2], "data": [1, 0, 0, 1]}
    cfg["system"]["schedule"][0] = {"weights": [0.5, 0.6]}
    assert cli.main(["validate", "--config", str(_write(tmp_path, cfg))]) == 1
    out = capsys.readouterr().out
    assert "x0 has length 2" in out and "Q has shape" in out and "sum to 1" in out


def test_validate_reports_profile_outside_hull(tmp_path, capsys):
    cfg = json.loads(VEHICLE.read_text())
    cfg["system"]["profile"] = {"kind": "constant", "length": 10, "nu": 25.0, "rho": 0.0}
    assert cli.main(["validate", "--config", str(_write(tmp_path, cfg))]) == 1
    out = capsys.readouterr().out
    assert "outside the bounds" in out and "not in the parameter hull" in out


def test_explicit_schedule_outside_hull(tmp_path, capsys):
    cfg = json.loads(MINI.read_text())
    cfg["system"]["schedule"][2] = {"A": {"shape": [1, 1], "data": [1.5]}, "B": {"shape": [1, 1], "data": [1.0]},
                                    "D": {"shape": [1, 1], "data": [0.1]}, "r": [0.0]}
    assert cli.main(["validate", "--config", str(_write(tmp_path, cfg))]) == 1
    assert "schedule step 2" in capsys.readouterr().out


def test_simulate_needs_cached_ingredients(tmp_path, capsys):
    assert cli.main(["simulate", "--config", str(MINI), "--out", str(tmp_path)]) == 1
    assert "cssmpc terminal" in capsys.readouterr().err
    assert cli.main(["simulate", "--config", str(MINI), "--out", str(tmp_path), "--variant", "none",
                     "--no-plot"]) == 0


def test_bad_arguments():
    with pytest.raises(SystemExit) as exc:
        cli.main(["simulate"])
    assert exc.value.code == 2
    assert cli.main(["montecarlo", "--config", str(MINI), "--trials", "0"]) == 2


def test_mini_pipeline_matches_golden(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["terminal", "--config", str(MINI), "--out", str(out)]) == 0
    assert "invariance certificate: pass" in capsys.readouterr().out
    assert cli.main(["terminal", "--config", str(MINI), "--out", str(out)]) == 0
    assert "cache: hit" in capsys.readouterr().out
    cached = json.loads(next((out / "cache").glob("terminal-robust-*.json")).read_text())
    _close(cached, json.loads((GOLDEN / "terminal-robust.json").read_text()), rtol=1e-5, atol=1e-8)

    assert cli.main(["simulate", "--config", str(MINI), "--out", str(out)]) == 0
    got = list(csv.reader((out / "trial-robust-seed0.csv").open()))
    ref = list(csv.reader((GOLDEN / "trial-robust-seed0.csv").open()))
    assert got[0] == ref[0] and len(got) == len(ref)
    for g, r in zip(got[1:], ref[1:]):
        np.testing.assert_allclose([float(v) for v in g[1:3] + g[5:]], [float(v) for v in r[1:3] + r[5:]],
                                   rtol=1e-5, atol=1e-7)
        assert g[3:5] == r[3:5]
    assert (out / "trial-robust-seed0.svg").read_text().startswith("<svg")

    assert cli.main(["montecarlo", "--config", str(MINI), "--out", str(out)]) == 0
    summary = json.loads((out / "montecarlo" / "summary.json").read_text())
    _close(summary, json.loads((GOLDEN / "summary.json").read_text()), rtol=1e-5, atol=1e-7)
    assert set(json.loads((out / "montecarlo" / "runtime.json").read_text())) == {"robust", "nominal", "none"}
    assert len(list((out / "montecarlo" / "robust").glob("seed-*.csv"))) == 5
