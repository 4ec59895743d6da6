import json
import subprocess
import sys

import pytest

from uwbcalib.cli import main
from uwbcalib.io import read_csv, read_json


def _fast(tmp_path, **scenario):
    sc = {"duration": 16.0, "imu_rate": 50.0, **scenario}
    p = tmp_path / "fast.json"
    p.write_text(json.dumps({"scenario": sc}))
    return str(p)


def test_config_dump_round_trips(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["config-dump", "--config", "table1", "--seed", "9", "--out", str(a)]) == 0
    cfg = read_json(a / "config.json")
    assert cfg["scenario"]["seed"] == 9 and cfg["out"] == str(a)
    assert read_json(a / "config.schema.json")["type"] == "object"
    assert main(["config-dump", "--config", str(a / "config.json"), "--out", str(a)]) == 0
    assert main(["config-dump", "--config", str(a / "config.json"), "--out", str(b)]) == 0
    d1, d2 = read_json(a / "config.json"), read_json(b / "config.json")
    d1.pop("out"), d2.pop("out")
    assert d1 == d2
    assert '"scenario"' in capsys.readouterr().out


@pytest.mark.parametrize("content", ['{"scenario": {"bogus": 1}}', '{"mode": ', 
                                     '{"filter": {"gate": 2.0}}'])
def test_bad_config_exits_2(tmp_path, capsys, content):
    p = tmp_path / "bad.json"
    p.write_text(content)
    assert main(["calibrate", "--config", str(p), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "config error" in err and ("field" in err or "line" in err)


def test_missing_config_exits_2(tmp_path):
    assert main(["fim", "--config", str(tmp_path / "none.json")]) == 2


def test_bad_thread_setting_exits_2(tmp_path, monkeypatch):
    monkeypatch.setenv("UWBCALIB_THREADS", "zero")
    assert main(["config-dump", "--out", str(tmp_path)]) == 2


def test_simulate_is_byte_identical(tmp_path):
    cfg = _fast(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["simulate", "--config", cfg, "--seed", "4", "--out", str(out)]) == 0
    for name in ("truth.csv", "imu.csv", "camera.csv", "ranges.csv", "landmarks.csv",
                 "anchors.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    fields, rows = read_csv(a / "anchors.csv")
    assert fields[0] == "anchor_id" and len(rows) == 4
    _, truth = read_csv(a / "truth.csv")
    assert len(truth) == 16 * 50 + 1


def test_calibrate_writes_trace_and_summary(tmp_path):
    out = tmp_path / "run"
    assert main(["calibrate", "--config", _fast(tmp_path), "--mode", "ri+ekf",
                 "--out", str(out)]) == 0
    s = read_json(out / "summary.json")
    assert s["mode"] == "ri+ekf" and s["status"] == "ok"
    assert len(s["anchors"]) == 4 and "degenerate" not in s
    fields, rows = read_csv(out / "trace.csv")
    assert fields[:2] == ["t", "phase"] and rows[-1]["phase"] == "refine"


def test_calibrate_degenerate_exits_3(tmp_path, capsys):
    assert main(["calibrate", "--config", "collinear", "--out", str(tmp_path)]) == 3
    assert "degenerate: collinear" in capsys.readouterr().out
    assert read_json(tmp_path / "summary.json")["degenerate"] == "collinear"


def test_fim_static_and_planar(tmp_path):
    assert main(["fim", "--config", "static", "--out", str(tmp_path / "s")]) == 0
    a = read_json(tmp_path / "s" / "fim.json")["anchors"][0]
    assert a["position_rank"] == 1 and a["flags"] == ["static"]
    assert main(["fim", "--config", "planar", "--out", str(tmp_path / "p")]) == 0
    a = read_json(tmp_path / "p" / "fim.json")["anchors"][0]
    assert abs(a["det_f"]) <= 1e-12 and "planar-z" in a["flags"]


def test_fim_nominal_sweep(tmp_path):
    assert main(["fim", "--config", "fig3", "--out", str(tmp_path)]) == 0
    rep = read_json(tmp_path / "fim.json")
    dets = [s["det_f"][0] for s in rep["sweep"]]
    assert len(dets) == 5 and all(x > y for x, y in zip(dets, dets[1:]))


def test_montecarlo_writes_report(tmp_path, capsys):
    assert main(["montecarlo", "--config", "fig3", "--trials", "2", "--seed", "42",
                 "--out", str(tmp_path)]) == 0
    rep = read_json(tmp_path / "montecarlo.json")
    assert rep["seed"] == 42 and rep["trials"] == 2 and len(rep["cells"]) == 5
    _, rows = read_csv(tmp_path / "montecarlo_cells.csv")
    assert len(rows) == 5 * 2 * 2
    assert "RI wins" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "uwbcalib.cli", "config-dump", "--out",
                        str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0 and (tmp_path / "config.schema.json").exists()
    r = subprocess.run([sys.executable, "-m", "uwbcalib.cli", "nope"], capture_output=True)
    assert r.returncode == 2
