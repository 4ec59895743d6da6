import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from uwbcalib.io import dumps_json, read_csv, read_json, write_csv, write_json


def test_json_cleans_numpy_and_non_finite(tmp_path):
    obj = {"a": np.float64(0.1), "b": np.arange(3), "c": float("nan"), "d": np.bool_(True),
           "e": (1, np.int64(2)), 3: -np.inf}
    p = write_json(tmp_path / "x" / "o.json", obj)
    assert read_json(p) == {"a": 0.1, "b": [0, 1, 2], "c": None, "d": True, "e": [1, 2],
                            "3": None}
    assert dumps_json(obj) == p.read_text()


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
def test_csv_floats_round_trip_bitwise(values):
    import tempfile
    from pathlib import Path
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "t.csv"
        write_csv(p, ["i", "x", "flag", "name"],
                  [{"i": i, "x": v, "flag": i % 2 == 0, "name": "a b"} for i, v in
                   enumerate(values)])
        fields, rows = read_csv(p)
    assert fields == ["i", "x", "flag", "name"]
    for i, (r, v) in enumerate(zip(rows, values)):
        assert r["i"] == i and r["flag"] == (1 if i % 2 == 0 else 0) and r["name"] == "a b"
        got = r["x"]
        assert isinstance(got, float)
        assert got == v and math.copysign(1, got) == math.copysign(1, v)


def test_csv_keeps_float_type_and_sign(tmp_path):
    write_csv(tmp_path / "f.csv", ["x"], [{"x": -0.0}, {"x": 3.0}, {"x": float("nan")}])
    _, rows = read_csv(tmp_path / "f.csv")
    assert math.copysign(1, rows[0]["x"]) == -1 and rows[1]["x"] == 3.0
    assert isinstance(rows[1]["x"], float) and math.isnan(rows[2]["x"])


def test_csv_missing_cells(tmp_path):
    write_csv(tmp_path / "m.csv", ["a", "b"], [{"a": 1.5}, {"b": "x"}])
    _, rows = read_csv(tmp_path / "m.csv")
    assert rows == [{"a": 1.5, "b": None}, {"a": None, "b": "x"}]
