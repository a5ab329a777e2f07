"""Result tables: cell formatting, CSV round trips, byte determinism."""

import math

import pytest

from bisac.results import ResultTable, format_cell, read_table


def test_format_cell_families():
    assert format_cell(True) == "1"
    assert format_cell(False) == "0"
    assert format_cell(3) == "3"
    assert format_cell(-12) == "-12"
    assert format_cell(2.0) == "2"
    assert format_cell(0.25) == "0.25"
    assert format_cell(float("inf")) == "inf"
    assert format_cell(float("-inf")) == "-inf"
    assert format_cell(float("nan")) == "nan"
    assert format_cell("rtr-sca") == "rtr-sca"


def test_format_cell_shortest_roundtrip():
    for v in (1.0 / 3.0, 1e-7, 123456.789, 2.0 ** 0.5):
        assert float(format_cell(v)) == pytest.approx(v, rel=1e-11)


def test_schema_enforced():
    t = ResultTable(("a", "b"), ("1", "m"))
    t.append(1, 2.0)
    with pytest.raises(ValueError, match="cells"):
        t.append(1)
    with pytest.raises(ValueError, match="unit per column"):
        ResultTable(("a", "b"), ("1",))


def test_column_and_select():
    t = ResultTable(("k", "method", "v"), ("1", "name", "m"))
    t.append(0, "rtr", 1.0)
    t.append(0, "rsd", 2.0)
    t.append(1, "rtr", 3.0)
    assert t.column("v") == [1.0, 2.0, 3.0]
    sub = t.select(method="rtr")
    assert sub.rows == [(0, "rtr", 1.0), (1, "rtr", 3.0)]
    assert sub.columns == t.columns


def test_csv_layout_and_metadata_block():
    t = ResultTable(("x", "peb"), ("m", "m"), metadata={"seed": 5, "n_tx": 36})
    t.append(1.5, float("inf"))
    lines = t.to_csv().splitlines()
    assert lines[0] == "# schema: x [m], peb [m]"
    # metadata sorted, version injected
    assert lines[1] == "# n_tx: 36"
    assert lines[2] == "# seed: 5"
    assert lines[3].startswith("# version: bisac")
    assert lines[4] == "x,peb"
    assert lines[5] == "1.5,inf"


def test_timestamp_opt_in():
    t = ResultTable(("a",), ("1",))
    t.append(1)
    assert "timestamp" not in t.to_csv()
    assert "# timestamp: " in t.to_csv(stamp=True)


def test_round_trip_preserves_values(tmp_path):
    t = ResultTable(
        ("gamma", "method", "round", "objective"),
        ("m", "name", "1", "1"),
        metadata={"config_hash": "abc123", "seed": 0},
    )
    t.append(0.1, "rtr-sca", 1, 98.0556241214)
    t.append(0.1, "rsd-sca", 2, float("inf"))
    path = tmp_path / "table.csv"
    t.write_csv(path)
    back = read_table(path)
    assert back.columns == t.columns
    assert back.units == t.units
    assert back.metadata["config_hash"] == "abc123"
    assert back.rows[0] == (0.1, "rtr-sca", 1, 98.0556241214)
    assert back.rows[1][1] == "rsd-sca"
    assert math.isinf(back.rows[1][3])
    # ints come back as ints, floats as floats
    assert isinstance(back.rows[0][2], int)
    assert isinstance(back.rows[0][0], float)


def test_byte_determinism(tmp_path):
    def build():
        t = ResultTable(("i", "v"), ("1", "m"), metadata={"seed": 9})
        for i in range(50):
            t.append(i, (i + 1) / 7.0)
        return t

    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    build().write_csv(a)
    build().write_csv(b)
    assert a.read_bytes() == b.read_bytes()


def test_read_table_requires_header(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("# schema: a [1]\n")
    with pytest.raises(ValueError, match="no header row"):
        read_table(path)
