import math
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssq.core import Dataset
from ssq.errors import DataError
from ssq.io import (atomic_write, dataset_csv, fmt, load_csv, load_data, markdown_table,
                    metrics_csv, metrics_from_csv, parse_report, read_report, report_csv,
                    write_dataset)
from ssq.simulation import DgpSpec, run_study


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_counting_rule(tmp_path):
    f = _write(tmp_path / "d.csv", "x1,y,x2\n1,2.5,3\n4,,6\n7,8,9\n1,,0\n2,3,4\n")
    d = load_csv(f, "y")
    assert (d.n, d.N, d.p) == (3, 2, 2)
    assert d.labeled_y.tolist() == [2.5, 8.0, 3.0]
    assert d.labeled_x.tolist() == [[1, 3], [7, 9], [2, 4]]
    assert d.unlabeled_x.tolist() == [[4, 6], [1, 0]]


def test_no_response_column(tmp_path):
    f = _write(tmp_path / "d.csv", "a,b\n1,2\n3,4\n")
    with pytest.raises(DataError, match="no labeled rows"):
        load_csv(f, None)
    with pytest.raises(DataError, match="no column named 'y'"):
        load_csv(f, "y")
    g = _write(tmp_path / "e.csv", "a,y\n1,\n3,\n")
    with pytest.raises(DataError, match="no labeled rows"):
        load_csv(g, "y")


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    d = Dataset(rng.standard_normal(7) * 1e-7, rng.standard_normal((7, 3)) * 1e9,
                rng.standard_normal((4, 3)) / 3)
    write_dataset(tmp_path / "rt.csv", d)
    back = load_csv(tmp_path / "rt.csv")
    assert np.array_equal(back.labeled_y, d.labeled_y)
    assert np.array_equal(back.labeled_x, d.labeled_x)
    assert np.array_equal(back.unlabeled_x, d.unlabeled_x)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_is_lossless(v):
    assert float(fmt(v)) == v


def test_bad_cells_name_row_and_column(tmp_path):
    f = _write(tmp_path / "d.csv", "x1,x2,y\n1,2,3\n4,oops,6\n")
    with pytest.raises(DataError, match=r"row 3, column 'x2'"):
        load_csv(f)
    g = _write(tmp_path / "g.csv", "x1,x2,y\n1,2,3\n4,5\n")
    with pytest.raises(DataError, match="row 3 has 2 fields"):
        load_csv(g)
    h = _write(tmp_path / "h.csv", "x1,y\n1,inf\n")
    with pytest.raises(DataError, match="non-finite"):
        load_csv(h)
    with pytest.raises(DataError, match="cannot read"):
        load_csv(tmp_path / "missing.csv")
    e = _write(tmp_path / "e.csv", "")
    with pytest.raises(DataError, match="header row required"):
        load_csv(e)


def test_two_file_mode(tmp_path):
    lab = _write(tmp_path / "l.csv", "x1,x2,y\n1,2,3\n4,5,6\n7,8,9\n")
    unl = _write(tmp_path / "u.csv", "x2,x1\n20,10\n50,40\n")
    d = load_csv(lab, "y", unl)
    assert (d.n, d.N) == (3, 2)
    # matched by name, not position
    assert d.unlabeled_x.tolist() == [[10, 20], [40, 50]]
    bad = _write(tmp_path / "b.csv", "x1,x2,y\n1,2,3\n")
    with pytest.raises(DataError, match="response values"):
        load_csv(lab, "y", bad)
    short = _write(tmp_path / "s.csv", "x1\n1\n")
    with pytest.raises(DataError, match="missing covariate"):
        load_csv(lab, "y", short)


def test_categorical_coding(tmp_path):
    f = _write(tmp_path / "d.csv", "sex,age,y\nm,30,1\nf,40,2\nm,50,\n")
    u = _write(tmp_path / "u.csv", "sex,age\nx,60\n")
    loaded = load_data(f, "y", u, categorical=["sex"])
    assert loaded.covariates == ["sex", "age"]
    # levels sorted over both files: f=0, m=1, x=2
    assert loaded.data.labeled_x[:, 0].tolist() == [1, 0]
    assert loaded.data.unlabeled_x[:, 0].tolist() == [1, 2]
    with pytest.raises(DataError, match="not a covariate"):
        load_data(f, "y", categorical=["y"])


def test_comment_and_blank_lines_skipped(tmp_path):
    f = _write(tmp_path / "d.csv", "# generated\nx,y\n\n1,2\n3,4\n")
    assert load_csv(f).n == 2


def test_report_round_trip():
    rows = [{"method": "a", "estimate": 0.1, "n": 3},
            {"method": "b", "estimate": -1 / 3, "n": 4}]
    text = report_csv(rows, {"seed": 7, "tau": 0.5, "flag": True})
    meta, back = parse_report(text)
    assert meta == {"seed": "7", "tau": "0.5", "flag": "true"}
    assert float(back[1]["estimate"]) == -1 / 3
    assert [r["method"] for r in back] == ["a", "b"]


def test_metrics_table_round_trip(tmp_path):
    table = run_study(DgpSpec("b", p=2, n=60, N=120), ["zero", "ks_ols"], K=3,
                      replications=3, master_seed=1, m_oracle=500)
    path = tmp_path / "m.csv"
    atomic_write(path, metrics_csv(table))
    back = metrics_from_csv(path.read_text())
    assert back.rows == table.rows
    assert back.oracle == table.oracle
    meta, _ = read_report(path)
    assert meta["methods"] == "zero,ks_ols"


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "out.csv"
    atomic_write(target, "first\n")

    with pytest.raises(TypeError):
        atomic_write(target, 12345)          # not text: the write fails midway
    assert target.read_text() == "first\n"
    assert os.listdir(tmp_path) == ["out.csv"]


def test_markdown_table_alignment():
    text = markdown_table([{"m": "ks_ols", "re": 3.14159}, {"m": "z", "re": math.nan}],
                          ["m", "re"], digits=2)
    lines = text.splitlines()
    assert lines[0] == "| m      | re   |"
    assert lines[2] == "| ks_ols | 3.14 |"
    assert len({len(x) for x in lines}) == 1


def test_dataset_csv_header():
    d = Dataset(np.array([1.0, 2.0]), np.zeros((2, 2)), np.ones((1, 2)))
    assert dataset_csv(d).splitlines()[0] == "x1,x2,y"
    assert dataset_csv(d).splitlines()[-1] == "1,1,"
