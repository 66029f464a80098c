import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from stresspath.toolpath import HEADER, LayerToolpath, Polyline, ToolpathProgram, dedupe, read_toolpath, write_toolpath


def pl(points, kind="infill", closed=False):
    p = np.asarray(points, float)
    return Polyline(p, np.tile([0, 0, 1.0], (len(p), 1)), closed, kind)


def test_empty_program_header_only(tmp_path):
    path = write_toolpath(ToolpathProgram(), tmp_path / "t.txt")
    assert open(path, "rb").read() == (HEADER + "\n").encode()
    assert read_toolpath(path) == []


def test_one_layer_one_line(tmp_path):
    prog = ToolpathProgram([LayerToolpath(0, [pl([[0, 0, 0], [1, 2, 3]])])])
    text = open(write_toolpath(prog, tmp_path / "t.txt"), "rb").read().decode()
    lines = text.splitlines()
    assert lines[1:] == ["LAYER 0",
                         "PRINT 0.000000 0.000000 0.000000 0.000000 0.000000 1.000000",
                         "PRINT 1.000000 2.000000 3.000000 0.000000 0.000000 1.000000"]
    assert "\r" not in text and text.endswith("\n")


def test_closed_loop_and_travel_records(tmp_path):
    loop = pl([[0, 0, 0], [1, 0, 0], [1, 1, 0]], kind="contour", closed=True)
    travel = pl([[0, 0, 0], [0, 0, 1], [2, 2, 1], [2, 2, 0]], kind="travel")
    prog = ToolpathProgram([LayerToolpath(3, [loop, travel])])
    recs = read_toolpath(write_toolpath(prog, tmp_path / "t.txt"))
    kinds = [r[1] for r in recs]
    assert kinds == ["PRINT"] * 4 + ["TRAVEL"] * 4
    assert recs[0][2:5] == recs[3][2:5]
    assert all(r[0] == 3 for r in recs)


@given(arrays(float, (6, 3), elements=st.floats(-1e4, 1e4)))
def test_round_trip(tmp_path_factory, pts):
    path = tmp_path_factory.mktemp("rt") / "t.txt"
    nrm = np.tile([0.6, 0.0, 0.8], (6, 1))
    prog = ToolpathProgram([LayerToolpath(0, [Polyline(pts, nrm)])])
    recs = read_toolpath(write_toolpath(prog, path))
    got = np.array([r[2:5] for r in recs])
    assert np.abs(got - pts).max() <= 5e-7 + 1e-12
    assert np.abs(np.array([r[5:] for r in recs]) - nrm).max() <= 5e-7


def test_non_finite_rejected(tmp_path):
    prog = ToolpathProgram([LayerToolpath(0, [pl([[0, 0, 0], [np.nan, 0, 0]])])])
    with pytest.raises(ValueError):
        write_toolpath(prog, tmp_path / "t.txt")


def test_layer_order_enforced(tmp_path):
    prog = ToolpathProgram([LayerToolpath(0, [], iso=1.0), LayerToolpath(1, [], iso=0.5)])
    with pytest.raises(ValueError):
        write_toolpath(prog, tmp_path / "t.txt")


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        write_toolpath(ToolpathProgram(), tmp_path / "missing" / "t.txt")


def test_malformed_file(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("PRINT 0 0 0 0 0 1\n")
    with pytest.raises(ValueError):
        read_toolpath(p)
    p.write_text("LAYER 0\nMOVE 0 0 0 0 0 1\n")
    with pytest.raises(ValueError):
        read_toolpath(p)


def test_negative_zero_normalized(tmp_path):
    prog = ToolpathProgram([LayerToolpath(0, [pl([[-1e-9, 0, 0], [1, 0, 0]])])])
    text = open(write_toolpath(prog, tmp_path / "t.txt")).read()
    assert "-0.000000" not in text


def test_polyline_helpers():
    loop = pl([[0, 0, 0], [1, 0, 0], [1, 1, 0]], closed=True)
    assert loop.length() == pytest.approx(2 + np.sqrt(2))
    assert np.array_equal(loop.end, loop.start)
    r = pl([[0, 0, 0], [1, 0, 0]]).reversed()
    assert np.array_equal(r.start, [1, 0, 0])
    with pytest.raises(ValueError):
        Polyline(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        pl([[0, 0, 0]], kind="seam")
    p, n = dedupe(np.array([[0, 0, 0], [0, 0, 1e-9], [1, 0, 0.0]]), np.zeros((3, 3)))
    assert len(p) == 2
