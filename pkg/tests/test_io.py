import os

import numpy as np
import pytest

from mrhomog.efftensors import EffectiveTensors
from mrhomog.errors import ArgumentError
from mrhomog.geomesh import Mesh, build_box_mesh
from mrhomog.io import (csv_text, export, json_text, magnetic_rows, read_csv, read_json, read_vtk, save_npz,
                        sha256_file, tensor_rows, vtk_text, write_csv, write_vtk)
from mrhomog.tensoralg import sym_identity


def _triangle():
    return Mesh(vertices=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.5]]), cells=np.array([[0, 1, 2]]),
                cell_tags=np.array([0]), inclusion_centers=np.zeros((0, 2)), inclusion_axes=np.zeros((0, 2)),
                box_lo=np.zeros(2), box_hi=np.ones(2))


def test_vtk_golden_text():
    txt = vtk_text(_triangle(), {"p": [1.0, 2.0, 0.25]}, {"tag": [3]}, "t")
    assert txt == ("# vtk DataFile Version 3.0\nt\nASCII\nDATASET UNSTRUCTURED_GRID\nPOINTS 3 double\n"
                   "0 0 0\n1.0 0 0\n0 0.5 0\nCELLS 1 4\n3 0 1 2\nCELL_TYPES 1\n5\n"
                   "POINT_DATA 3\nSCALARS p double 1\nLOOKUP_TABLE default\n1.0\n2.0\n0.25\n"
                   "CELL_DATA 1\nSCALARS tag double 1\nLOOKUP_TABLE default\n3.0\n")


def test_vtk_round_trip_and_byte_stable(tmp_path):
    mesh = build_box_mesh([0, 0], [1, 1], 0.25)
    rng = np.random.default_rng(0)
    s = rng.normal(size=len(mesh.vertices))
    v = rng.normal(size=(len(mesh.vertices), 2))
    a, b = tmp_path / "a.vtk", tmp_path / "b.vtk"
    for p in (a, b):
        write_vtk(str(p), mesh, {"s": s, "v": v}, {"tag": mesh.cell_tags})
    assert a.read_bytes() == b.read_bytes()
    back = read_vtk(str(a))
    assert np.array_equal(back["points"][:, :2], mesh.vertices)
    assert np.array_equal(back["cells"], mesh.cells)
    assert np.array_equal(back["point_data"]["s"], s)
    assert np.array_equal(back["point_data"]["v"][:, :2], v)
    assert np.all(back["point_data"]["v"][:, 2] == 0)


def test_vtk_rejects_four_components():
    with pytest.raises(ArgumentError):
        vtk_text(_triangle(), {"q": np.zeros((3, 4))})


def test_csv_round_trip(tmp_path):
    rows = [[1, 0.1, None, "ok"], [2, 1e-300, 3.5, "x,y"]]
    p = tmp_path / "t.csv"
    write_csv(str(p), ["i", "a", "b", "s"], rows)
    assert p.read_bytes().count(b"\r\n") == 3
    head, back = read_csv(str(p))
    assert head == ["i", "a", "b", "s"]
    assert back == rows


def test_csv_dict_rows():
    assert csv_text(["a", "b"], [{"b": 2, "a": True}]) == "a,b\r\nTrue,2\r\n"


def test_json_round_trip(tmp_path):
    t = EffectiveTensors(dim=2, N=sym_identity(2), M=None, E=None, volume_fraction=0.0)
    p = tmp_path / "t.json"
    export(t, "json", str(p))
    back = EffectiveTensors.from_dict(read_json(str(p)))
    assert np.array_equal(back.N, t.N) and back.M is None
    assert json_text({"b": np.float64(1.5), "a": np.arange(2)}) == '{\n  "a": [\n    0,\n    1\n  ],\n  "b": 1.5\n}\n'
    assert json_text({"x": float("nan")}) == '{\n  "x": "nan"\n}\n'


def test_tensor_csv_identity():
    t = EffectiveTensors(dim=2, N=sym_identity(2), M=None, E=None, volume_fraction=0.0)
    head, rows = tensor_rows(t)
    assert head[:3] == ["N1111", "N1122", "N1212"]
    assert rows[0][:3] == [1.0, 0.0, 0.5]


def test_magnetic_rows():
    t = EffectiveTensors(dim=3, N=sym_identity(3), M=0.1 * np.eye(3), E=0.2 * np.eye(3), volume_fraction=0.1)
    head, rows = magnetic_rows(t)
    assert head[0] == "tensor" and len(head) == 10
    assert [r[0] for r in rows] == ["M", "E"]
    assert rows[1][1] == 0.2 and rows[1][2] == 0.0
    t.M = t.E = None
    assert magnetic_rows(t)[1] == []


def test_export_errors(tmp_path):
    with pytest.raises(ArgumentError):
        export(_triangle(), "xml", str(tmp_path / "m.xml"))
    with pytest.raises(ArgumentError):
        export(object(), "vtk", str(tmp_path / "m.vtk"))
    with pytest.raises(ArgumentError):
        export(object(), "csv", str(tmp_path / "m.csv"))


def test_export_mesh_creates_parent(tmp_path):
    p = tmp_path / "sub" / "m.vtk"
    export(build_box_mesh([0, 0], [1, 1], 0.5), "vtk", str(p))
    assert "cell_tag" in read_vtk(str(p))["cell_data"]


def test_save_npz_deterministic(tmp_path):
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    save_npz(str(a), y=np.arange(3.0), x=np.eye(2))
    os.utime(tmp_path, (0, 0))
    save_npz(str(b), x=np.eye(2), y=np.arange(3.0))
    assert sha256_file(str(a)) == sha256_file(str(b))
    data = np.load(str(a))
    assert sorted(data.files) == ["x", "y"]
    assert np.array_equal(data["y"], np.arange(3.0))


def test_unwritable_path_raises_oserror(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        export(build_box_mesh([0, 0], [1, 1], 0.5), "vtk", str(blocker / "m.vtk"))
