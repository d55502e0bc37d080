"""File export: legacy VTK (ASCII 3.0), CSV tables and JSON documents.

All writers are byte-stable for identical inputs: floats are written with
``repr`` (shortest round-trip form), JSON keys are sorted and CSV rows use
CRLF line endings as in RFC 4180.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import zipfile

import numpy as np

from .errors import ArgumentError
from .geomesh import Mesh

VTK_CELL_TYPE = {2: 5, 3: 10}  # triangle, tetrahedron


def _f(x) -> str:
    x = float(x)
    if x == 0.0:
        return "0"
    return repr(x)


def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _write_text(path: str, text: str):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------- VTK

def vertex_values(space, coef) -> np.ndarray:
    """Nodal values at mesh vertices, shape (n_vertices, ncomp); vertex nodes come first."""
    nv = len(space.mesh.vertices)
    return space.split(np.asarray(coef, dtype=float))[:nv]


def vtk_text(mesh: Mesh, point_data: dict | None = None, cell_data: dict | None = None,
             title: str = "mrhomog") -> str:
    """Legacy VTK UNSTRUCTURED_GRID; 2D vectors are padded with a zero z component."""
    d = mesh.dim
    nv, nc = len(mesh.vertices), len(mesh.cells)
    out = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {nv} double"]
    X = np.zeros((nv, 3))
    X[:, :d] = mesh.vertices
    out += [" ".join(_f(v) for v in row) for row in X]
    k = d + 1
    out.append(f"CELLS {nc} {nc * (k + 1)}")
    out += [f"{k} " + " ".join(str(int(i)) for i in row) for row in mesh.cells]
    out.append(f"CELL_TYPES {nc}")
    out += [str(VTK_CELL_TYPE[d])] * nc
    for header, n, data in (("POINT_DATA", nv, point_data), ("CELL_DATA", nc, cell_data)):
        if not data:
            continue
        out.append(f"{header} {n}")
        for name in sorted(data):
            a = np.asarray(data[name], dtype=float)
            a = a.reshape(n, -1)
            safe = name.replace(" ", "_")
            if a.shape[1] == 1:
                out += [f"SCALARS {safe} double 1", "LOOKUP_TABLE default"]
                out += [_f(v) for v in a[:, 0]]
            elif a.shape[1] in (2, 3):
                v3 = np.zeros((n, 3))
                v3[:, :a.shape[1]] = a
                out.append(f"VECTORS {safe} double")
                out += [" ".join(_f(v) for v in row) for row in v3]
            else:
                raise ArgumentError(f"field {name!r} has {a.shape[1]} components; VTK export takes 1 to 3")
    return "\n".join(out) + "\n"


def write_vtk(path: str, mesh: Mesh, point_data: dict | None = None, cell_data: dict | None = None,
              title: str = "mrhomog"):
    _write_text(path, vtk_text(mesh, point_data, cell_data, title))


def read_vtk(path: str) -> dict:
    """Parse files written by ``write_vtk`` (points, cells, point/cell data)."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines[0].startswith("# vtk DataFile Version 3.0"):
        raise ArgumentError(f"{path}: not a legacy VTK 3.0 file")
    i = 4
    out = {"title": lines[1], "point_data": {}, "cell_data": {}}
    npts = int(lines[i].split()[1])
    out["points"] = np.array([[float(v) for v in lines[i + 1 + j].split()] for j in range(npts)])
    i += 1 + npts
    nc = int(lines[i].split()[1])
    out["cells"] = np.array([[int(v) for v in lines[i + 1 + j].split()[1:]] for j in range(nc)], dtype=int)
    i += 1 + nc
    i += 1 + int(lines[i].split()[1])
    target, n = None, 0
    while i < len(lines) and lines[i]:
        parts = lines[i].split()
        if parts[0] in ("POINT_DATA", "CELL_DATA"):
            target = out["point_data" if parts[0] == "POINT_DATA" else "cell_data"]
            n = int(parts[1])
            i += 1
        elif parts[0] == "SCALARS":
            target[parts[1]] = np.array([float(lines[i + 2 + j]) for j in range(n)])
            i += 2 + n
        elif parts[0] == "VECTORS":
            target[parts[1]] = np.array([[float(v) for v in lines[i + 1 + j].split()] for j in range(n)])
            i += 1 + n
        else:
            raise ArgumentError(f"{path}: unexpected line {lines[i]!r}")
    return out


# ---------------------------------------------------------------- CSV

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\r\n")
    wr.writerow(list(header))
    for row in rows:
        if isinstance(row, dict):
            row = [row.get(h) for h in header]
        wr.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path: str, header, rows):
    _write_text(path, csv_text(header, rows))


def _parse(v: str):
    if v == "":
        return None
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def read_csv(path: str) -> tuple[list, list]:
    """Header and rows (numbers parsed, empty cells as None)."""
    with open(path, encoding="utf-8", newline="") as fh:
        rd = list(csv.reader(fh))
    if not rd:
        return [], []
    return rd[0], [[_parse(v) for v in r] for r in rd[1:]]


# ---------------------------------------------------------------- JSON

def to_jsonable(obj):
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def json_text(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path: str, obj):
    _write_text(path, json_text(obj))


def read_json(path: str):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------- tensors

def tensor_rows(tensors) -> tuple[list, list]:
    """N in Voigt layout: header (N1111, N1122, N1212, ...) and a single row."""
    from .efftensors import voigt_row
    names, vals = voigt_row(np.asarray(tensors.N))
    return names, [vals]


def magnetic_rows(tensors) -> tuple[list, list]:
    """M and E (3x3) as rows tensor, A11, A12, ..., A33; empty when absent."""
    header = ["tensor"] + [f"A{i + 1}{j + 1}" for i in range(3) for j in range(3)]
    rows = []
    for key in ("M", "E"):
        A = getattr(tensors, key)
        if A is not None:
            rows.append([key] + [float(v) for v in np.asarray(A).ravel()])
    return header, rows


def save_npz(path: str, **arrays):
    """Like ``np.savez`` but byte-stable: fixed entry timestamps, sorted names."""
    _ensure_parent(path)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def export(artifact, fmt: str, path: str, **kw):
    """Write ``artifact`` (Mesh, field set, EffectiveTensors, report) in format vtk, csv or json."""
    from .efftensors import EffectiveTensors
    fmt = fmt.lower()
    if fmt == "vtk":
        if isinstance(artifact, Mesh):
            cell_data = kw.get("cell_data", {"cell_tag": artifact.cell_tags})
            return write_vtk(path, artifact, kw.get("point_data"), cell_data)
        if isinstance(artifact, tuple) and len(artifact) == 2 and isinstance(artifact[0], Mesh):
            return write_vtk(path, artifact[0], artifact[1])
        raise ArgumentError("VTK export takes a Mesh or a (Mesh, fields) pair")
    if fmt == "csv":
        if isinstance(artifact, EffectiveTensors):
            return write_csv(path, *tensor_rows(artifact))
        if hasattr(artifact, "to_csv"):
            _write_text(path, artifact.to_csv())
            return None
        if isinstance(artifact, tuple) and len(artifact) == 2:
            return write_csv(path, *artifact)
        raise ArgumentError("CSV export takes tensors, a report or a (header, rows) pair")
    if fmt == "json":
        return write_json(path, artifact)
    raise ArgumentError(f"unknown export format {fmt!r}; expected vtk, csv or json")
