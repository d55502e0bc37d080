import math
import warnings

import numpy as np
import pytest
from scipy.spatial import cKDTree

from mrhomog.errors import ArgumentError, GeometryResolutionError, ValidationError
from mrhomog.geomesh import FLUID, CellGeometry, build_box_mesh, build_cell_mesh, build_fine_mesh, measure


def shoelace_area(mesh, mask):
    """Independent area oracle: shoelace formula per triangle."""
    X = mesh.vertices[mesh.cells[mask]]
    x, y = X[..., 0], X[..., 1]
    return float(np.sum(0.5 * np.abs(x[:, 0] * (y[:, 1] - y[:, 2]) + x[:, 1] * (y[:, 2] - y[:, 0])
                                      + x[:, 2] * (y[:, 0] - y[:, 1]))))


def facet_neighbours(mesh):
    d = mesh.dim
    owners = {}
    for c, cell in enumerate(mesh.cells):
        for k in range(d + 1):
            f = tuple(sorted(np.delete(cell, k)))
            owners.setdefault(f, []).append(c)
    return owners


@pytest.fixture(scope="module")
def disk():
    return build_cell_mesh(CellGeometry(2, "disk", 0.25), 0.05)


def test_disk_solid_area(disk):
    solid = disk.solid_mask()
    assert shoelace_area(disk, solid) == pytest.approx(math.pi * 0.0625, abs=2e-3)
    assert measure(disk, "solid") == pytest.approx(shoelace_area(disk, solid), rel=1e-12)
    assert measure(disk, "fluid") == pytest.approx(1 - math.pi * 0.0625, abs=2e-3)


def test_unit_measure(disk):
    assert measure(disk) == pytest.approx(1.0, abs=1e-12)
    m3 = build_cell_mesh(CellGeometry(3, "sphere", 0.25), 0.125)
    assert measure(m3) == pytest.approx(1.0, abs=1e-12)
    assert np.all(m3.volumes() > 0)
    assert np.all(disk.volumes() > 0)


def test_empty_inclusion():
    m = build_cell_mesh(CellGeometry(2, "disk", 0.0), 0.1)
    assert np.all(m.cell_tags == FLUID)
    assert len(m.interface_facets) == 0
    assert measure(m, "solid") == 0.0


def test_interface_facets_separate_phases(disk):
    owners = facet_neighbours(disk)
    assert len(disk.interface_facets) >= 8
    for f in disk.interface_facets:
        cs = owners[tuple(sorted(f))]
        assert len(cs) == 2
        tags = disk.cell_tags[cs]
        assert (tags[0] == FLUID) != (tags[1] == FLUID)


def test_interface_vertices_on_circle(disk):
    X = disk.vertices[np.unique(disk.interface_facets)]
    np.testing.assert_allclose(np.linalg.norm(X - 0.5, axis=1), 0.25, atol=1e-10)


@pytest.mark.parametrize("axis", [0, 1])
def test_mirror_symmetry(disk, axis):
    X = disk.vertices.copy()
    Y = X.copy()
    Y[:, axis] = 1.0 - Y[:, axis]
    dist, _ = cKDTree(X).query(Y)
    assert np.max(dist) <= 1e-12


def test_periodic_pairing_round_trip(disk):
    p = disk.pairing
    assert p is not None and len(p.slaves) > 0
    np.testing.assert_allclose(disk.vertices[p.slaves], disk.vertices[p.masters] + p.shifts, atol=1e-12)
    # masters are orbit representatives: never themselves slaves
    assert not np.any(np.isin(p.masters, p.slaves))


def test_resolution_error():
    with pytest.raises(GeometryResolutionError):
        build_cell_mesh(CellGeometry(2, "disk", 0.05), 0.5)


@pytest.mark.parametrize("r", [0.5, 0.6, -0.1])
def test_geometry_validation(r):
    with pytest.raises(ValidationError):
        CellGeometry(2, "disk", r)


def test_fine_mesh_half():
    m = build_fine_mesh([0, 0], [1, 1], CellGeometry(2, "disk", 0.25), 0.5, 0.05)
    assert m.n_inclusions == 4
    got = sorted(map(tuple, np.round(m.inclusion_centers, 12)))
    assert got == [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)]


def test_fine_mesh_third_volume():
    eps = 1.0 / 3.0
    m = build_fine_mesh([0, 0], [1, 1], CellGeometry(2, "disk", 0.25), eps, eps / 48)
    assert m.n_inclusions == 9
    target = 9 * eps ** 2 * math.pi * 0.0625
    assert shoelace_area(m, m.solid_mask()) == pytest.approx(target, rel=2e-3)
    for i in range(9):
        assert measure(m, i) == pytest.approx(target / 9, rel=2e-2)


def test_fine_mesh_boundary_cut_cells_are_fluid():
    # 1/eps not an integer: the partial cells along the upper faces carry no inclusion
    m = build_fine_mesh([0, 0], [1, 1], CellGeometry(2, "disk", 0.2), 0.4, 0.05)
    assert m.n_inclusions == 4
    assert np.all(m.inclusion_centers + 0.4 * 0.5 <= 1.0 + 1e-12)


def test_fine_mesh_no_cell_fits_warns():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        m = build_fine_mesh([0, 0], [0.5, 0.5], CellGeometry(2, "disk", 0.25), 1.0, 0.05)
    assert m.n_inclusions == 0
    assert any("no epsilon-cell" in str(x.message) for x in w)


def test_fine_epsilon_range():
    with pytest.raises(ArgumentError):
        build_fine_mesh([0, 0], [1, 1], CellGeometry(), 1.5, 0.1)


def test_measure_unknown_selector(disk):
    with pytest.raises(ArgumentError):
        measure(disk, "gas")


def test_box_mesh():
    m = build_box_mesh([0, 0, 0], [1, 2, 1], 0.25)
    assert measure(m) == pytest.approx(2.0, abs=1e-12)
    assert m.n_inclusions == 0 and not m.periodic


@pytest.mark.parametrize("dim,shape,h", [(2, "disk", 1 / 16), (2, "disk", 1 / 32), (2, "disk", 0.05),
                                         (3, "sphere", 0.1)])
def test_cells_tile_the_box(dim, shape, h):
    # no folded elements after interface projection: signed volumes sum to |Y|
    m = build_cell_mesh(CellGeometry(dim, shape, 0.25), h)
    vol = m.volumes()
    assert np.all(vol > 0)
    assert abs(vol.sum() - 1.0) <= 1e-12
