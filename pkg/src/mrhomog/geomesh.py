"""Interface-fitted simplicial meshes of the unit cell, the macro box and
the epsilon-periodic perforated domain.

Meshes come from a structured background grid split into simplices with
an alternating (reflected Kuhn) pattern.  With an even number of grid
cells per period the pattern is invariant under every symmetry of the
cube.  Vertices close to an inclusion boundary are projected onto it
along the ray from the inclusion center, so interface facets lie on the
analytic surface and the centered-inclusion mesh keeps its mirror symmetry.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, GeometryResolutionError, ValidationError

FLUID = -1
MIN_INTERFACE_FACETS = {2: 8, 3: 32}


@dataclass
class CellGeometry:
    """Inclusion geometry inside the unit cell Y = (0,1)^d.

    ``radius`` is a scalar for disks/spheres or a sequence of semi-axes for
    ellipses/ellipsoids.  A zero radius means no inclusion.
    """

    dim: int = 2
    shape: str = "disk"
    radius: float | tuple = 0.25
    center: tuple | None = None

    def __post_init__(self):
        self.validate()

    @property
    def center_array(self) -> np.ndarray:
        if self.center is None:
            return np.full(self.dim, 0.5)
        return np.asarray(self.center, dtype=float)

    @property
    def semi_axes(self) -> np.ndarray:
        r = np.atleast_1d(np.asarray(self.radius, dtype=float))
        if r.size == 1:
            r = np.full(self.dim, float(r[0]))
        return r

    @property
    def empty(self) -> bool:
        return bool(np.all(self.semi_axes == 0.0))

    def validate(self):
        if self.dim not in (2, 3):
            raise ValidationError(f"dim must be 2 or 3, got {self.dim}")
        shapes = {2: ("disk", "ellipse"), 3: ("sphere", "ellipsoid")}
        if self.shape not in shapes[self.dim]:
            raise ValidationError(f"shape {self.shape!r} not allowed in {self.dim}D; use one of {shapes[self.dim]}")
        a = self.semi_axes
        c = self.center_array
        if a.size != self.dim or c.size != self.dim:
            raise ValidationError("radius/center length must match dim")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(c))):
            raise ValidationError("geometry values must be finite")
        if np.any(a < 0):
            raise ValidationError("radius must be >= 0")
        if self.shape in ("disk", "sphere") and np.ptp(a) != 0:
            raise ValidationError(f"{self.shape} needs a single radius")
        if np.any(a > 0) and np.any(a == 0):
            raise ValidationError("semi-axes must be all positive or all zero")
        if not self.empty and (np.any(c - a <= 0.0) or np.any(c + a >= 1.0)):
            raise ValidationError(
                "inclusion must lie strictly inside the open unit cell "
                f"(center {c.tolist()}, semi-axes {a.tolist()}): the interface may not touch the cell boundary")

    def volume(self) -> float:
        a = self.semi_axes
        if self.dim == 2:
            return float(math.pi * a[0] * a[1])
        return float(4.0 / 3.0 * math.pi * a[0] * a[1] * a[2])


@dataclass
class PeriodicPairing:
    """Slave boundary vertex -> master vertex (orbit representative)."""

    slaves: np.ndarray
    masters: np.ndarray
    shifts: np.ndarray  # slave = master + shift (integer multiples of the period)
    master_of: np.ndarray  # full map, identity for non-slave vertices


@dataclass(eq=False)
class Mesh:
    vertices: np.ndarray
    cells: np.ndarray
    cell_tags: np.ndarray
    inclusion_centers: np.ndarray
    inclusion_axes: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray
    periodic: bool = False
    grid_shape: tuple = ()
    interface_facets: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), int))
    interface_tags: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    boundary_facets: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), int))
    boundary_tags: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), int))
    pairing: PeriodicPairing | None = None
    epsilon: float | None = None
    grid_index: np.ndarray | None = None  # background-grid integer coordinates per vertex

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_inclusions(self) -> int:
        return len(self.inclusion_centers)

    @property
    def boundary_kind(self) -> str:
        return "PERIODIC_FACE" if self.periodic else "OUTER_BOUNDARY"

    def volumes(self) -> np.ndarray:
        X = self.vertices[self.cells]
        J = X[:, 1:, :] - X[:, :1, :]
        return np.linalg.det(J) / math.factorial(self.dim)

    def solid_mask(self, inclusion: int | None = None) -> np.ndarray:
        if inclusion is None:
            return self.cell_tags != FLUID
        return self.cell_tags == inclusion

    def fluid_mask(self) -> np.ndarray:
        return self.cell_tags == FLUID

    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    def level_set(self, x: np.ndarray, inclusion: np.ndarray | int) -> np.ndarray:
        """F(x) - 1 for the given inclusion(s); negative inside."""
        c = self.inclusion_centers[inclusion]
        a = self.inclusion_axes[inclusion]
        return np.sum(((x - c) / a) ** 2, axis=-1) - 1.0

    def interface_normal(self, x: np.ndarray, inclusion: np.ndarray | int) -> np.ndarray:
        """Unit outward normal of the inclusion at the radial projection of x."""
        c = self.inclusion_centers[inclusion]
        a = self.inclusion_axes[inclusion]
        g = (x - c) / a ** 2
        return g / np.linalg.norm(g, axis=-1, keepdims=True)


# ---------------------------------------------------------------- grid pieces

def _kuhn_local(d: int) -> np.ndarray:
    """Kuhn simplices of the unit hypercube as corner bit-tuples, (d!, d+1, d)."""
    out = []
    for perm in itertools.permutations(range(d)):
        path = [np.zeros(d, int)]
        for ax in perm:
            nxt = path[-1].copy()
            nxt[ax] = 1
            path.append(nxt)
        out.append(path)
    return np.array(out)


def _structured_simplices(shape: tuple) -> np.ndarray:
    """Reflected Kuhn triangulation of a grid with ``shape`` cells per axis."""
    d = len(shape)
    kuhn = _kuhn_local(d)
    nodes_shape = tuple(n + 1 for n in shape)
    idx = np.stack(np.meshgrid(*[np.arange(n) for n in shape], indexing="ij"), axis=-1).reshape(-1, d)
    flips = idx % 2
    cells = []
    for simplex in kuhn:
        # corner bits xor per-cube flips
        bits = simplex[None, :, :] ^ flips[:, None, :]
        corner = idx[:, None, :] + bits
        gidx = np.ravel_multi_index(tuple(corner[..., k] for k in range(d)), nodes_shape)
        cells.append(gidx)
    cells = np.stack(cells, axis=1).reshape(-1, d + 1)
    return cells


def _grid_vertices(lo, hi, shape) -> tuple[np.ndarray, np.ndarray]:
    d = len(shape)
    axes = [lo[k] + (hi[k] - lo[k]) * np.arange(shape[k] + 1) / shape[k] for k in range(d)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    ints = np.stack(np.meshgrid(*[np.arange(n + 1) for n in shape], indexing="ij"), axis=-1).reshape(-1, d)
    return pts, ints


def _orient(vertices, cells) -> np.ndarray:
    X = vertices[cells]
    det = np.linalg.det(X[:, 1:, :] - X[:, :1, :])
    cells = cells.copy()
    neg = det < 0
    cells[neg, 0], cells[neg, 1] = cells[neg, 1].copy(), cells[neg, 0].copy()
    return cells


def _edges(cells: np.ndarray) -> np.ndarray:
    d1 = cells.shape[1]
    pairs = list(itertools.combinations(range(d1), 2))
    e = np.concatenate([cells[:, [a, b]] for a, b in pairs])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def _facets(cells: np.ndarray):
    """All facets (sorted vertex tuples) with owning cells."""
    d1 = cells.shape[1]
    local = [tuple(k for k in range(d1) if k != i) for i in range(d1)]
    f = np.concatenate([cells[:, list(l)] for l in local])
    owner = np.tile(np.arange(len(cells)), d1)
    f.sort(axis=1)
    uniq, inv, counts = np.unique(f, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    return uniq, inv, counts, owner


# ------------------------------------------------------------------ snapping

def _snap(vertices, vert_incl, centers, axes, h):
    """Project near-interface vertices onto the inclusion surfaces.

    For each grid edge with a strict sign change of the level set the
    endpoint with the smaller projection distance is moved; on a tie the
    interior endpoint is moved.  Returns new vertices and the level set.
    """
    V = vertices.copy()
    phi = np.full(len(V), np.inf)
    has = vert_incl >= 0
    dist = np.full(len(V), np.inf)
    target = np.full_like(V, np.nan)
    if not np.any(has):
        return V, phi, dist, target
    c = centers[vert_incl[has]]
    a = axes[vert_incl[has]]
    F = np.sum(((V[has] - c) / a) ** 2, axis=1)
    phi[has] = F - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = c + (V[has] - c) / np.sqrt(F)[:, None]
    dist[has] = np.linalg.norm(proj - V[has], axis=1)
    target[has] = proj
    return V, phi, dist, target


def _apply_snapping(V, phi, dist, target, edges, h):
    pa, pb = phi[edges[:, 0]], phi[edges[:, 1]]
    cross = ((pa < 0) & (pb > 0)) | ((pa > 0) & (pb < 0))
    e = edges[cross]
    if len(e) == 0:
        return V, phi, np.zeros(len(V), bool)
    da, db = dist[e[:, 0]], dist[e[:, 1]]
    tie = np.abs(da - db) <= 1e-10 * h
    inside_a = phi[e[:, 0]] < 0
    pick_a = np.where(tie, inside_a, da < db)
    chosen = np.where(pick_a, e[:, 0], e[:, 1])
    snapped = np.zeros(len(V), bool)
    snapped[chosen] = True
    if not np.all(np.isfinite(target[snapped])):
        raise GeometryResolutionError("cannot project a vertex located at an inclusion center; refine h")
    V = V.copy()
    V[snapped] = target[snapped]
    phi = phi.copy()
    phi[snapped] = 0.0
    return V, phi, snapped


def _signed_volumes(V, cells):
    return np.linalg.det(V[cells][:, 1:, :] - V[cells][:, :1, :])


def _untangle(V0, V, phi0, phi, snapped, cells, h):
    """Undo snaps that fold elements (all vertices on a curved interface can flip a sliver)."""
    s0 = np.sign(_signed_volumes(V0, cells))
    tiny = 1e-9 * h ** V.shape[1]
    for _ in range(50):
        vol = _signed_volumes(V, cells)
        bad = np.where(vol * s0 <= tiny)[0]
        if len(bad) == 0:
            return V, phi, snapped
        revert = set()
        for c in bad:
            best = None
            for v in cells[c]:
                if not snapped[v]:
                    continue
                W = V[cells[c]].copy()
                W[list(cells[c]).index(v)] = V0[v]
                ok = np.linalg.det(W[1:] - W[:1]) * s0[c] > tiny
                move = float(np.linalg.norm(V[v] - V0[v]))
                if ok and (best is None or move < best[0]):
                    best = (move, v)
            if best is None:
                raise GeometryResolutionError("interface projection folds an element; change h")
            revert.add(best[1])
        idx = np.array(sorted(revert))
        V = V.copy()
        phi = phi.copy()
        snapped = snapped.copy()
        V[idx] = V0[idx]
        phi[idx] = phi0[idx]
        snapped[idx] = False
    raise GeometryResolutionError("interface projection folds elements; change h")


def _build(lo, hi, shape, centers, axes, vert_incl_fn, periodic, epsilon=None) -> Mesh:
    d = len(shape)
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    V, ints = _grid_vertices(lo, hi, shape)
    cells = _structured_simplices(shape)
    hgrid = float(np.min((hi - lo) / np.asarray(shape)))
    centers = np.asarray(centers, float).reshape(-1, d)
    axes = np.asarray(axes, float).reshape(-1, d)
    tags = np.full(len(cells), FLUID, dtype=int)
    if len(centers):
        vert_incl = vert_incl_fn(V)
        V0 = V
        V, phi0, dist, target = _snap(V, vert_incl, centers, axes, hgrid)
        edges = _edges(cells)
        V, phi, snapped = _apply_snapping(V, phi0, dist, target, edges, hgrid)
        V, phi, snapped = _untangle(V0, V, phi0, phi, snapped, cells, hgrid)
        # tag by the inclusion owning the cell centroid
        cent = V[cells].mean(axis=1)
        cinc = vert_incl_fn(cent)
        ok = cinc >= 0
        cc = np.clip(cinc, 0, None)
        Fv = np.sum(((V[cells] - centers[cc][:, None, :]) / axes[cc][:, None, :]) ** 2, axis=2) - 1.0
        Fv[np.abs(Fv) < 1e-12] = 0.0
        Fv[snapped[cells]] = 0.0
        Fc = np.sum(((cent - centers[cc]) / axes[cc]) ** 2, axis=1) - 1.0
        allnonpos = np.all(Fv <= 0.0, axis=1)
        allzero = np.all(Fv == 0.0, axis=1)
        solid = ok & allnonpos & (~allzero | (Fc < 0))
        tags[solid] = cinc[solid]
    cells = _orient(V, cells)
    vol = np.linalg.det(V[cells][:, 1:, :] - V[cells][:, :1, :]) / math.factorial(d)
    vmin = 1e-6 * hgrid ** d / math.factorial(d)
    if np.any(vol <= vmin):
        raise GeometryResolutionError(
            f"degenerate simplex after interface projection (min volume {vol.min():.3e}); change h")

    mesh = Mesh(vertices=V, cells=cells, cell_tags=tags, inclusion_centers=centers,
                inclusion_axes=axes, box_lo=lo, box_hi=hi, periodic=periodic,
                grid_shape=tuple(shape), epsilon=epsilon, grid_index=ints)
    _tag_facets(mesh)
    if periodic:
        mesh.pairing = _pairing(V, ints, shape, hi - lo)
    for k in range(len(centers)):
        nf = int(np.sum(mesh.interface_tags == k))
        if nf < MIN_INTERFACE_FACETS[d]:
            raise GeometryResolutionError(
                f"inclusion {k} resolved by {nf} interface facets (< {MIN_INTERFACE_FACETS[d]}); decrease h")
    return mesh


def _tag_facets(mesh: Mesh):
    uniq, inv, counts, owner = _facets(mesh.cells)
    nf = len(uniq)
    # up to two owners per facet
    first = np.full(nf, -1)
    second = np.full(nf, -1)
    order = np.argsort(inv, kind="stable")
    inv_s = inv[order]
    own_s = owner[order]
    start = np.searchsorted(inv_s, np.arange(nf))
    first[:] = own_s[start]
    two = counts == 2
    second[two] = own_s[start[two] + 1]
    t1 = mesh.cell_tags[first]
    t2 = np.where(two, mesh.cell_tags[np.clip(second, 0, None)], FLUID)
    iface = two & (t1 != t2)
    mesh.interface_facets = uniq[iface]
    mesh.interface_tags = np.maximum(t1[iface], t2[iface])
    bnd = uniq[counts == 1]
    X = mesh.vertices[bnd]
    tags = np.zeros((len(bnd), 2), dtype=int)
    for k in range(mesh.dim):
        on_lo = np.all(np.abs(X[:, :, k] - mesh.box_lo[k]) < 1e-12, axis=1)
        on_hi = np.all(np.abs(X[:, :, k] - mesh.box_hi[k]) < 1e-12, axis=1)
        tags[on_lo] = (k, 0)
        tags[on_hi] = (k, 1)
    mesh.boundary_facets = bnd
    mesh.boundary_tags = tags


def _pairing(V, ints, shape, period) -> PeriodicPairing:
    shape = np.asarray(shape)
    wrapped = ints % shape
    nodes_shape = tuple(shape + 1)
    master = np.ravel_multi_index(tuple(wrapped[:, k] for k in range(len(shape))), nodes_shape)
    slaves = np.nonzero(master != np.arange(len(V)))[0]
    shifts = (ints[slaves] - wrapped[slaves]) // shape
    return PeriodicPairing(slaves=slaves, masters=master[slaves], shifts=shifts * period,
                           master_of=master)


def even_divisions(length: float, h: float) -> int:
    if h <= 0:
        raise ArgumentError("h must be positive")
    n = int(math.ceil(length / h - 1e-9))
    return max(2, n + (n % 2))


def build_cell_mesh(geom: CellGeometry, h: float) -> Mesh:
    """Periodic, interface-fitted mesh of the unit cell."""
    geom.validate()
    N = even_divisions(1.0, h)
    d = geom.dim
    shape = (N,) * d
    if geom.empty:
        centers = np.zeros((0, d))
        axes = np.zeros((0, d))
    else:
        centers = geom.center_array[None, :]
        axes = geom.semi_axes[None, :]

    def vert_incl(x):
        return np.zeros(len(x), dtype=int)

    return _build(np.zeros(d), np.ones(d), shape, centers, axes, vert_incl, periodic=True)


def build_box_mesh(lo, hi, h: float) -> Mesh:
    """Plain (inclusion-free) mesh of an axis-aligned box."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    shape = tuple(even_divisions(hi[k] - lo[k], h) for k in range(len(lo)))
    d = len(lo)
    return _build(lo, hi, shape, np.zeros((0, d)), np.zeros((0, d)), None, periodic=False)


def lattice_cells(lo, hi, epsilon: float) -> np.ndarray:
    """Integer indices i with eps*(i + Y) contained in the closed box."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    tol = 1e-9
    ranges = []
    for k in range(len(lo)):
        a = int(math.ceil(lo[k] / epsilon - tol))
        b = int(math.floor(hi[k] / epsilon + tol)) - 1
        ranges.append(np.arange(a, b + 1))
    if any(len(r) == 0 for r in ranges):
        return np.zeros((0, len(lo)), dtype=int)
    grid = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, len(lo))
    # lexicographic with the last axis fastest -> reorder so axis 0 is fastest
    order = np.lexsort(tuple(grid[:, k] for k in range(len(lo))))
    return grid[order]


def build_fine_mesh(lo, hi, geom: CellGeometry, epsilon: float, h: float) -> Mesh:
    """Mesh of the box with inclusions in every lattice cell inside it.

    The grid step is epsilon / n with n even, so each epsilon-cell carries
    the same local pattern as a unit-cell mesh with N = n.
    """
    geom.validate()
    if not (0 < epsilon <= 1):
        raise ArgumentError(f"epsilon must lie in (0, 1], got {epsilon}")
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    d = geom.dim
    if len(lo) != d:
        raise ArgumentError("box dimension does not match geometry")
    n = even_divisions(epsilon, h)
    step = epsilon / n
    shape = []
    for k in range(d):
        m = (hi[k] - lo[k]) / step
        mk = int(round(m))
        if abs(m - mk) > 1e-9:
            mk = even_divisions(hi[k] - lo[k], step)
        shape.append(max(mk, 2))
    lat = lattice_cells(lo, hi, epsilon)
    if geom.empty or len(lat) == 0:
        if len(lat) == 0 and not geom.empty:
            warnings.warn("no epsilon-cell fits inside the domain; mesh is pure fluid", RuntimeWarning)
        lat = np.zeros((0, d), dtype=int)
    centers = epsilon * (geom.center_array[None, :] + lat)
    axes = np.tile(epsilon * geom.semi_axes, (len(lat), 1))
    if len(lat):
        base = lat.min(axis=0)
        table = np.full(tuple(lat.max(axis=0) - base + 1), -1, dtype=int)
        table[tuple((lat - base).T)] = np.arange(len(lat))
    else:
        base = np.zeros(d, int)
        table = np.full((1,) * d, -1, dtype=int)

    def vert_incl(x):
        ij = np.floor(x / epsilon + 1e-12).astype(int) - base
        inside = np.all((ij >= 0) & (ij < np.array(table.shape)), axis=1)
        out = np.full(len(x), -1, dtype=int)
        out[inside] = table[tuple(ij[inside].T)]
        return out

    return _build(lo, hi, tuple(shape), centers, axes, vert_incl, periodic=False, epsilon=epsilon)


_SELECTORS = ("all", "fluid", "solid")


def measure(mesh: Mesh, selector="all") -> float:
    """Total measure of the selected simplices.

    selector: "all", "fluid", "solid", an inclusion index, or ("solid", i).
    """
    vol = mesh.volumes()
    if isinstance(selector, tuple) and len(selector) == 2 and selector[0] == "solid":
        selector = selector[1]
    if isinstance(selector, (int, np.integer)) and not isinstance(selector, bool):
        if selector < 0 or selector >= mesh.n_inclusions:
            raise ArgumentError(f"unknown inclusion index {selector}")
        mask = mesh.cell_tags == selector
    elif selector == "all":
        mask = np.ones(len(vol), bool)
    elif selector == "fluid":
        mask = mesh.fluid_mask()
    elif selector == "solid":
        mask = mesh.solid_mask()
    else:
        raise ArgumentError(f"unknown tag selector {selector!r}; expected one of {_SELECTORS} or an inclusion index")
    return float(math.fsum(vol[mask]))
