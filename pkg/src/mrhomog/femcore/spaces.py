"""Lagrange spaces of order 1 and 2 on simplicial meshes.

Node numbering: mesh vertices first, then (order 2) mesh edges.  Vector
spaces use blocked dofs: dof = component * n_nodes + node.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import ArgumentError, ConfigurationError
from ..geomesh import Mesh
from .quadrature import simplex_rule

LOCAL_EDGES = {
    2: [(0, 1), (1, 2), (0, 2)],
    3: [(0, 1), (1, 2), (0, 2), (0, 3), (1, 3), (2, 3)],
}


def tabulate(order: int, d: int, bary: np.ndarray):
    """Basis values (n, nloc) and barycentric derivatives (n, nloc, d+1)."""
    bary = np.atleast_2d(bary)
    n = len(bary)
    if order == 1:
        vals = bary.copy()
        dl = np.broadcast_to(np.eye(d + 1), (n, d + 1, d + 1)).copy()
        return vals, dl
    if order != 2:
        raise ConfigurationError(f"unsupported element order {order}")
    edges = LOCAL_EDGES[d]
    nloc = d + 1 + len(edges)
    vals = np.empty((n, nloc))
    dl = np.zeros((n, nloc, d + 1))
    for i in range(d + 1):
        li = bary[:, i]
        vals[:, i] = li * (2 * li - 1)
        dl[:, i, i] = 4 * li - 1
    for e, (i, j) in enumerate(edges):
        a = d + 1 + e
        vals[:, a] = 4 * bary[:, i] * bary[:, j]
        dl[:, a, i] = 4 * bary[:, j]
        dl[:, a, j] = 4 * bary[:, i]
    return vals, dl


def barycentric_gradients(mesh: Mesh, cells=None):
    """Gradients of barycentric coordinates (nc, d+1, d) and |det J| (nc,)."""
    cells = mesh.cells if cells is None else cells
    X = mesh.vertices[cells]
    J = np.transpose(X[:, 1:, :] - X[:, :1, :], (0, 2, 1))  # columns are edge vectors
    Jinv = np.linalg.inv(J)
    d = mesh.dim
    G = np.empty((len(cells), d + 1, d))
    G[:, 1:, :] = Jinv
    G[:, 0, :] = -Jinv.sum(axis=1)
    return G, np.abs(np.linalg.det(J))


@dataclass
class ElementData:
    weights: np.ndarray  # (nc, nq) physical quadrature weights
    phi: np.ndarray  # (nq, nloc)
    grad: np.ndarray  # (nc, nq, nloc, d)
    points: np.ndarray  # (nc, nq, d)
    bary: np.ndarray  # (nq, d+1)


class FESpace:
    """Scalar (ncomp=1) or vector (ncomp=d) Lagrange space."""

    def __init__(self, mesh: Mesh, order: int = 2, ncomp: int = 1):
        if order not in (1, 2):
            raise ConfigurationError(f"order must be 1 or 2, got {order}")
        if ncomp not in (1, mesh.dim):
            raise ConfigurationError("ncomp must be 1 or the mesh dimension")
        self.mesh = mesh
        self.order = order
        self.ncomp = ncomp
        d = mesh.dim
        nv = len(mesh.vertices)
        if order == 1:
            self.edges = np.zeros((0, 2), dtype=int)
            self.cell_nodes = mesh.cells.copy()
            self.nodes = mesh.vertices.copy()
        else:
            loc = LOCAL_EDGES[d]
            e = np.concatenate([mesh.cells[:, [a, b]] for a, b in loc])
            e.sort(axis=1)
            self.edges, inv = np.unique(e, axis=0, return_inverse=True)
            inv = inv.ravel().reshape(len(loc), -1).T
            self.cell_nodes = np.concatenate([mesh.cells, nv + inv], axis=1)
            self.nodes = np.concatenate([mesh.vertices, mesh.vertices[self.edges].mean(axis=1)])
            self._edge_keys = self.edges[:, 0].astype(np.int64) * nv + self.edges[:, 1]
        self.n_nodes = len(self.nodes)
        self.nloc = self.cell_nodes.shape[1]
        self.ndofs = self.ncomp * self.n_nodes
        self._edata = {}

    # ------------------------------------------------------------ numbering
    @property
    def dim(self) -> int:
        return self.mesh.dim

    def cell_dofs(self) -> np.ndarray:
        """(nc, ncomp*nloc) dof indices, component-major local ordering."""
        return np.concatenate([c * self.n_nodes + self.cell_nodes for c in range(self.ncomp)], axis=1)

    def edge_index(self, a, b) -> np.ndarray:
        a = np.asarray(a)
        b = np.asarray(b)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        key = lo.astype(np.int64) * len(self.mesh.vertices) + hi
        pos = np.searchsorted(self._edge_keys, key)
        pos = np.clip(pos, 0, len(self._edge_keys) - 1)
        if np.any(self._edge_keys[pos] != key):
            raise ArgumentError("edge not present in mesh")
        return pos

    def facet_nodes(self, facets: np.ndarray) -> np.ndarray:
        """Unique nodes lying on the given facets (vertices and edge nodes)."""
        facets = np.asarray(facets)
        if len(facets) == 0:
            return np.zeros(0, dtype=int)
        nodes = [facets.ravel()]
        if self.order == 2:
            nv = len(self.mesh.vertices)
            for a, b in itertools.combinations(range(facets.shape[1]), 2):
                nodes.append(nv + self.edge_index(facets[:, a], facets[:, b]))
        return np.unique(np.concatenate(nodes))

    def node_grid_keys(self) -> np.ndarray:
        """Integer half-grid coordinates of every node (unsnapped grid position)."""
        gi = self.mesh.grid_index
        if gi is None:
            raise ArgumentError("mesh has no background grid index")
        keys = 2 * gi
        if self.order == 2:
            keys = np.concatenate([keys, gi[self.edges[:, 0]] + gi[self.edges[:, 1]]])
        return keys

    def periodic_master(self) -> np.ndarray:
        """Map node -> canonical periodic image (identity on non-periodic meshes)."""
        if not self.mesh.periodic:
            return np.arange(self.n_nodes)
        keys = self.node_grid_keys()
        n2 = 2 * np.asarray(self.mesh.grid_shape)
        wrapped = keys % n2
        shape = tuple(n2 + 1)
        flat = np.ravel_multi_index(tuple(keys.T), shape)
        wflat = np.ravel_multi_index(tuple(wrapped.T), shape)
        canonical = np.all(keys < n2, axis=1)
        table = np.full(int(np.prod(shape)), -1, dtype=np.int64)
        table[flat[canonical]] = np.nonzero(canonical)[0]
        master = table[wflat]
        if np.any(master < 0):
            raise ArgumentError("periodic node pairing incomplete; mesh faces do not match")
        return master

    def box_face_nodes(self, axis: int, side: int, tol: float = 1e-12) -> np.ndarray:
        val = self.mesh.box_lo[axis] if side == 0 else self.mesh.box_hi[axis]
        return np.nonzero(np.abs(self.nodes[:, axis] - val) < tol)[0]

    def boundary_nodes(self) -> np.ndarray:
        out = [self.box_face_nodes(k, s) for k in range(self.dim) for s in (0, 1)]
        return np.unique(np.concatenate(out))

    def cells_nodes(self, mask: np.ndarray) -> np.ndarray:
        return np.unique(self.cell_nodes[mask])

    # ---------------------------------------------------------- quadrature
    def element_data(self, degree: int | None = None) -> ElementData:
        if degree is None:
            degree = 2 * self.order + 1
        if degree not in self._edata:
            bary, w = simplex_rule(self.dim, degree)
            G, det = barycentric_gradients(self.mesh)
            vals, dl = tabulate(self.order, self.dim, bary)
            grad = np.einsum("qak,ekd->eqad", dl, G)
            X = self.mesh.vertices[self.mesh.cells]
            pts = np.einsum("qk,ekd->eqd", bary, X)
            self._edata[degree] = ElementData(weights=det[:, None] * w[None, :], phi=vals, grad=grad,
                                              points=pts, bary=bary)
        return self._edata[degree]

    # ----------------------------------------------------------- fields
    def split(self, coef: np.ndarray) -> np.ndarray:
        """Coefficient vector -> (n_nodes, ncomp)."""
        return np.asarray(coef).reshape(self.ncomp, self.n_nodes).T

    def join(self, nodal: np.ndarray) -> np.ndarray:
        nodal = np.asarray(nodal, dtype=float).reshape(self.n_nodes, self.ncomp)
        return nodal.T.ravel().copy()

    def interpolate(self, f) -> np.ndarray:
        vals = np.asarray(f(self.nodes), dtype=float)
        if self.ncomp == 1:
            vals = vals.reshape(self.n_nodes, 1)
        return self.join(vals)

    def evaluate(self, coef: np.ndarray, degree: int | None = None):
        """Values (nc, nq, ncomp) and gradients (nc, nq, ncomp, d) at quadrature points."""
        ed = self.element_data(degree)
        U = self.split(coef)[self.cell_nodes]  # (nc, nloc, ncomp)
        vals = np.einsum("qa,eac->eqc", ed.phi, U)
        grads = np.einsum("eqad,eac->eqcd", ed.grad, U)
        return vals, grads


class PointLocator:
    """Find containing simplex and barycentric coordinates of query points."""

    def __init__(self, mesh: Mesh, k: int = 16):
        self.mesh = mesh
        self.tree = cKDTree(mesh.centroids())
        self.k = min(k, len(mesh.cells))
        X = mesh.vertices[mesh.cells]
        self.v0 = X[:, 0, :]
        J = np.transpose(X[:, 1:, :] - X[:, :1, :], (0, 2, 1))
        self.Jinv = np.linalg.inv(J)

    def _bary(self, pts, cells):
        r = np.einsum("nij,nj->ni", self.Jinv[cells], pts - self.v0[cells])
        return np.concatenate([1.0 - r.sum(axis=1, keepdims=True), r], axis=1)

    def locate(self, pts: np.ndarray, chunk: int = 200000):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        cells = np.empty(len(pts), dtype=int)
        bary = np.empty((len(pts), pts.shape[1] + 1))
        for s in range(0, len(pts), chunk):
            P = pts[s:s + chunk]
            _, cand = self.tree.query(P, k=self.k)
            cand = np.atleast_2d(cand).reshape(len(P), -1)
            best = np.full(len(P), -np.inf)
            bc = np.zeros(len(P), dtype=int)
            bb = np.zeros((len(P), pts.shape[1] + 1))
            for j in range(cand.shape[1]):
                lam = self._bary(P, cand[:, j])
                m = lam.min(axis=1)
                better = m > best + 1e-14
                best = np.where(better, m, best)
                bc = np.where(better, cand[:, j], bc)
                bb[better] = lam[better]
                if np.all(best >= -1e-12):
                    break
            cells[s:s + chunk] = bc
            bary[s:s + chunk] = bb
        return cells, bary


def point_values(space: FESpace, coef: np.ndarray, cells: np.ndarray, bary: np.ndarray, gradients=False):
    """Evaluate a field at located points; returns values (n, ncomp) [and gradients (n, ncomp, d)]."""
    vals_b, dl = tabulate(space.order, space.dim, bary)
    U = space.split(coef)[space.cell_nodes[cells]]  # (n, nloc, ncomp)
    vals = np.einsum("na,nac->nc", vals_b, U)
    if not gradients:
        return vals
    G, _ = barycentric_gradients(space.mesh, space.mesh.cells[cells])
    grad_basis = np.einsum("nak,nkd->nad", dl, G)
    grads = np.einsum("nad,nac->ncd", grad_basis, U)
    return vals, grads


def cell_weights(mesh: Mesh, which) -> np.ndarray:
    """Per-cell 0/1 weights for "all", "fluid", "solid" or an inclusion index."""
    if which is None or (isinstance(which, str) and which == "all"):
        return np.ones(len(mesh.cells))
    if isinstance(which, str) and which == "fluid":
        return mesh.fluid_mask().astype(float)
    if isinstance(which, str) and which == "solid":
        return mesh.solid_mask().astype(float)
    if isinstance(which, (int, np.integer)):
        return (mesh.cell_tags == which).astype(float)
    if isinstance(which, str):
        raise ArgumentError(f"unknown cell selector {which!r}; expected all, fluid, solid or an inclusion index")
    arr = np.asarray(which, dtype=float)
    if arr.shape != (len(mesh.cells),):
        raise ArgumentError(f"unknown cell selector {which!r}")
    return arr

