"""Algebraic constraints as a prolongation: full = P @ reduced + offset.

Supported per-node rules: periodic identification, Dirichlet (all or some
components), rigid-body motion of an inclusion (translation + rotation or
translation only), and a prescribed normal component with free tangential
components.  The reduced system of a(u, v) = f(v) is P^T A P z = P^T (f - A offset).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import ConfigurationError
from .spaces import FESpace


@dataclass
class Constraint:
    P: sp.csr_matrix
    offset: np.ndarray
    rigid_slices: dict = field(default_factory=dict)  # inclusion -> slice of reduced dofs
    rigid_mode: str = "full"

    @property
    def n_full(self) -> int:
        return self.P.shape[0]

    @property
    def n_reduced(self) -> int:
        return self.P.shape[1]

    def expand(self, z: np.ndarray) -> np.ndarray:
        return self.P @ z + self.offset

    def restrict(self, x: np.ndarray) -> np.ndarray:
        """Least-squares reduced coordinates of a full vector satisfying the constraint."""
        PtP = (self.P.T @ self.P).tocsc()
        from scipy.sparse.linalg import spsolve
        return np.atleast_1d(spsolve(PtP, self.P.T @ (x - self.offset)))

    def matrix(self, A, left: "Constraint | None" = None) -> sp.csr_matrix:
        L = self if left is None else left
        return (L.P.T @ A @ self.P).tocsr()

    def rhs(self, b: np.ndarray, A=None) -> np.ndarray:
        r = b if A is None else b - A @ self.offset
        return self.P.T @ r


def _tangent_basis(n: np.ndarray) -> np.ndarray:
    """Orthonormal tangents (m, d-1, d) for unit normals n (m, d)."""
    m, d = n.shape
    if d == 2:
        return np.stack([-n[:, 1], n[:, 0]], axis=1)[:, None, :]
    # pick the coordinate axis least aligned with n, deterministic
    ax = np.argmin(np.abs(n), axis=1)
    e = np.zeros_like(n)
    e[np.arange(m), ax] = 1.0
    t1 = e - np.sum(e * n, axis=1, keepdims=True) * n
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2], axis=1)


def rigid_modes(x: np.ndarray, G: np.ndarray, mode: str = "full") -> np.ndarray:
    """Rigid velocity basis evaluated at points x: (n, nmodes, d)."""
    n, d = x.shape
    r = x - G
    modes = [np.broadcast_to(np.eye(d)[k], (n, d)) for k in range(d)]
    if mode == "full":
        if d == 2:
            modes.append(np.stack([-r[:, 1], r[:, 0]], axis=1))
        else:
            for k in range(3):
                w = np.zeros(3)
                w[k] = 1.0
                modes.append(np.cross(np.broadcast_to(w, (n, 3)), r))
    elif mode != "translation":
        raise ConfigurationError(f"unknown rigid mode {mode!r}")
    return np.stack(modes, axis=1)


class ConstraintBuilder:
    """Collect node rules, then build a ``Constraint``."""

    def __init__(self, space: FESpace):
        self.space = space
        self.nn = space.n_nodes
        self.m = space.ncomp
        self.master = np.arange(self.nn)
        self.fixed = np.zeros((self.nn, self.m), dtype=bool)  # component eliminated (value from offset)
        self.rigid = np.full(self.nn, -1, dtype=int)
        self.rigid_G = {}
        self.normal = {}  # node -> (normal, value)
        self.offset = np.zeros(space.ndofs)
        self.rigid_mode = "full"

    def periodic(self):
        self.master = self.space.periodic_master()
        return self

    def dirichlet(self, nodes, components=None, values=None):
        comps = range(self.m) if components is None else components
        nodes = np.asarray(nodes, dtype=int)
        for c in comps:
            self.fixed[nodes, c] = True
            if values is not None:
                v = np.asarray(values, dtype=float)
                self.offset[c * self.nn + nodes] = v if v.ndim == 0 else v[:, c] if v.ndim == 2 else v
        return self

    def box_normal_trace_zero(self):
        """Eliminate the face-normal component on every box face."""
        for k in range(self.space.dim):
            for s in (0, 1):
                self.fixed[self.space.box_face_nodes(k, s), k] = True
        return self

    def rigid_body(self, nodes, inclusion: int, G, mode="full", lift=None):
        """Nodes move rigidly with inclusion; ``lift`` (len(nodes), d) is added on top."""
        nodes = np.asarray(nodes, dtype=int)
        if np.any((self.rigid[nodes] >= 0) & (self.rigid[nodes] != inclusion)):
            raise ConfigurationError("node assigned to two inclusions")
        self.rigid[nodes] = inclusion
        self.rigid_G[inclusion] = np.asarray(G, dtype=float)
        self.rigid_mode = mode
        if lift is not None:
            lift = np.asarray(lift, dtype=float)
            for c in range(self.m):
                self.offset[c * self.nn + nodes] = lift[:, c]
        return self

    def normal_component(self, nodes, normals, values):
        """u . n = value at nodes, tangential components free."""
        nodes = np.asarray(nodes, dtype=int)
        normals = np.asarray(normals, dtype=float)
        values = np.asarray(values, dtype=float)
        for c in range(self.m):
            self.offset[c * self.nn + nodes] = values * normals[:, c]
        self._normal_nodes = nodes
        self._normal_vecs = normals
        return self

    def build(self) -> Constraint:
        sp_ = self.space
        nn, m, d = self.nn, self.m, sp_.dim
        master = self.master
        normal_nodes = getattr(self, "_normal_nodes", np.zeros(0, dtype=int))
        normal_vecs = getattr(self, "_normal_vecs", np.zeros((0, d)))
        is_rigid = self.rigid >= 0
        is_normal = np.zeros(nn, bool)
        is_normal[normal_nodes] = True
        special = is_rigid | is_normal
        if np.any(special & (master != np.arange(nn))) or np.any(special[master] & (master != np.arange(nn))):
            raise ConfigurationError("rigid/normal-trace nodes may not lie on periodic faces")
        if np.any(special[:, None] & self.fixed):
            raise ConfigurationError("rigid/normal-trace nodes overlap a Dirichlet boundary")
        if np.any(is_rigid & is_normal):
            raise ConfigurationError("node is both rigid and normal-trace constrained")
        # fixed components must agree across periodic images
        fixed = self.fixed.copy()
        np.logical_or.at(fixed, master, self.fixed)
        fixed = fixed[master]
        rows, cols, vals = [], [], []
        ncol = 0
        # plain free dofs, numbered per canonical node, component-major
        canon = (master == np.arange(nn)) & ~special
        for c in range(m):
            free = canon & ~fixed[:, c]
            idx = np.full(nn, -1, dtype=np.int64)
            idx[free] = ncol + np.arange(int(free.sum()))
            ncol += int(free.sum())
            target = idx[master]
            ok = (target >= 0) & ~special
            r = np.nonzero(ok)[0]
            rows.append(c * nn + r)
            cols.append(target[ok])
            vals.append(np.ones(len(r)))
        # normal-trace nodes: tangential dofs
        if len(normal_nodes):
            T = _tangent_basis(normal_vecs)
            for t in range(d - 1):
                cidx = ncol + np.arange(len(normal_nodes))
                ncol += len(normal_nodes)
                for c in range(m):
                    rows.append(c * nn + normal_nodes)
                    cols.append(cidx)
                    vals.append(T[:, t, c])
        # rigid inclusions
        rigid_slices = {}
        for k in sorted(self.rigid_G):
            nodes = np.nonzero(self.rigid == k)[0]
            R = rigid_modes(sp_.nodes[nodes], self.rigid_G[k], self.rigid_mode)
            nm = R.shape[1]
            rigid_slices[k] = slice(ncol, ncol + nm)
            for j in range(nm):
                for c in range(m):
                    v = R[:, j, c]
                    nz = v != 0
                    rows.append(c * nn + nodes[nz])
                    cols.append(np.full(int(nz.sum()), ncol + j))
                    vals.append(v[nz])
            ncol += nm
        rows = np.concatenate(rows) if rows else np.zeros(0, int)
        cols = np.concatenate(cols) if cols else np.zeros(0, int)
        vals = np.concatenate(vals) if vals else np.zeros(0)
        P = sp.csr_matrix((vals, (rows, cols)), shape=(sp_.ndofs, ncol))
        offset = self.offset.copy()
        # offsets live only on eliminated/special dofs; copy through periodic images
        for c in range(m):
            sl = slice(c * nn, (c + 1) * nn)
            oc = offset[sl]
            offset[sl] = np.where(special | fixed[:, c], oc[master], 0.0)
        return Constraint(P=P, offset=offset, rigid_slices=rigid_slices, rigid_mode=self.rigid_mode)


def pressure_constraint(p_space: FESpace, drop_solid_only=True, periodic=False) -> Constraint:
    """Pressure prolongation: periodic identification and removal of solid-only dofs."""
    b = ConstraintBuilder(p_space)
    if periodic:
        b.periodic()
    if drop_solid_only:
        mesh = p_space.mesh
        touches_fluid = np.zeros(p_space.n_nodes, bool)
        touches_fluid[np.unique(p_space.cell_nodes[mesh.fluid_mask()])] = True
        b.dirichlet(np.nonzero(~touches_fluid)[0])
    return b.build()
