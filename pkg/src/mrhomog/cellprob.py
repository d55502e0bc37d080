"""Periodic cell problems and corrector reconstruction.

Stokes cell problem: find periodic omega^{ij}, rigid on Y_s with
D(omega^{ij}) = E^{ij} := sym(e_i x e_j) there, and pi^{ij}, such that
    int_{Y_f} D(omega):D(w) + int pi div w = int_{Y_f} E^{ij}:D(w)
for periodic w rigid on Y_s.  For i = j the rigid part has unit
divergence, so periodicity forces a compensating uniform divergence in
the fluid: div omega^{ii} = -|Y_s|/|Y_f| there.  For the trace-free
combinations that matter physically this term cancels.

Magnetic cell problems (3D): periodic Theta^j with
    int_Y div T div G + int_{Y_s} curl T . curl G + gamma int_{Y_f} curl T . curl G
        = -s int_{Y_s} e^j . curl G,
and (Theta^j + s e^j) . n = 0 at interface nodes, with drive s = 1
(Theta) or s = Rm (Psi).
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DimensionError, StateError
from .femcore.constraints import ConstraintBuilder, pressure_constraint
from .femcore.forms import (K_curl, K_div, K_sym, divergence_form, gradient_form, gradient_load, mass_form,
                            mean_rows)
from .femcore.solvers import Factorized, SaddleSystem
from .femcore.spaces import FESpace
from .geomesh import Mesh, measure
from .tensoralg import levi_civita_array, sym_identity

DEFAULT_GAMMA_CURL = 1e6


def strain_basis(d: int, i: int, j: int) -> np.ndarray:
    """E^{ij} = (e_i e_j^T + e_j e_i^T) / 2, 0-based indices."""
    E = np.zeros((d, d))
    E[i, j] += 0.5
    E[j, i] += 0.5
    return E


@dataclass
class StokesCellSolution:
    mesh: Mesh
    V: FESpace
    Q: FESpace
    omega: np.ndarray  # (d, d, V.ndofs)
    pi: np.ndarray  # (d, d, Q.ndofs)
    solved: np.ndarray  # (d, d) bool
    volume_fraction: float
    residuals: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def complete(self) -> bool:
        return bool(np.all(self.solved))


@dataclass
class MagCellSolution:
    mesh: Mesh
    V: FESpace
    theta: np.ndarray  # (3, V.ndofs)
    psi: np.ndarray  # (3, V.ndofs)
    Rm: float
    gamma_curl: float
    volume_fraction: float
    residuals: dict = field(default_factory=dict)


class StokesCellSolver:
    """Assembles and factorizes the Stokes cell system once."""

    def __init__(self, mesh: Mesh):
        if not mesh.periodic:
            raise ArgumentError("cell problems need a periodic unit-cell mesh")
        self.mesh = mesh
        d = mesh.dim
        self.V = V = FESpace(mesh, 2, d)
        self.Q = Q = FESpace(mesh, 1, 1)
        b = ConstraintBuilder(V).periodic()
        self.rigid_nodes = {}
        for k in range(mesh.n_inclusions):
            nodes = V.cells_nodes(mesh.cell_tags == k)
            self.rigid_nodes[k] = nodes
            b.rigid_body(nodes, k, mesh.inclusion_centers[k])
        self._builder = b
        self.cu0 = b.build()
        self.cp = pressure_constraint(Q, drop_solid_only=True, periodic=True)
        self.A = gradient_form(V, 0.5 * K_sym(sym_identity(d)), where="fluid")
        self.B = divergence_form(V, Q)
        self.Cm = mean_rows(V)
        self.mass_p = mass_form(Q)
        self.mean_p = np.asarray(self.mass_p.sum(axis=1)).ravel()
        self.vol_s = measure(mesh, "solid")
        self.vol_f = measure(mesh, "fluid")
        P = self.cu0.P
        Ar = (P.T @ self.A @ P).tocsr()
        Br = (self.cp.P.T @ self.B @ P).tocsr()
        Cr = (self.Cm @ P).tocsr()
        sys = SaddleSystem(A=Ar, f=np.zeros(Ar.shape[0]), B=Br, mean=self.cp.P.T @ self.mean_p, C=Cr,
                           hints=["constant velocity mode (zero-mean velocity gauge)"])
        self.fact = Factorized(sys)
        # div source f = 1 on solid, -|Y_s|/|Y_f| on fluid, tested against pressure hats
        ed = Q.element_data(3)
        fcell = np.where(mesh.solid_mask(), 1.0, -self.vol_s / self.vol_f if self.vol_f > 0 else 0.0)
        loc = np.einsum("eq,qa->ea", ed.weights * fcell[:, None], ed.phi)
        self.div_source = np.zeros(Q.ndofs)
        np.add.at(self.div_source, Q.cell_nodes.ravel(), loc.ravel())

    def lift(self, i: int, j: int) -> np.ndarray:
        """Full vector: E^{ij}(y - G) at rigid nodes, zero elsewhere."""
        d = self.mesh.dim
        E = strain_basis(d, i, j)
        off = np.zeros(self.V.ndofs)
        nn = self.V.n_nodes
        for k, nodes in self.rigid_nodes.items():
            vals = (self.V.nodes[nodes] - self.mesh.inclusion_centers[k]) @ E.T
            for c in range(d):
                off[c * nn + nodes] = vals[:, c]
        return off

    def solve(self, i: int, j: int):
        """0-based (i, j); returns (omega, pi, residual info)."""
        d = self.mesh.dim
        if self.mesh.n_inclusions == 0:
            return np.zeros(self.V.ndofs), np.zeros(self.Q.ndofs), {"div": 0.0, "solid_strain": 0.0, "solve": 0.0}
        E = strain_basis(d, i, j)
        off = self.lift(i, j)
        P = self.cu0.P
        f_full = gradient_load(self.V, E, where="fluid")
        fr = P.T @ (f_full - self.A @ off)
        g_full = (1.0 if i == j else 0.0) * self.div_source - self.B @ off
        gr = self.cp.P.T @ g_full
        hr = -(self.Cm @ off)
        sol = self.fact.solve(f=fr, g=gr, h=hr)
        omega = P @ sol.x + off
        pi = self.cp.expand(sol.p)
        # diagnostics
        divres = self.cp.P.T @ (self.B @ omega - (1.0 if i == j else 0.0) * self.div_source)
        scale = max(np.linalg.norm(self.cp.P.T @ self.div_source), 1.0)
        _, grads = self.V.evaluate(omega, 3)
        D = 0.5 * (grads + np.swapaxes(grads, -1, -2))
        solid = self.mesh.solid_mask()
        sdev = float(np.max(np.abs(D[solid] - E))) if np.any(solid) else 0.0
        return omega, pi, {"div": float(np.linalg.norm(divres) / scale), "solid_strain": sdev,
                           "solve": sol.residual}


_SOLVERS: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _stokes_solver(mesh: Mesh) -> StokesCellSolver:
    s = _SOLVERS.get(mesh)
    if s is None:
        s = StokesCellSolver(mesh)
        _SOLVERS[mesh] = s
    return s


def _check_index(i, d):
    if not isinstance(i, (int, np.integer)) or i < 1 or i > d:
        raise ArgumentError(f"index {i!r} out of range 1..{d}")


def empty_stokes_solution(mesh: Mesh) -> StokesCellSolution:
    s = _stokes_solver(mesh)
    d = mesh.dim
    return StokesCellSolution(mesh=mesh, V=s.V, Q=s.Q, omega=np.zeros((d, d, s.V.ndofs)),
                              pi=np.zeros((d, d, s.Q.ndofs)), solved=np.zeros((d, d), bool),
                              volume_fraction=s.vol_s / (s.vol_s + s.vol_f))


def solve_stokes_cell(mesh: Mesh, i: int, j: int, into: StokesCellSolution | None = None) -> StokesCellSolution:
    """Solve one (i, j) Stokes cell problem (1-based indices).

    The factorization is shared between all (i, j) on the same mesh.  The
    result is stored in ``into`` (created if missing) together with its (j, i)
    twin, since the data are symmetric in (i, j).
    """
    d = mesh.dim
    _check_index(i, d)
    _check_index(j, d)
    sol = into if into is not None else empty_stokes_solution(mesh)
    s = _stokes_solver(mesh)
    om, pi, res = s.solve(i - 1, j - 1)
    for a, b in {(i - 1, j - 1), (j - 1, i - 1)}:
        sol.omega[a, b] = om
        sol.pi[a, b] = pi
        sol.solved[a, b] = True
        sol.residuals[(a, b)] = res
    return sol


def solve_stokes_cells(mesh: Mesh, order=None) -> StokesCellSolution:
    """All d^2 Stokes cell problems (each independent)."""
    d = mesh.dim
    sol = empty_stokes_solution(mesh)
    pairs = order if order is not None else [(i, j) for i in range(1, d + 1) for j in range(i, d + 1)]
    for i, j in pairs:
        s = _stokes_solver(mesh)
        om, pi, res = s.solve(i - 1, j - 1)
        sol.omega[i - 1, j - 1] = om
        sol.pi[i - 1, j - 1] = pi
        sol.solved[i - 1, j - 1] = True
        sol.residuals[(i - 1, j - 1)] = res
        if (j, i) not in pairs:
            sol.omega[j - 1, i - 1] = om
            sol.pi[j - 1, i - 1] = pi
            sol.solved[j - 1, i - 1] = True
            sol.residuals[(j - 1, i - 1)] = res
    return sol


# ----------------------------------------------------------------- magnetics

class MagCellSolver:
    def __init__(self, mesh: Mesh, gamma_curl: float = DEFAULT_GAMMA_CURL):
        if mesh.dim != 3:
            raise DimensionError(
                "magnetic cell problems are solved in 3D only: in the in-plane 2D reduction the "
                "admissible curls are out-of-plane, so Theta is constant and M = |Y_s|/|Y| I")
        if not mesh.periodic:
            raise ArgumentError("cell problems need a periodic unit-cell mesh")
        self.mesh = mesh
        self.gamma = float(gamma_curl)
        self.V = V = FESpace(mesh, 2, 3)
        solid = mesh.solid_mask()
        coef = np.where(solid, 1.0, self.gamma)
        self.A = (gradient_form(V, K_div(3)) + gradient_form(V, K_curl(np.eye(3)), coef=coef)).tocsr()
        self.iface_nodes = V.facet_nodes(mesh.interface_facets)
        if len(self.iface_nodes):
            # inclusion of each interface node via its facet tag
            inc = np.full(V.n_nodes, -1)
            for k in range(mesh.n_inclusions):
                inc[V.facet_nodes(mesh.interface_facets[mesh.interface_tags == k])] = k
            self.iface_incl = inc[self.iface_nodes]
            self.normals = mesh.interface_normal(V.nodes[self.iface_nodes], self.iface_incl)
        else:
            self.iface_incl = np.zeros(0, int)
            self.normals = np.zeros((0, 3))
        b = ConstraintBuilder(V).periodic()
        if len(self.iface_nodes):
            b.normal_component(self.iface_nodes, self.normals, np.zeros(len(self.iface_nodes)))
        self.con = b.build()
        P = self.con.P
        Ar = (P.T @ self.A @ P).tocsr()
        C = None
        if len(self.iface_nodes) == 0:
            C = (mean_rows(V) @ P).tocsr()
        self.fact = Factorized(SaddleSystem(A=Ar, f=np.zeros(Ar.shape[0]), C=C,
                                            hints=["constant fields (zero-mean gauge)"]))
        self.eps = levi_civita_array(3)

    def offset(self, j: int, scale: float) -> np.ndarray:
        off = np.zeros(self.V.ndofs)
        nn = self.V.n_nodes
        val = -scale * self.normals[:, j]
        for c in range(3):
            off[c * nn + self.iface_nodes] = val * self.normals[:, c]
        return off

    def rhs_full(self, j: int, scale: float) -> np.ndarray:
        # -s int_{Y_s} e^j . curl G  ==  -s int eps_{jkp} d_k G_p
        F = -scale * self.eps[j].T  # F[p, k] = eps[j, k, p]
        return gradient_load(self.V, F, where="solid")

    def solve(self, j: int, scale: float = 1.0):
        if self.mesh.n_inclusions == 0:
            return np.zeros(self.V.ndofs), 0.0
        off = self.offset(j, scale)
        P = self.con.P
        fr = P.T @ (self.rhs_full(j, scale) - self.A @ off)
        sol = self.fact.solve(f=fr)
        return P @ sol.x + off, sol.residual

    def weak_residual(self, theta: np.ndarray, j: int, scale: float, G_full: np.ndarray) -> float:
        """a(theta, G) - l(G) for a test field G satisfying the homogeneous constraints."""
        return float(G_full @ (self.A @ theta) - G_full @ self.rhs_full(j, scale))


_MAG: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _mag_solver(mesh: Mesh, gamma_curl: float) -> MagCellSolver:
    cache = _MAG.setdefault(mesh, {})
    if gamma_curl not in cache:
        cache[gamma_curl] = MagCellSolver(mesh, gamma_curl)
    return cache[gamma_curl]


def solve_theta_cell(mesh: Mesh, j: int, gamma_curl: float = DEFAULT_GAMMA_CURL) -> np.ndarray:
    """Theta^j (1-based j) as a full coefficient vector."""
    s = _mag_solver(mesh, gamma_curl)
    _check_index(j, 3)
    return s.solve(j - 1, 1.0)[0]


def solve_psi_cell(mesh: Mesh, j: int, Rm: float, gamma_curl: float = DEFAULT_GAMMA_CURL) -> np.ndarray:
    """Psi^j (drive Rm e^j); equals Rm * Theta^j by linearity."""
    s = _mag_solver(mesh, gamma_curl)
    _check_index(j, 3)
    return s.solve(j - 1, float(Rm))[0]


def solve_mag_cells(mesh: Mesh, Rm: float, gamma_curl: float = DEFAULT_GAMMA_CURL) -> MagCellSolution:
    s = _mag_solver(mesh, gamma_curl)
    theta = np.zeros((3, s.V.ndofs))
    psi = np.zeros((3, s.V.ndofs))
    res = {}
    for j in range(3):
        theta[j], r1 = s.solve(j, 1.0)
        psi[j], r2 = s.solve(j, float(Rm))
        res[j] = {"theta_solve": r1, "psi_solve": r2}
    vs = measure(mesh, "solid")
    return MagCellSolution(mesh=mesh, V=s.V, theta=theta, psi=psi, Rm=float(Rm), gamma_curl=float(gamma_curl),
                           volume_fraction=vs / measure(mesh, "all"), residuals=res)


def mag_diagnostics(sol: MagCellSolution) -> dict:
    """Penalty residual of curl in Y_f and interface trace defect per j."""
    s = _mag_solver(sol.mesh, sol.gamma_curl)
    out = {}
    V = sol.V
    nn = V.n_nodes
    for j in range(3):
        _, g = V.evaluate(sol.theta[j], 3)
        curl = np.stack([g[..., 2, 1] - g[..., 1, 2], g[..., 0, 2] - g[..., 2, 0], g[..., 1, 0] - g[..., 0, 1]], -1)
        ed = V.element_data(3)
        w = ed.weights * sol.mesh.fluid_mask()[:, None]
        curl_f = float(np.sqrt(np.sum(w * np.sum(curl ** 2, -1))))
        if len(s.iface_nodes):
            T = np.stack([sol.theta[j][c * nn + s.iface_nodes] for c in range(3)], 1)
            trace = float(np.max(np.abs(np.sum((T + np.eye(3)[j]) * s.normals, 1))))
        else:
            trace = 0.0
        out[j] = {"curl_fluid_L2": curl_f, "trace_defect": trace}
    return out


# ---------------------------------------------------------- reconstruction

def reconstruct_u1(D_u0, cells: StokesCellSolution) -> np.ndarray:
    """u1 = -[D(u0)]_ij omega^{ij} as a coefficient vector on the cell space."""
    if not cells.complete:
        raise StateError("Stokes cell set incomplete")
    D = np.asarray(D_u0, dtype=float)
    return -np.einsum("ij,ijn->n", D, cells.omega)


def reconstruct_B1(gradB0, u0, B0, cells: MagCellSolution) -> np.ndarray:
    """B1 = eps_ijk dB_i/dx_k Theta^j - eps_ikj u_i B_k Psi^j, gradB0[i, k] = dB_i/dx_k."""
    if cells.theta is None or cells.psi is None:
        raise StateError("magnetic cell set incomplete")
    eps = levi_civita_array(3)
    a = np.einsum("ijk,ik->j", eps, np.asarray(gradB0, dtype=float))
    b = np.einsum("ikj,i,k->j", eps, np.asarray(u0, dtype=float), np.asarray(B0, dtype=float))
    return np.einsum("j,jn->n", a, cells.theta) - np.einsum("j,jn->n", b, cells.psi)


def B1_coefficients(gradB0, u0, B0):
    eps = levi_civita_array(3)
    a = np.einsum("ijk,ik->j", eps, np.asarray(gradB0, dtype=float))
    b = np.einsum("ikj,i,k->j", eps, np.asarray(u0, dtype=float), np.asarray(B0, dtype=float))
    return a, b
