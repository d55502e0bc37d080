"""Fine-scale suspension problem on the epsilon-periodic array of rigid inclusions.

Weak problem: find (u, B) with u in H1_0 rigid on each inclusion, B with
zero normal trace on the box, and p (zero on solid-only nodes, zero mean):

    2 int_{Of} D(u):D(v) + Al/Rm [int div B div C + int_{Os} curl B.curl C
        + gamma int_{Of} curl B.curl C] + C(u,B; u,B; v,C) + int p div v
        = Re int g.v + Al int_{Os} h.C

with C the convection plus solid-restricted Lorentz/induction trilinear
form.  Force and torque balances on each inclusion are the reduced
equations of the rigid degrees of freedom.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DimensionError, NonConvergenceError, PreconditionError
from .femcore.constraints import ConstraintBuilder, pressure_constraint, rigid_modes
from .femcore.forms import K_curl, K_div, K_sym, divergence_form, gradient_form, load_vector, mass_form
from .femcore.problem import DimensionlessParams, MixedProblem, coupling_callback
from .femcore.solvers import Factorized, SaddleSystem
from .femcore.spaces import FESpace
from .femcore.spectra import infsup_constant
from .fields import as_field, field_l2_norm, is_zero
from .geomesh import Mesh
from .macroms import h1_gram
from .tensoralg import sym_identity

MODES = ("hydro2d", "coupled3d")


@dataclass
class FineState:
    mesh: Mesh
    mode: str
    params: DimensionlessParams
    V: FESpace
    Q: FESpace
    W: FESpace | None
    u: np.ndarray
    p: np.ndarray
    B: np.ndarray | None
    rigid_motions: dict
    history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)
    problem: MixedProblem | None = field(default=None, repr=False)

    def norms(self) -> dict:
        Gu = h1_gram(self.V, seminorm=True)
        out = {"u_H1": float(np.sqrt(max(self.u @ (Gu @ self.u), 0.0)))}
        Mp = mass_form(self.Q)
        out["p_L2"] = float(np.sqrt(max(self.p @ (Mp @ self.p), 0.0)))
        if self.W is not None and self.B is not None:
            out["B_H1"] = float(np.sqrt(max(self.B @ (h1_gram(self.W) @ self.B), 0.0)))
        else:
            out["B_H1"] = 0.0
        out["state"] = float(np.hypot(out["u_H1"], out["B_H1"]))
        return out


@dataclass
class AprioriReport:
    velocity_lhs: float
    velocity_rhs: float
    velocity_pass: bool
    pressure_lhs: float
    pressure_rhs: float | None
    pressure_pass: bool | None
    alpha: float
    pressure_constant: float | None
    data: float
    slack: float = 0.05

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def fine_velocity_space(mesh: Mesh, rigid_mode: str = "full"):
    """P2 velocity, zero on the box boundary, rigid on every inclusion."""
    V = FESpace(mesh, 2, mesh.dim)
    b = ConstraintBuilder(V).dirichlet(V.boundary_nodes())
    for k in range(mesh.n_inclusions):
        b.rigid_body(V.cells_nodes(mesh.cell_tags == k), k, mesh.inclusion_centers[k], mode=rigid_mode)
    return V, b.build()


def fine_pressure_space(mesh: Mesh, drop_solid_only: bool = True):
    Q = FESpace(mesh, 1, 1)
    return Q, pressure_constraint(Q, drop_solid_only=drop_solid_only)


def fine_magnetic_space(mesh: Mesh):
    W = FESpace(mesh, 2, mesh.dim)
    return W, ConstraintBuilder(W).box_normal_trace_zero().build()


def default_gamma_curl(params: DimensionlessParams) -> float:
    return 1e6 * params.Al / params.Rm


def solve_fine(mesh: Mesh, params: DimensionlessParams, g, h=None, mode: str = "hydro2d", tol: float = 1e-9,
               maxit: int = 30, gamma_curl: float | None = None, smallness=None) -> FineState:
    if mode not in MODES:
        raise ArgumentError(f"unknown mode {mode!r}; expected one of {MODES}")
    d = mesh.dim
    if mode == "hydro2d":
        if d != 2:
            raise DimensionError("hydro2d mode needs a 2D mesh")
        if params.Al != 0:
            raise ArgumentError("hydro2d mode runs without magnetics (Al = 0)")
    elif d != 3:
        raise DimensionError("coupled3d mode needs a 3D mesh")
    if mesh.n_inclusions == 0:
        warnings.warn("mesh has no inclusions: solving plain Navier-Stokes", RuntimeWarning, stacklevel=2)
    V, cu = fine_velocity_space(mesh)
    Q, cp = fine_pressure_space(mesh)
    A_uu = gradient_form(V, K_sym(sym_identity(d)), where="fluid")
    f_u = params.Re * load_vector(V, as_field(g, d))
    magnetic = mode == "coupled3d"
    W = cb = A_bb = f_b = G_b = None
    gamma = None
    if magnetic:
        W, cb = fine_magnetic_space(mesh)
        gamma = default_gamma_curl(params) if gamma_curl is None else float(gamma_curl)
        k = params.Al / params.Rm
        fluid = mesh.fluid_mask()
        # solid curl weight Al/Rm, fluid curl weight gamma (absolute)
        coef = np.where(fluid, gamma, k)
        A_bb = (k * gradient_form(W, K_div(3)) + gradient_form(W, K_curl(np.eye(3)), coef=coef)).tocsr()
        f_b = params.Al * load_vector(W, as_field(h, 3), where="solid") if mesh.n_inclusions else np.zeros(W.ndofs)
        G_b = h1_gram(W)
    nonlinear = None
    if params.Re != 0 or (magnetic and params.Al != 0):
        nonlinear = coupling_callback(V, W, params.Re, params.Al if magnetic else 0.0, conv_where="all",
                                      lorentz_where="solid", lorentz_scale=1.0, E=None, E_where="solid")
    prob = MixedProblem(V, Q, cu, cp, A_uu, f_u, W=W, cb=cb, A_bb=A_bb, f_b=f_b, nonlinear=nonlinear,
                        G_u=h1_gram(V, seminorm=True), G_b=G_b)
    rep = smallness.to_dict() if smallness is not None else None
    try:
        st = prob.solve(tol=tol, maxit=maxit, report=rep)
    except NonConvergenceError as exc:
        exc.report = {"smallness": rep, "history": exc.history}
        raise
    z = st.u_reduced
    motions = {k: np.asarray(z[sl], dtype=float) for k, sl in cu.rigid_slices.items()}
    state = FineState(mesh=mesh, mode=mode, params=params, V=V, Q=Q, W=W, u=st.u, p=st.p, B=st.B,
                      rigid_motions=motions, history=st.history, iterations=st.iterations,
                      converged=st.converged, problem=prob)
    state.diagnostics = fine_diagnostics(state, cu, cp)
    state.diagnostics["solve_residual"] = st.residual
    if gamma is not None:
        state.diagnostics["gamma_curl"] = gamma
    return state


def fine_diagnostics(state: FineState, cu, cp) -> dict:
    mesh, V, prob = state.mesh, state.V, state.problem
    out = {}
    _, gr = V.evaluate(state.u, 3)
    D = 0.5 * (gr + np.swapaxes(gr, -1, -2))
    solid = mesh.solid_mask()
    out["solid_strain_max"] = float(np.max(np.abs(D[solid]))) if np.any(solid) else 0.0
    out["div_residual"] = float(np.linalg.norm(cp.P.T @ (prob.Bdiv @ state.u)))
    out["p_mean"] = float(prob.mean_full @ state.p)
    out["p_solid_only_max"] = _solid_only_p(state)
    x = np.concatenate([state.u, state.B]) if state.B is not None else state.u
    out["trilinear"] = prob.trilinear_value(x)
    out["trilinear_scale"] = prob.norm(x) ** 3
    out["rigid_reconstruction"] = rigid_reconstruction_error(state)
    ft = force_torque_residuals(state)
    out["force_torque_max"] = max((float(np.max(np.abs(v))) for v in ft.values()), default=0.0)
    out["force_torque"] = {int(k): v.tolist() for k, v in ft.items()}
    return out


def _solid_only_p(state: FineState) -> float:
    touched = np.zeros(state.Q.n_nodes, bool)
    touched[np.unique(state.Q.cell_nodes[state.mesh.fluid_mask()])] = True
    vals = state.p[~touched]
    return float(np.max(np.abs(vals))) if len(vals) else 0.0


def force_torque_residuals(state: FineState) -> dict:
    """Net force and torque residual per inclusion from the discrete stress.

    These are the reduced residual entries of the rigid degrees of freedom:
    viscous and pressure tractions plus body force (and Lorentz force).
    """
    prob = state.problem
    x = np.concatenate([state.u, state.B]) if state.B is not None else state.u
    r = prob.reduced_residual(x, state.p)
    return {k: r[sl] for k, sl in prob.cu.rigid_slices.items()}


def rigid_reconstruction_error(state: FineState) -> float:
    """Max nodal deviation between u and the rigid motion rebuilt from its parameters."""
    mesh, V = state.mesh, state.V
    err = 0.0
    nn = V.n_nodes
    for k, params in state.rigid_motions.items():
        nodes = V.cells_nodes(mesh.cell_tags == k)
        R = rigid_modes(V.nodes[nodes], mesh.inclusion_centers[k], "full")
        rebuilt = np.einsum("nmc,m->nc", R, params)
        actual = np.stack([state.u[c * nn + nodes] for c in range(mesh.dim)], 1)
        err = max(err, float(np.max(np.abs(rebuilt - actual))))
    return err


def data_magnitude(params: DimensionlessParams, g_norm: float, h_norm: float) -> float:
    return params.Re * g_norm + params.Al * h_norm


def fine_data_norms(mesh: Mesh, g, h) -> tuple[float, float]:
    S = FESpace(mesh, 1, mesh.dim)
    return (0.0 if is_zero(g) else field_l2_norm(S, g)), (0.0 if is_zero(h) else field_l2_norm(S, h))


def calibrate_pressure_constant(state: FineState, g, h) -> float:
    """C with |p| = C (Re|g| + Al|h| + 1)^2 at the given (coarsest) state."""
    gn, hn = fine_data_norms(state.mesh, g, h)
    return state.norms()["p_L2"] / (data_magnitude(state.params, gn, hn) + 1.0) ** 2


def apriori_check(state: FineState, constants, params: DimensionlessParams, g, h,
                  pressure_constant: float | None = None, slack: float = 0.05) -> AprioriReport:
    """Velocity/field bound with alpha from the constants; pressure bound with a calibrated C."""
    from .macroms import coercivity_constant
    alpha = coercivity_constant(params, getattr(constants, "kappa_GR", None) or 0.0, constants.kappa_K)
    gn, hn = fine_data_norms(state.mesh, g, h)
    data = data_magnitude(params, gn, hn)
    n = state.norms()
    vl = n["state"]
    vr = 2.0 / alpha * data
    pl = n["p_L2"]
    pr = pp = None
    if pressure_constant is not None:
        pr = pressure_constant * (data + 1.0) ** 2
        pp = bool(pl <= pr * (1 + slack))
    return AprioriReport(velocity_lhs=vl, velocity_rhs=vr, velocity_pass=bool(vl <= vr * (1 + slack)),
                         pressure_lhs=pl, pressure_rhs=pr, pressure_pass=pp, alpha=alpha,
                         pressure_constant=pressure_constant, data=data, slack=slack)


# ------------------------------------------------------------ Bogovskii map

@dataclass
class BogovskiiResult:
    v: np.ndarray
    V: FESpace
    div_residual: float
    constant_defect: float
    norm_ratio: float
    v_norm: float
    p_norm: float


def _bogovskii_system(mesh: Mesh):
    V, cu = fine_velocity_space(mesh, rigid_mode="translation")
    Q, cp = fine_pressure_space(mesh)
    G = cu.matrix(h1_gram(V, seminorm=True))
    Bm = (cp.P.T @ divergence_form(V, Q) @ cu.P).tocsr()
    Mp = mass_form(Q)
    return V, cu, Q, cp, G, Bm, Mp


def bogovskii_field(p: np.ndarray, mesh: Mesh, tol: float = 1e-10) -> BogovskiiResult:
    """Minimal-H1 velocity, constant on each inclusion, with div v = p tested on the pressure space."""
    V, cu, Q, cp, G, Bm, Mp = _bogovskii_system(mesh)
    p = np.asarray(p, dtype=float)
    if p.shape != (Q.ndofs,):
        raise ArgumentError(f"pressure vector has length {p.size}, expected {Q.ndofs}")
    pn = float(np.sqrt(max(p @ (Mp @ p), 0.0)))
    touched = np.zeros(Q.n_nodes, bool)
    touched[np.unique(Q.cell_nodes[mesh.fluid_mask()])] = True
    scale = max(pn, 1.0)
    if np.any(np.abs(p[~touched]) > tol * scale):
        raise PreconditionError("pressure is not in the admissible space: nonzero on solid-only nodes")
    mean_full = np.asarray(Mp.sum(axis=1)).ravel()
    if abs(mean_full @ p) > 1e-8 * scale:
        raise PreconditionError("pressure must have zero mean")
    rhs = cp.P.T @ (Mp @ p)
    mean_r = cp.P.T @ mean_full
    if pn == 0.0:
        v = np.zeros(V.ndofs)
        return BogovskiiResult(v=v, V=V, div_residual=0.0, constant_defect=0.0, norm_ratio=0.0, v_norm=0.0,
                               p_norm=0.0)
    sol = Factorized(SaddleSystem(A=G, f=np.zeros(G.shape[0]), B=Bm, g=rhs, mean=mean_r)).solve()
    v = cu.expand(sol.x)
    r = Bm @ sol.x - rhs
    r = r - mean_r * (mean_r @ r) / (mean_r @ mean_r)
    div_res = float(np.linalg.norm(r) / max(np.linalg.norm(rhs), 1e-300))
    defect = 0.0
    nn = V.n_nodes
    for k in range(mesh.n_inclusions):
        nodes = V.cells_nodes(mesh.cell_tags == k)
        vals = np.stack([v[c * nn + nodes] for c in range(mesh.dim)], 1)
        defect = max(defect, float(np.max(np.abs(vals - vals[0]))))
    vn = float(np.sqrt(max(sol.x @ (G @ sol.x), 0.0)))
    return BogovskiiResult(v=v, V=V, div_residual=div_res, constant_defect=defect, norm_ratio=vn / pn,
                           v_norm=vn, p_norm=pn)


def bogovskii_constant(mesh: Mesh) -> float:
    """sup_p |v(p)|_{H1} / |p|_{L2} = 1 / beta over inclusion-constant velocities."""
    V, cu, Q, cp, G, Bm, Mp = _bogovskii_system(mesh)
    mean = cp.P.T @ np.asarray(Mp.sum(axis=1)).ravel()
    Mr = (cp.P.T @ Mp @ cp.P).tocsr()
    beta = infsup_constant(Bm, G, Mr, mean=mean)["beta"]
    return 1.0 / beta if beta > 0 else float("inf")
