"""Homogenized coupled system on the macroscopic box and the smallness test.

Weak form solved (u0 in H1_0, Pi in L2_0, B0 with zero normal trace):

    2 int N D(u0):D(v) + Re int (u0.grad)u0.v + int Pi div v
        - Al phi int (curl B0 x B0).v = Re int g.v
    Al/Rm [int M curl B0 . curl C + int div B0 div C]
        - Al int E (u0 x B0) . curl C = Al phi int h.C

with phi = |Y_s|/|Y|.  The convection coefficient Re and the factor Al on
the induction equation are kept so that the trivial microstructure
reproduces the fine-scale system; see the project notes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .efftensors import EffectiveTensors
from .errors import DimensionError, NonConvergenceError, PreconditionError, StateError
from .femcore.constraints import ConstraintBuilder, pressure_constraint
from .femcore.forms import K_curl, K_div, K_sym, gradient_form, load_vector, mass_form, stiffness_form
from .femcore.problem import DimensionlessParams, MixedProblem, coupling_callback
from .femcore.solvers import Factorized, SaddleSystem
from .femcore.spaces import FESpace
from .fields import as_field, field_l2_norm, is_zero
from .geomesh import Mesh
from .tensoralg import ellipticity_report


@dataclass
class SmallnessReport:
    lhs: float
    rhs: float
    satisfied: bool
    alpha: float
    kappa_GR: float
    kappa_K: float
    kappa_S: float
    g_norm: float
    h_norm: float
    functional_lhs: float
    functional_rhs: float
    functional_satisfied: bool
    functional_norm: float
    note: str = "indicative: kappa_S is a discrete lower estimate"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class MacroState:
    mesh: Mesh
    V: FESpace
    Q: FESpace
    W: FESpace | None
    u0: np.ndarray
    Pi: np.ndarray
    B0: np.ndarray | None
    history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)
    N: np.ndarray | None = None


def _check_tensors(t: EffectiveTensors, magnetic: bool):
    rep = ellipticity_report(t.N, 1e-8)
    if not rep["min_eigenvalue"] > 0:
        raise PreconditionError(f"effective viscosity is not elliptic (min eigenvalue {rep['min_eigenvalue']:.3e})")
    if magnetic:
        if t.M is None or t.E is None:
            raise PreconditionError("magnetic coupling requested but M, E are missing")
        m = ellipticity_report(t.M, 1e-8)
        if not m["min_eigenvalue"] > 0:
            raise PreconditionError(f"effective reluctivity is not elliptic (min eigenvalue {m['min_eigenvalue']:.3e})")


def velocity_space(mesh: Mesh):
    V = FESpace(mesh, 2, mesh.dim)
    cu = ConstraintBuilder(V).dirichlet(V.boundary_nodes()).build()
    return V, cu


def magnetic_space(mesh: Mesh):
    W = FESpace(mesh, 2, mesh.dim)
    cb = ConstraintBuilder(W).box_normal_trace_zero().build()
    return W, cb


def h1_gram(space: FESpace, seminorm: bool = False):
    G = stiffness_form(space)
    return G if seminorm else (G + mass_form(space)).tocsr()


def solve_homogenized(tensors: EffectiveTensors, params: DimensionlessParams, g, h, macro_mesh: Mesh,
                      tol: float = 1e-9, maxit: int = 30, smallness: SmallnessReport | None = None) -> MacroState:
    """Picard solve of the homogenized system on ``macro_mesh`` (a box mesh)."""
    mesh = macro_mesh
    d = mesh.dim
    if tensors.dim != d:
        raise DimensionError(f"tensors are {tensors.dim}D but the macro mesh is {d}D")
    magnetic = params.magnetic
    if magnetic and d != 3:
        raise DimensionError("coupled macro solves are three-dimensional; use Al=0 in 2D")
    _check_tensors(tensors, magnetic)
    phi = float(tensors.volume_fraction)
    V, cu = velocity_space(mesh)
    Q = FESpace(mesh, 1, 1)
    cp = pressure_constraint(Q, drop_solid_only=False)
    A_uu = gradient_form(V, K_sym(tensors.N))
    f_u = params.Re * load_vector(V, as_field(g, d))
    W = cb = A_bb = f_b = G_b = None
    if magnetic:
        W, cb = magnetic_space(mesh)
        A_bb = (params.Al / params.Rm) * (gradient_form(W, K_curl(tensors.M)) + gradient_form(W, K_div(3)))
        f_b = params.Al * phi * load_vector(W, as_field(h, d))
        G_b = h1_gram(W)
    nonlinear = None
    if params.Re != 0 or magnetic:
        nonlinear = coupling_callback(V, W, params.Re, params.Al if magnetic else 0.0, conv_where="all",
                                      lorentz_where="all", lorentz_scale=phi, E=tensors.E, E_where="all")
    prob = MixedProblem(V, Q, cu, cp, A_uu, f_u, W=W, cb=cb, A_bb=A_bb, f_b=f_b, nonlinear=nonlinear,
                        G_u=h1_gram(V, seminorm=True), G_b=G_b)
    try:
        st = prob.solve(tol=tol, maxit=maxit,
                        report=smallness.to_dict() if smallness is not None else None)
    except NonConvergenceError as exc:
        exc.report = {"smallness": smallness.to_dict() if smallness is not None else None,
                      "history": exc.history}
        raise
    x = np.concatenate([st.u, st.B]) if magnetic else st.u
    diag = {
        "solve_residual": st.residual,
        "div_u": float(np.linalg.norm(prob.Bdiv @ st.u)),
        "mean_Pi": float(prob.mean_full @ st.p),
        "trilinear": prob.trilinear_value(x),
        "norm": prob.norm(x),
    }
    if magnetic:
        diag["div_B_L2"] = _div_l2(W, st.B)
    return MacroState(mesh=mesh, V=V, Q=Q, W=W, u0=st.u, Pi=st.p, B0=st.B, history=st.history,
                      iterations=st.iterations, converged=st.converged, diagnostics=diag,
                      N=np.asarray(tensors.N))


def _div_l2(space: FESpace, coef) -> float:
    _, gr = space.evaluate(coef)
    div = np.trace(gr, axis1=-2, axis2=-1)
    w = space.element_data().weights
    return float(np.sqrt(np.sum(w * div ** 2)))


def solve_induction(M: np.ndarray, Rm: float, source, macro_mesh: Mesh, phi: float = 1.0):
    """Decoupled induction (u0 = 0): 1/Rm [M curl B.curl C + div B div C] = phi h.C.

    Returns (W, B) with B a full coefficient vector.
    """
    mesh = macro_mesh
    if mesh.dim != 3:
        raise DimensionError("the induction operator is three-dimensional")
    W, cb = magnetic_space(mesh)
    A = (gradient_form(W, K_curl(M)) + gradient_form(W, K_div(3))) / Rm
    f = phi * load_vector(W, as_field(source, 3))
    Ar = cb.matrix(A)
    sol = Factorized(SaddleSystem(A=Ar, f=cb.rhs(f, A))).solve()
    return W, cb.expand(sol.x)


def data_norms(mesh: Mesh, g, h) -> tuple[float, float]:
    V = FESpace(mesh, 1, mesh.dim)
    gn = 0.0 if is_zero(g) else field_l2_norm(V, g)
    hn = 0.0 if is_zero(h) else field_l2_norm(V, h)
    return gn, hn


def coercivity_constant(params: DimensionlessParams, kappa_GR: float, kappa_K: float) -> float:
    """min{(Al/Rm) kappa_GR, kappa_K}; without magnetics only the Korn part applies."""
    if not params.magnetic:
        return float(kappa_K)
    return float(min(params.Al / params.Rm * kappa_GR, kappa_K))


def functional_norm(mesh: Mesh, params: DimensionlessParams, g, h, solid_only_h: bool = True) -> float:
    """Discrete dual norm of L(v, C) = Re int g.v + Al int h.C over the constrained spaces."""
    d = mesh.dim
    V, cu = velocity_space(mesh)
    f = params.Re * load_vector(V, as_field(g, d))
    G = cu.matrix(h1_gram(V, seminorm=True))
    fr = cu.P.T @ f
    z = Factorized(SaddleSystem(A=G, f=fr)).solve().x
    s = float(fr @ z)
    if params.magnetic and d == 3 and not is_zero(h):
        W, cb = magnetic_space(mesh)
        where = "solid" if (solid_only_h and mesh.n_inclusions) else "all"
        fb = params.Al * load_vector(W, as_field(h, d), where=where)
        Gb = cb.matrix(h1_gram(W))
        fbr = cb.P.T @ fb
        zb = Factorized(SaddleSystem(A=Gb, f=fbr)).solve().x
        s += float(fbr @ zb)
    return float(np.sqrt(max(s, 0.0)))


def check_smallness(params: DimensionlessParams, g, h, constants, mesh: Mesh | None = None,
                    g_norm: float | None = None, h_norm: float | None = None) -> SmallnessReport:
    """Evaluate the data smallness condition in its data form and in its functional form.

    Data norms are computed on ``mesh`` unless given explicitly.  The
    functional norm is the discrete dual norm when a mesh is available and
    the Cauchy-Schwarz bound Re|g| + Al|h| otherwise.
    """
    if constants is None:
        raise StateError("constants have not been estimated")
    kGR = getattr(constants, "kappa_GR", None)
    kK = getattr(constants, "kappa_K", None)
    kS = getattr(constants, "kappa_S", None)
    if kK is None or kS is None or (params.magnetic and kGR is None):
        raise StateError("constants report is missing kappa values")
    kGR = float(kGR) if kGR is not None else float("nan")
    if g_norm is None or h_norm is None:
        if mesh is None:
            raise StateError("data norms need a mesh or explicit values")
        gn, hn = data_norms(mesh, g, h)
        g_norm = gn if g_norm is None else g_norm
        h_norm = hn if h_norm is None else h_norm
    alpha = coercivity_constant(params, kGR, kK)
    lhs = params.Re * g_norm + params.Al * h_norm
    factor = max(1.0, 2.0 * params.Al)
    rhs = alpha ** 2 / (kS * factor)
    if mesh is not None and (g_norm > 0 or h_norm > 0):
        Lnorm = functional_norm(mesh, params, g, h)
    else:
        Lnorm = lhs
    fun_lhs = kS * factor * Lnorm
    fun_rhs = alpha ** 2
    return SmallnessReport(lhs=float(lhs), rhs=float(rhs), satisfied=bool(lhs <= rhs), alpha=alpha,
                           kappa_GR=kGR, kappa_K=float(kK), kappa_S=float(kS), g_norm=float(g_norm),
                           h_norm=float(h_norm), functional_lhs=float(fun_lhs), functional_rhs=float(fun_rhs),
                           functional_satisfied=bool(fun_lhs <= fun_rhs), functional_norm=float(Lnorm))


def apriori_bound(state: MacroState, params: DimensionlessParams, alpha: float, g_norm: float, h_norm: float,
                  slack: float = 0.05) -> dict:
    """|(u0, B0)| <= (2/alpha)(Re|g| + Al|h|) with the solver's norms."""
    G = h1_gram(state.V, seminorm=True)
    s = float(state.u0 @ (G @ state.u0))
    if state.W is not None and state.B0 is not None:
        s += float(state.B0 @ (h1_gram(state.W) @ state.B0))
    lhs = float(np.sqrt(max(s, 0.0)))
    rhs = 2.0 / alpha * (params.Re * g_norm + params.Al * h_norm)
    return {"lhs": lhs, "rhs": rhs, "pass": bool(lhs <= rhs * (1 + slack))}


def field_errors(space: FESpace, coef, exact, degree: int = 6, grad=None) -> dict:
    """L2 and H1-seminorm errors; ``exact`` returns values, ``grad`` returns (..., m, d) gradients."""
    vals, grads = space.evaluate(coef, degree)
    ed = space.element_data(degree)
    ex = np.asarray(exact(ed.points), dtype=float)
    if ex.ndim == vals.ndim - 1:
        ex = ex[..., None]
    l2 = float(np.sqrt(np.sum(ed.weights * np.sum((vals - ex) ** 2, -1))))
    out = {"L2": l2}
    if grad is not None:
        gx = np.asarray(grad(ed.points), dtype=float)
        out["H1"] = float(np.sqrt(np.sum(ed.weights * np.sum((grads - gx) ** 2, axis=(-1, -2)))))
    return out


__all__ = ["MacroState", "SmallnessReport", "solve_homogenized", "solve_induction", "check_smallness",
           "coercivity_constant", "data_norms", "functional_norm", "apriori_bound", "field_errors",
           "velocity_space", "magnetic_space", "h1_gram"]
