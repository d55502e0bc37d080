"""Two-scale diagnostics, stability constants and epsilon-sweep studies."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cellprob import DEFAULT_GAMMA_CURL, StokesCellSolution, solve_mag_cells, solve_stokes_cells
from .efftensors import assemble_tensors, degenerate_2d_magnetics
from .errors import ArgumentError, MrhomogError, PreconditionError
from .femcore.forms import K_curl, K_curl2d, K_div, K_sym, gradient_form, mass_form, stiffness_form
from .femcore.problem import DimensionlessParams
from .femcore.spaces import FESpace, PointLocator, point_values
from .femcore.spectra import infsup_constant, l4_embedding_estimate, smallest_pencil_eigenvalue
from .finescale import FineState, fine_magnetic_space, fine_pressure_space, fine_velocity_space, solve_fine
from .geomesh import CellGeometry, Mesh, build_box_mesh, build_cell_mesh, build_fine_mesh
from .macroms import MacroState, coercivity_constant, solve_homogenized
from .tensoralg import sym_identity


# ------------------------------------------------------------------ constants

@dataclass
class ConstantsReport:
    alpha_est: float
    beta_est: float | None
    kappa_GR: float | None
    kappa_K: float
    kappa_S: float
    tables: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def estimate_infsup(mesh: Mesh, drop_solid_only: bool = True, rigid_mode: str = "full") -> dict:
    """Discrete inf-sup constant of the fine velocity/pressure pair on ``mesh``.

    Velocity norm: H1 seminorm on H1_0 fields rigid on the inclusions.
    Pressure norm: L2 on zero-mean fields.  ``drop_solid_only=False`` keeps
    pressure nodes interior to the solid, which the divergence cannot see.
    """
    from .femcore.forms import divergence_form
    V, cu = fine_velocity_space(mesh, rigid_mode=rigid_mode)
    Q, cp = fine_pressure_space(mesh, drop_solid_only=drop_solid_only)
    G = cu.matrix(stiffness_form(V))
    Bm = (cp.P.T @ divergence_form(V, Q) @ cu.P).tocsr()
    Mp = mass_form(Q)
    Mr = (cp.P.T @ Mp @ cp.P).tocsr()
    mean = cp.P.T @ np.asarray(Mp.sum(axis=1)).ravel()
    out = infsup_constant(Bm, G, Mr, mean=mean)
    if out["beta"] == 0.0 or out["beta"] < 1e-6:
        out["diagnostic"] = "vanishing inf-sup constant: pressure modes invisible to the divergence"
    return out


def _korn(mesh: Mesh) -> float:
    V, cu = fine_velocity_space(mesh)
    A = cu.matrix(gradient_form(V, 0.5 * K_sym(sym_identity(mesh.dim))))
    G = cu.matrix(stiffness_form(V))
    return smallest_pencil_eigenvalue(A, G)


def _grad_rot(mesh: Mesh) -> float:
    W, cb = fine_magnetic_space(mesh)
    d = mesh.dim
    Kc = K_curl(np.eye(3)) if d == 3 else K_curl2d()
    A = cb.matrix(gradient_form(W, Kc) + gradient_form(W, K_div(d)))
    G = cb.matrix((stiffness_form(W) + mass_form(W)).tocsr())
    return smallest_pencil_eigenvalue(A, G)


def _sobolev(mesh: Mesh, n_random: int = 3, seed: int = 0, space: str = "velocity") -> dict:
    if space == "velocity":
        V, con = fine_velocity_space(mesh)
        G = stiffness_form(V)
    else:
        V, con = fine_magnetic_space(mesh)
        G = (stiffness_form(V) + mass_form(V)).tocsr()
    lo, hi = mesh.box_lo, mesh.box_hi
    xi = (V.nodes - lo) / (hi - lo)
    bump = np.prod(xi * (1 - xi), axis=1)
    starts = []
    for c in range(V.ncomp):
        x = np.zeros(V.ndofs)
        x[c * V.n_nodes:(c + 1) * V.n_nodes] = bump
        starts.append(x)
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        starts.append(con.P @ rng.standard_normal(con.n_reduced))
    return l4_embedding_estimate(V, con.P, G, starts)


def estimate_constants(mesh: Mesh, which: str, **kw) -> float:
    """One of kappa_K (Korn), kappa_GR (curl/div control of H1), kappa_S (L4 embedding, lower estimate)."""
    if which == "kappa_K":
        return _korn(mesh)
    if which == "kappa_GR":
        return _grad_rot(mesh)
    if which == "kappa_S":
        return _sobolev(mesh, **kw)["kappa_S"]
    raise ArgumentError(f"unknown constant {which!r}; expected kappa_K, kappa_GR or kappa_S")


def infsup_sweep(geom: CellGeometry, epsilons, per_cell: int = 8, drop_solid_only: bool = True) -> dict:
    """beta_est on the unit box for each epsilon (fine mesh h = epsilon / per_cell)."""
    lo, hi = np.zeros(geom.dim), np.ones(geom.dim)
    out = {}
    for eps in sorted(epsilons, reverse=True):
        m = build_fine_mesh(lo, hi, geom, eps, eps / per_cell)
        out[float(eps)] = estimate_infsup(m, drop_solid_only=drop_solid_only)["beta"]
    return out


def relative_spread(values) -> float:
    v = np.asarray(list(values), dtype=float)
    return float((v.max() - v.min()) / v.max())


def constants_report(mesh: Mesh, params: DimensionlessParams, with_beta: bool = True) -> ConstantsReport:
    kK = _korn(mesh)
    kGR = _grad_rot(mesh) if params.magnetic else None
    s = _sobolev(mesh)
    kS = s["kappa_S"]
    if params.magnetic:
        kS = max(kS, _sobolev(mesh, space="magnetic")["kappa_S"])
    beta = estimate_infsup(mesh)["beta"] if with_beta else None
    alpha = coercivity_constant(params, kGR if kGR is not None else 0.0, kK)
    return ConstantsReport(alpha_est=alpha, beta_est=beta, kappa_GR=kGR, kappa_K=kK, kappa_S=kS,
                           tables={"kappa_S_starts": s["per_start"]})


# ----------------------------------------------------------------- correctors

# Smooth test functions without periodic or central symmetry, so no gap vanishes identically.
TEST_FUNCTIONS = (
    lambda x: np.exp(x[..., 0] + x[..., 1]),
    lambda x: np.sin(np.pi * x[..., 0]) * np.exp(x[..., 1]),
    lambda x: x[..., 0] ** 2 + x[..., 1] ** 3,
    lambda x: x[..., 0] * np.exp(x[..., 1]),
    lambda x: (1.0 + x[..., 0]) ** 2 / (1.0 + x[..., 1]),
)


def _cell_coordinates(x, lo, eps):
    t = (x - lo) / eps
    return t - np.floor(t)


def check_layout(fine_mesh: Mesh, cell_mesh: Mesh, epsilon: float, tol: float = 1e-9):
    if fine_mesh.dim != cell_mesh.dim:
        raise PreconditionError("fine and cell meshes differ in dimension")
    if fine_mesh.epsilon is not None and abs(fine_mesh.epsilon - epsilon) > tol:
        raise PreconditionError(f"fine mesh was built for epsilon={fine_mesh.epsilon}, not {epsilon}")
    if cell_mesh.n_inclusions == 0:
        if fine_mesh.n_inclusions:
            raise PreconditionError("cell has no inclusion but the fine mesh does")
        return
    c = cell_mesh.inclusion_centers[0]
    y = (fine_mesh.inclusion_centers - fine_mesh.box_lo) / epsilon
    y = y - np.floor(y)
    if fine_mesh.n_inclusions == 0 or np.max(np.abs(y - c)) > tol:
        raise PreconditionError("inclusion layout of the fine mesh does not match the cell geometry")


def corrector_error(fine: FineState, macro: MacroState, cells: StokesCellSolution, epsilon: float,
                    degree: int = 4) -> dict:
    """L2 velocity gap and gradient corrector gap on the fine mesh.

    u1(x, y) = -[D(u0(x))]_ij omega^{ij}(y) at y = frac((x - lo)/eps).
    """
    check_layout(fine.mesh, cells.mesh, epsilon)
    d = fine.mesh.dim
    Vf = fine.V
    ed = Vf.element_data(degree)
    w = ed.weights.ravel()
    pts = ed.points.reshape(-1, d)
    ue, ge = Vf.evaluate(fine.u, degree)
    ue = ue.reshape(-1, d)
    ge = ge.reshape(-1, d, d)
    mc, mb = PointLocator(macro.mesh).locate(pts)
    u0, g0 = point_values(macro.V, macro.u0, mc, mb, gradients=True)
    D0 = 0.5 * (g0 + np.swapaxes(g0, -1, -2))
    y = _cell_coordinates(pts, fine.mesh.box_lo, epsilon)
    cc, cb = PointLocator(cells.mesh).locate(y)
    gy = np.zeros_like(ge)
    for i in range(d):
        for j in range(d):
            _, gw = point_values(cells.V, cells.omega[i, j], cc, cb, gradients=True)
            gy -= D0[:, i, j, None, None] * gw
    fluid = np.repeat(fine.mesh.fluid_mask(), ed.weights.shape[1])
    De = 0.5 * (ge + np.swapaxes(ge, -1, -2))
    e_fine = float(2.0 * np.sum((w * fluid) * np.sum(De ** 2, (-1, -2))))
    e_macro = float(2.0 * np.sum(w * np.einsum("nij,ijkl,nkl->n", D0, macro_N(macro), D0)))
    l2 = float(np.sqrt(np.sum(w * np.sum((ue - u0) ** 2, -1))))
    h1 = float(np.sqrt(np.sum(w * np.sum((ge - g0) ** 2, (-1, -2)))))
    corr = float(np.sqrt(np.sum(w * np.sum((ge - g0 - gy) ** 2, (-1, -2)))))
    u0n = float(np.sqrt(np.sum(w * np.sum(u0 ** 2, -1))))
    weak = []
    for phi in TEST_FUNCTIONS:
        f = phi(pts)
        weak.append(float(np.linalg.norm(np.sum((w * f)[:, None] * (ue - u0), 0))))
    return {"epsilon": float(epsilon), "u_L2_gap": l2, "grad_gap": h1, "corrector_gap": corr,
            "u0_L2": u0n, "energy_gap": abs(e_fine - e_macro), "energy_fine": e_fine, "energy_macro": e_macro,
            "weak_gaps": weak}


def macro_N(macro: MacroState) -> np.ndarray:
    N = macro.N
    if N is None:
        raise PreconditionError("macro state does not carry the effective viscosity tensor")
    return np.asarray(N)


def indicator_gaps(fine_mesh: Mesh, volume_fraction: float, degree: int = 6) -> list:
    """|int 1_solid phi - phi_s int phi| for the fixed smooth test functions."""
    S = FESpace(fine_mesh, 1, 1)
    ed = S.element_data(degree)
    solid = fine_mesh.solid_mask()[:, None]
    out = []
    for phi in TEST_FUNCTIONS:
        f = phi(ed.points)
        a = np.sum(ed.weights * f * solid)
        b = volume_fraction * np.sum(ed.weights * f)
        out.append(float(abs(a - b)))
    return out


# ------------------------------------------------------------------ studies

@dataclass
class StudyConfig:
    """Sweep settings.

    The fine mesh size is epsilon * fine_h (fine_h defaults to cell_h, in
    which case each period replicates the cell mesh).
    """
    dim: int = 2
    shape: str = "disk"
    radius: float = 0.25
    cell_h: float = 0.125
    fine_h: float | None = None
    epsilons: tuple = (0.25, 0.125, 0.0625)
    macro_h: float = 1.0 / 32
    params: DimensionlessParams = field(default_factory=DimensionlessParams)
    g: object = "swirl"
    h: object = None
    mode: str | None = None
    tol: float = 1e-9
    maxit: int = 30
    gamma_curl: float | None = None

    def __post_init__(self):
        if self.mode is None:
            self.mode = "hydro2d" if self.dim == 2 else "coupled3d"
        if not self.epsilons:
            raise ArgumentError("epsilon list is empty")
        for e in self.epsilons:
            if not 0 < float(e) <= 1:
                raise ArgumentError(f"epsilon must lie in (0, 1], got {e}")

    def geometry(self) -> CellGeometry:
        return CellGeometry(dim=self.dim, shape=self.shape, radius=self.radius)


METRICS = ("u_L2_gap", "grad_gap", "corrector_gap", "energy_gap")


@dataclass
class ConvergenceReport:
    rows: list
    tensors: object = None
    cells: object = None
    macro: object = None
    fines: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def __post_init__(self):
        self.finalize()

    def finalize(self):
        self.rows.sort(key=lambda r: -r["epsilon"])
        prev = None
        for r in self.rows:
            for m in METRICS:
                key = m + "_ratio"
                if prev is not None and m in r and m in prev and prev[m] > 0:
                    r[key] = r[m] / prev[m]
                else:
                    r[key] = None
            if prev is not None and "indicator_gaps" in r and "indicator_gaps" in prev:
                r["indicator_ratios"] = [a / b if b > 0 else None
                                         for a, b in zip(r["indicator_gaps"], prev["indicator_gaps"])]
            if prev is not None and "weak_gaps" in r and "weak_gaps" in prev:
                r["weak_ratios"] = [a / b if b > 0 else None for a, b in zip(r["weak_gaps"], prev["weak_gaps"])]
            if "failed" not in r:
                prev = r
        return self

    def columns(self) -> list:
        cols = ["epsilon", "u_L2_gap", "u_L2_gap_ratio", "grad_gap", "grad_gap_ratio", "corrector_gap",
                "corrector_gap_ratio", "energy_gap", "energy_gap_ratio", "u0_L2", "u_H1", "p_L2", "iterations"]
        cols += [f"indicator_gap_{k + 1}" for k in range(len(TEST_FUNCTIONS))]
        cols += [f"weak_gap_{k + 1}" for k in range(len(TEST_FUNCTIONS))]
        cols += ["status"]
        return cols

    def table(self) -> list:
        out = []
        for r in self.rows:
            row = {c: r.get(c) for c in self.columns()}
            for k in range(len(TEST_FUNCTIONS)):
                row[f"indicator_gap_{k + 1}"] = (r.get("indicator_gaps") or [None] * 5)[k]
                row[f"weak_gap_{k + 1}"] = (r.get("weak_gaps") or [None] * 5)[k]
            row["status"] = "failed: " + r["failed"] if "failed" in r else "ok"
            out.append(row)
        return out

    def to_csv(self) -> str:
        from .io import csv_text
        return csv_text(self.columns(), self.table())


def cell_stage(cfg: StudyConfig):
    """Cell solutions and effective tensors for the study geometry."""
    cell_mesh = build_cell_mesh(cfg.geometry(), cfg.cell_h)
    cells = solve_stokes_cells(cell_mesh)
    mag = None
    if cfg.params.magnetic:
        mag = solve_mag_cells(cell_mesh, cfg.params.Rm, cfg.gamma_curl or DEFAULT_GAMMA_CURL)
    tensors = assemble_tensors(cells, mag)
    if cfg.dim == 2:
        M2, E2 = degenerate_2d_magnetics(tensors.volume_fraction, cfg.params.Rm)
        tensors.variants["M_2d_closure"] = M2
        tensors.variants["E_2d_closure"] = E2
    return cells, mag, tensors


def macro_stage(cfg: StudyConfig, tensors) -> MacroState:
    lo, hi = np.zeros(cfg.dim), np.ones(cfg.dim)
    return solve_homogenized(tensors, cfg.params, cfg.g, cfg.h, build_box_mesh(lo, hi, cfg.macro_h),
                             tol=cfg.tol, maxit=cfg.maxit)


def fine_mesh_for(cfg: StudyConfig, eps: float) -> Mesh:
    lo, hi = np.zeros(cfg.dim), np.ones(cfg.dim)
    return build_fine_mesh(lo, hi, cfg.geometry(), eps, eps * (cfg.fine_h or cfg.cell_h))


def fine_stage(cfg: StudyConfig, eps: float) -> FineState:
    return solve_fine(fine_mesh_for(cfg, eps), cfg.params, cfg.g, cfg.h, mode=cfg.mode, tol=cfg.tol,
                      maxit=cfg.maxit, gamma_curl=cfg.gamma_curl)


def convergence_study(config: StudyConfig, fine_hook=None, cells=None, tensors=None, macro=None,
                      fines: dict | None = None) -> ConvergenceReport:
    """Cell solve, tensors and macro solve once, then a fine solve and corrector errors per epsilon.

    Precomputed stages may be passed in; ``fines`` maps epsilon to a FineState.
    A failing epsilon yields a row with a ``failed`` marker instead of aborting.
    """
    cfg = config
    timings = {}
    t0 = time.perf_counter()
    if cells is None or tensors is None:
        cells, _, tensors = cell_stage(cfg)
    timings["cell"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    if macro is None:
        macro = macro_stage(cfg, tensors)
    timings["macro"] = time.perf_counter() - t0
    rows, done, failures = [], {}, []
    fines = fines or {}
    for eps in sorted((float(e) for e in cfg.epsilons), reverse=True):
        t0 = time.perf_counter()
        try:
            st = fines.get(eps)
            if st is None:
                st = fine_stage(cfg, eps)
            row = corrector_error(st, macro, cells, eps)
            row["indicator_gaps"] = indicator_gaps(st.mesh, cells.volume_fraction)
            n = st.norms()
            row.update({"u_H1": n["u_H1"], "p_L2": n["p_L2"], "iterations": st.iterations})
            done[eps] = st
            if fine_hook is not None:
                fine_hook(eps, st)
        except MrhomogError as exc:
            row = {"epsilon": eps, "failed": f"{type(exc).__name__}: {exc}"}
            failures.append(row)
        timings[f"fine_{eps!r}"] = time.perf_counter() - t0
        rows.append(row)
    return ConvergenceReport(rows=rows, tensors=tensors, cells=cells, macro=macro, fines=done, timings=timings,
                             failures=failures)


def difference_field(fine: FineState, macro: MacroState) -> np.ndarray:
    """u^eps - u0 at the fine mesh vertices, shape (n_vertices, d)."""
    X = fine.mesh.vertices
    c, b = PointLocator(macro.mesh).locate(X)
    u0 = point_values(macro.V, macro.u0, c, b)
    ue = fine.V.split(fine.u)[:len(X)]
    return ue - u0


def ratios_ok(values, limit: float) -> bool:
    """Strictly decreasing sequence with every adjacent ratio <= limit."""
    v = [float(x) for x in values]
    return len(v) >= 2 and all(b < a and b / a <= limit for a, b in zip(v, v[1:]))
