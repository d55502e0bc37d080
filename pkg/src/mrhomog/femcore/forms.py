"""Sparse assembly of bilinear, trilinear and linear forms.

Most second-order forms are expressed through one kernel,
    a(u, v) = int w K[i,k,p,r] d_k u_i d_r v_p,
with a constant 4-index coefficient array K.  The symmetric-gradient,
div-div, curl-curl and full-gradient forms are all special cases; see
``K_*`` helpers below.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import ArgumentError, ConfigurationError
from ..tensoralg import levi_civita_array
from .spaces import FESpace, cell_weights


# ------------------------------------------------------------ coefficient arrays

def K_grad(d: int) -> np.ndarray:
    eye = np.eye(d)
    return np.einsum("ip,kr->ikpr", eye, eye)


def K_div(d: int) -> np.ndarray:
    eye = np.eye(d)
    return np.einsum("ik,pr->ikpr", eye, eye)


def K_sym(N: np.ndarray) -> np.ndarray:
    """2 N_ijmn D(u)_ij D(v)_mn as a gradient form (symmetrized over index pairs)."""
    N = np.asarray(N, dtype=float)
    S = 0.25 * (N + N.transpose(1, 0, 2, 3) + N.transpose(0, 1, 3, 2) + N.transpose(1, 0, 3, 2))
    return 2.0 * S


def K_curl(M: np.ndarray) -> np.ndarray:
    """curl u . M curl v  ==  M_jq eps_ijk eps_pqr d_k u_i d_r v_p (3D)."""
    eps = levi_civita_array(3)
    return np.einsum("jq,ijk,pqr->ikpr", np.asarray(M, dtype=float), eps, eps)


def K_curl2d() -> np.ndarray:
    """Scalar 2D curl (d1 u2 - d2 u1) squared."""
    e = levi_civita_array(2)
    return np.einsum("ki,rp->ikpr", e, e)


def F_uxb(E: np.ndarray) -> np.ndarray:
    """E_kq (u x b)_k (curl c)_q == F[i,j,p,r] u_i b_j d_r c_p."""
    eps = levi_civita_array(3)
    return np.einsum("kq,ijk,pqr->ijpr", np.asarray(E, dtype=float), eps, eps)


# ------------------------------------------------------------------ helpers

def _scatter(test: FESpace, trial: FESpace, Aloc: np.ndarray, shape=None) -> sp.csr_matrix:
    rows = test.cell_dofs()
    cols = trial.cell_dofs()
    nc, nt = rows.shape
    ns = cols.shape[1]
    R = np.broadcast_to(rows[:, :, None], (nc, nt, ns)).ravel()
    C = np.broadcast_to(cols[:, None, :], (nc, nt, ns)).ravel()
    shape = shape or (test.ndofs, trial.ndofs)
    A = sp.coo_matrix((Aloc.ravel(), (R, C)), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _weights(space: FESpace, degree, where, coef=None):
    ed = space.element_data(degree)
    w = ed.weights * cell_weights(space.mesh, where)[:, None]
    if coef is not None:
        c = np.asarray(coef, dtype=float)
        w = w * (c[:, None] if c.ndim == 1 else c)
    return ed, w


def _chunks(n, size=4000):
    for s in range(0, n, size):
        yield slice(s, min(n, s + size))


def gradient_form(space: FESpace, K: np.ndarray, where="all", coef=None, degree=None, symmetrize=True):
    """int w K[i,k,p,r] d_k u_i d_r v_p on a vector space (trial=test=space)."""
    d = space.dim
    if space.ncomp != d:
        raise ConfigurationError("gradient_form expects a vector space")
    ed, w = _weights(space, degree, where, coef)
    nc, nl = len(space.mesh.cells), space.nloc
    out = np.empty((nc, d, nl, d, nl))
    for s in _chunks(nc):
        G = ed.grad[s]
        # S[e,a,r,b,k] = sum_q w g_a[r] g_b[k]
        S = np.einsum("eq,eqar,eqbk->earbk", w[s], G, G, optimize=True)
        out[s] = np.einsum("ikpr,earbk->epaib", K, S, optimize=True)
    A = _scatter(space, space, out.reshape(nc, d * nl, d * nl))
    return 0.5 * (A + A.T) if symmetrize else A


def stiffness_form(space: FESpace, where="all", coef=None, degree=None):
    """int w grad u : grad v (scalar or vector)."""
    ed, w = _weights(space, degree, where, coef)
    loc = np.einsum("eq,eqad,eqbd->eab", w, ed.grad, ed.grad, optimize=True)
    return _block_diag(space, loc)


def mass_form(space: FESpace, where="all", coef=None, degree=None):
    if degree is None:
        degree = 2 * space.order + 1
    ed, w = _weights(space, degree, where, coef)
    loc = np.einsum("eq,qa,qb->eab", w, ed.phi, ed.phi, optimize=True)
    return _block_diag(space, loc)


def _block_diag(space, loc):
    nc, nl, _ = loc.shape
    m = space.ncomp
    out = np.zeros((nc, m, nl, m, nl))
    for c in range(m):
        out[:, c, :, c, :] = loc
    A = _scatter(space, space, out.reshape(nc, m * nl, m * nl))
    return 0.5 * (A + A.T)


def divergence_form(u_space: FESpace, p_space: FESpace, where="all", degree=None):
    """B[q, v] = int q div v (rows pressure, columns velocity)."""
    if u_space.mesh is not p_space.mesh:
        raise ConfigurationError("spaces must share a mesh")
    if not (u_space.order == 2 and p_space.order == 1):
        raise ConfigurationError("divergence coupling requires the Taylor-Hood pair (P2 velocity, P1 pressure)")
    if degree is None:
        degree = 3
    ed_u = u_space.element_data(degree)
    ed_p = p_space.element_data(degree)
    w = ed_u.weights * cell_weights(u_space.mesh, where)[:, None]
    loc = np.einsum("eq,qa,eqbi->eaib", w, ed_p.phi, ed_u.grad, optimize=True)
    nc = loc.shape[0]
    return _scatter(p_space, u_space, loc.reshape(nc, p_space.nloc, -1))


def load_vector(space: FESpace, f, where="all", degree=None, values=None):
    """int f . v for f a callable of points (returns (..., ncomp)) or given quadrature values."""
    if degree is None:
        degree = 2 * space.order + 3
    ed, w = _weights(space, degree, where)
    if values is None:
        F = np.asarray(f(ed.points), dtype=float)
    else:
        F = np.asarray(values, dtype=float)
    if space.ncomp == 1 and F.ndim == 2:
        F = F[..., None]
    if F.shape[-1] != space.ncomp:
        raise ArgumentError(f"load has {F.shape[-1]} components, space has {space.ncomp}")
    loc = np.einsum("eq,qa,eqc->eca", w, ed.phi, F)
    nc = loc.shape[0]
    b = np.zeros(space.ndofs)
    np.add.at(b, space.cell_dofs().ravel(), loc.reshape(nc, -1).ravel())
    return b


def convection_matrix(space: FESpace, wvals: np.ndarray, where="all", degree=None, skew=True, scale=1.0):
    """Matrix of (w . grad) u . v for a frozen velocity given at quadrature points.

    With ``skew`` the skew-symmetric form 1/2[(w.grad)u.v - (w.grad)v.u] is
    returned, so the form vanishes identically when u = v.
    """
    if degree is None:
        degree = 3 * space.order + 1
    ed, w = _weights(space, degree, where)
    # K1[a,b] = int phi_a (w . grad phi_b)
    K1 = np.einsum("eq,qa,eqd,eqbd->eab", w, ed.phi, wvals, ed.grad, optimize=True)
    loc = 0.5 * (K1 - K1.transpose(0, 2, 1)) if skew else K1
    nc, nl, _ = loc.shape
    m = space.ncomp
    out = np.zeros((nc, m, nl, m, nl))
    for c in range(m):
        out[:, c, :, c, :] = scale * loc
    return _scatter(space, space, out.reshape(nc, m * nl, m * nl))


def lorentz_matrix(u_space: FESpace, B_space: FESpace, Bvals: np.ndarray, where="solid", degree=None, scale=1.0):
    """T1[(u-test),(B-trial)] = int ((curl C) x Bk) . v  (3D)."""
    if u_space.dim != 3:
        raise ConfigurationError("magnetic coupling is implemented in 3D")
    if degree is None:
        degree = 3 * u_space.order + 1
    ed, w = _weights(u_space, degree, where)
    edB = B_space.element_data(degree)
    eps = levi_civita_array(3)
    L = np.einsum("pjl,jki,eql->eqpik", eps, eps, Bvals, optimize=True)
    loc = np.einsum("eq,qa,eqbk,eqpik->epaib", w, ed.phi, edB.grad, L, optimize=True)
    nc = loc.shape[0]
    return _scatter(u_space, B_space, scale * loc.reshape(nc, 3 * u_space.nloc, 3 * B_space.nloc))


def induction_matrix(u_space: FESpace, B_space: FESpace, Bvals: np.ndarray, E=None, where="solid",
                     degree=None, scale=1.0):
    """T2[(B-test),(u-trial)] = int E_kq (u x Bk)_k (curl C)_q  (E = identity by default)."""
    if u_space.dim != 3:
        raise ConfigurationError("magnetic coupling is implemented in 3D")
    if degree is None:
        degree = 3 * u_space.order + 1
    E = np.eye(3) if E is None else E
    ed, w = _weights(B_space, degree, where)
    edu = u_space.element_data(degree)
    F = F_uxb(E)
    L = np.einsum("ijpr,eqj->eqipr", F, Bvals, optimize=True)
    loc = np.einsum("eq,qb,eqar,eqipr->epaib", w, edu.phi, ed.grad, L, optimize=True)
    nc = loc.shape[0]
    return _scatter(B_space, u_space, scale * loc.reshape(nc, 3 * B_space.nloc, 3 * u_space.nloc))


# ----------------------------------------------------------- scalar integrals

def integrate(space: FESpace, integrand_vals: np.ndarray, where="all", degree=None) -> float:
    """Sum of w * values over quadrature points of the selected cells."""
    ed, w = _weights(space, degree, where)
    return float(np.sum(w * integrand_vals))


def field_norms(space: FESpace, coef, where="all", degree=None):
    """(L2 norm, H1 seminorm) of a discrete field."""
    vals, grads = space.evaluate(coef, degree)
    ed, w = _weights(space, degree, where)
    l2 = np.sum(w * np.sum(vals ** 2, axis=-1))
    h1 = np.sum(w * np.sum(grads ** 2, axis=(-1, -2)))
    return float(np.sqrt(l2)), float(np.sqrt(h1))


def gradient_load(space: FESpace, F, where="all", degree=None):
    """int F[p,k] d_k v_p for constant F (ncomp, d) or quadrature values (nc, nq, ncomp, d)."""
    ed, w = _weights(space, degree, where)
    F = np.asarray(F, dtype=float)
    if F.ndim == 2:
        loc = np.einsum("eq,pk,eqak->epa", w, F, ed.grad, optimize=True)
    else:
        loc = np.einsum("eq,eqpk,eqak->epa", w, F, ed.grad, optimize=True)
    nc = loc.shape[0]
    b = np.zeros(space.ndofs)
    np.add.at(b, space.cell_dofs().ravel(), loc.reshape(nc, -1).ravel())
    return b


def mean_rows(space: FESpace, degree=None) -> sp.csr_matrix:
    """Rows r_c with r_c . u = int u_c (one row per component)."""
    ed = space.element_data(degree)
    loc = np.einsum("eq,qa->ea", ed.weights, ed.phi)
    m = np.zeros(space.n_nodes)
    np.add.at(m, space.cell_nodes.ravel(), loc.ravel())
    nn = space.n_nodes
    rows = np.repeat(np.arange(space.ncomp), nn)
    cols = np.arange(space.ndofs)
    return sp.csr_matrix((np.tile(m, space.ncomp), (rows, cols)), shape=(space.ncomp, space.ndofs))
