"""Manufactured solutions for the homogenized solver, shared by several test modules."""
import numpy as np
import sympy as sp

from mrhomog.efftensors import EffectiveTensors
from mrhomog.femcore.problem import DimensionlessParams
from mrhomog.fields import PROFILES
from mrhomog.geomesh import build_box_mesh
from mrhomog.macroms import field_errors, solve_homogenized, solve_induction
from mrhomog.tensoralg import sym_identity


def tensors(d, N=None, phi=0.2, m=0.3, Rm=1.0):
    N = sym_identity(d) if N is None else N
    M = E = None
    if d == 3:
        M, E = m * np.eye(3), Rm * m * np.eye(3)
    return EffectiveTensors(dim=d, N=N, M=M, E=E, volume_fraction=phi)


def _lambdify_vec(exprs, X):
    f = sp.lambdify(X, exprs, "numpy")
    return lambda P: np.stack(np.broadcast_arrays(*f(*[P[..., k] for k in range(len(X))])), -1) * 1.0


def anisotropic_N():
    N = np.zeros((2, 2, 2, 2))
    N[0, 0, 0, 0] = N[1, 1, 1, 1] = 1.6
    N[0, 0, 1, 1] = N[1, 1, 0, 0] = -0.1
    for i, j in ((0, 1), (1, 0)):
        for k, l in ((0, 1), (1, 0)):
            N[i, j, k, l] = 0.7
    return N


def ns_mms_errors(hs, N=None, Re=1.0):
    """L2 velocity errors of a polynomial Navier-Stokes solution on the unit square."""
    N = anisotropic_N() if N is None else N
    X = sp.symbols("x y")
    x, y = X
    psi = x ** 2 * (1 - x) ** 2 * y ** 2 * (1 - y) ** 2
    u = [sp.diff(psi, y), -sp.diff(psi, x)]
    p = x ** 2 * y - sp.Rational(1, 6)
    D = [[(sp.diff(u[i], X[j]) + sp.diff(u[j], X[i])) / 2 for j in range(2)] for i in range(2)]
    sig = [[2 * sum(N[i, j, k, l] * D[k][l] for k in range(2) for l in range(2)) for j in range(2)]
           for i in range(2)]
    conv = [u[0] * sp.diff(c, x) + u[1] * sp.diff(c, y) for c in u]
    # momentum: -div(2 N D u) + Re (u.grad) u - grad p = Re g  (pressure enters with + p div v)
    g = [(-sum(sp.diff(sig[i][j], X[j]) for j in range(2)) + Re * conv[i] - sp.diff(p, X[i])) / Re
         for i in range(2)]
    G, U = _lambdify_vec(g, X), _lambdify_vec(u, X)
    errs = []
    for h in hs:
        st = solve_homogenized(tensors(2, N), DimensionlessParams(Re=Re), G, None, build_box_mesh([0, 0], [1, 1], h))
        errs.append(field_errors(st.V, st.u0, U)["L2"])
    return list(hs), errs


def _loop_gradient(P):
    a = (1, 1, -2)
    S, C = np.sin(np.pi * P), np.cos(np.pi * P)
    out = np.zeros(P.shape + (3,))
    for i in range(3):
        for k in range(3):
            v = a[i] * np.ones(P.shape[:-1])
            for j in range(3):
                if j == k:
                    v = v * (np.pi * C[..., j] if j == i else -np.pi * S[..., j])
                else:
                    v = v * (S[..., j] if j == i else C[..., j])
            out[..., i, k] = v
    return out


def induction_mms_errors(hs, m=0.3, Rm=2.0, phi=0.5):
    """H1 errors of the decoupled reluctivity system with the 'loop' field as exact solution."""
    B = PROFILES["loop"]
    # the loop field is div-free with curl curl B = 3 pi^2 B
    src = lambda P: m * 3 * np.pi ** 2 * B(P) / (Rm * phi)  # noqa: E731
    errs = []
    for h in hs:
        W, b = solve_induction(m * np.eye(3), Rm, src, build_box_mesh([0, 0, 0], [1, 1, 1], h), phi)
        errs.append(field_errors(W, b, B, grad=_loop_gradient)["H1"])
    return list(hs), errs
