"""Spectral estimates: discrete inf-sup constant, pencil minima, L4 embedding ratio."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from ..errors import NumericalError, SingularSystemError
from .forms import load_vector
from .solvers import SaddleSystem, _kkt, factorize
from .spaces import FESpace


def _null_of_vector(m: np.ndarray) -> np.ndarray:
    """Orthonormal basis (n, n-1) of the complement of span{m}."""
    n = len(m)
    Q, _ = np.linalg.qr(np.column_stack([m / np.linalg.norm(m), np.eye(n)[:, :n - 1]]))
    return Q[:, 1:n]


DENSE_PRESSURE_LIMIT = 1500


def infsup_constant(Bm, Gv, Mp, mean=None, chunk: int = 256, method: str = "auto") -> dict:
    """Smallest generalized singular value of B w.r.t. the Gv and Mp norms.

    beta^2 = min eig of (B Gv^{-1} B^T, Mp), restricted to mean . q = 0 when
    ``mean`` is given.  ``method`` is "dense" (explicit Schur complement),
    "iterative" (shift-invert through the saddle system) or "auto".
    """
    Bm = Bm.tocsr()
    npr = Bm.shape[0]
    if method == "auto":
        method = "dense" if npr <= DENSE_PRESSURE_LIMIT or mean is None else "iterative"
    if method == "iterative":
        return _infsup_iterative(Bm, Gv, Mp, mean)
    lu = factorize(Gv.tocsc())
    S = np.empty((npr, npr))
    BT = Bm.T.tocsc()
    for s in range(0, npr, chunk):
        e = min(npr, s + chunk)
        X = lu.solve(BT[:, s:e].toarray())
        S[:, s:e] = Bm @ X
    S = 0.5 * (S + S.T)
    M = Mp.toarray()
    if mean is not None:
        Z = _null_of_vector(np.asarray(mean, dtype=float))
        S = Z.T @ S @ Z
        M = Z.T @ M @ Z
    if S.shape[0] == 0:
        raise SingularSystemError("empty pressure space")
    lam = sla.eigh(S, M, eigvals_only=True, subset_by_index=[0, min(2, S.shape[0] - 1)])
    beta = float(np.sqrt(max(lam[0], 0.0)))
    return {"beta": beta, "lowest": [float(np.sqrt(max(v, 0.0))) for v in lam], "n_pressure": int(S.shape[0]),
            "method": "dense"}


def _infsup_iterative(Bm, Gv, Mp, mean, k: int = 3) -> dict:
    n, m = Gv.shape[0], Bm.shape[0]
    mean = np.asarray(mean, dtype=float)
    K, _, _, _, _ = _kkt(SaddleSystem(A=Gv.tocsr(), f=np.zeros(n), B=Bm, g=np.zeros(m), mean=mean))
    try:
        lu = factorize(K)
    except RuntimeError as exc:
        raise SingularSystemError(f"saddle factorization failed: {exc}") from exc
    glu = factorize(Gv.tocsc())
    BT = Bm.T.tocsr()

    def schur(q):
        return Bm @ glu.solve(BT @ np.asarray(q).ravel())

    def opinv(r):
        rhs = np.zeros(K.shape[0])
        rhs[n:n + m] = np.asarray(r).ravel()
        return -lu.solve(rhs)[n:n + m]

    S = spla.LinearOperator((m, m), matvec=schur, dtype=float)
    Op = spla.LinearOperator((m, m), matvec=opinv, dtype=float)
    v0 = opinv(np.cos(np.arange(m) * 0.7) + 1e-3)
    try:
        vals = spla.eigsh(S, k=k, M=Mp.tocsc(), sigma=0.0, which="LM", OPinv=Op, v0=v0, tol=1e-10,
                          return_eigenvectors=False)
    except (spla.ArpackError, spla.ArpackNoConvergence) as exc:
        raise NumericalError(f"eigenvalue solver failed: {exc}") from exc
    lam = np.sort(vals)
    return {"beta": float(np.sqrt(max(lam[0], 0.0))), "lowest": [float(np.sqrt(max(v, 0.0))) for v in lam],
            "n_pressure": int(m - 1), "method": "iterative"}


def smallest_pencil_eigenvalue(A, G, k: int = 1) -> float:
    """Smallest lambda with A x = lambda G x (A, G symmetric positive definite)."""
    A = A.tocsc()
    n = A.shape[0]
    lu = factorize(A)
    op = spla.LinearOperator((n, n), matvec=lambda x: lu.solve(np.asarray(x).ravel()), dtype=float)
    v0 = np.ones(n) / np.sqrt(n)
    try:
        vals = spla.eigsh(A, k=k, M=G.tocsc(), sigma=0.0, which="LM", OPinv=op, v0=v0, tol=1e-10,
                          return_eigenvectors=False)
    except (spla.ArpackError, spla.ArpackNoConvergence) as exc:
        raise NumericalError(f"eigenvalue solver failed: {exc}") from exc
    return float(np.min(vals))


def l4_ratio(space: FESpace, coef: np.ndarray, G, degree: int = 8) -> float:
    vals, _ = space.evaluate(coef, degree)
    w = space.element_data(degree).weights
    l4 = np.sum(w * np.sum(vals ** 2, -1) ** 2) ** 0.25
    nG = np.sqrt(max(float(coef @ (G @ coef)), 1e-300))
    return float(l4 / nG)


def l4_embedding_estimate(space: FESpace, P, G_full, starts, iters: int = 60, degree: int = 8,
                          rtol: float = 1e-9) -> dict:
    """Lower estimate of sup |v|_{L4} / |v|_G by nonlinear power iteration.

    Iterates v <- G^{-1} N(v) with N(v) = (|v|^2 v, .) over the constrained
    space v = P z; each step does not decrease the ratio.  ``starts`` are
    full coefficient vectors.
    """
    Gr = (P.T @ G_full @ P).tocsc()
    lu = factorize(Gr)
    best = 0.0
    trace = []
    for x0 in starts:
        z = lu.solve(P.T @ (G_full @ x0))
        prev = 0.0
        for _ in range(iters):
            x = P @ z
            r = l4_ratio(space, x, G_full, degree)
            if abs(r - prev) <= rtol * r:
                break
            prev = r
            vals, _ = space.evaluate(x, degree)
            Nv = load_vector(space, None, degree=degree, values=np.sum(vals ** 2, -1)[..., None] * vals)
            z = lu.solve(P.T @ Nv)
            z /= np.sqrt(max(float(z @ (Gr @ z)), 1e-300))
        r = l4_ratio(space, P @ z, G_full, degree)
        trace.append(r)
        best = max(best, r)
    return {"kappa_S": best, "per_start": trace}
