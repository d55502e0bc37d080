"""Small dense tensor algebra.

Permutation symbols, cross products, fourth-rank tensors acting on
symmetric matrices, and symmetry/ellipticity diagnostics.  Indices in the
public helpers are 1-based to match the usual index notation; array
layouts are 0-based numpy arrays.
"""
from __future__ import annotations

import itertools

import numpy as np

from .errors import ArgumentError, NumericalError

SYM_TOL_ANALYTIC = 1e-10
SYM_TOL_FEM = 1e-8


def levi_civita(i: int, j: int, k: int) -> int:
    """Permutation symbol for 1-based indices in {1, 2, 3}."""
    for n in (i, j, k):
        if not isinstance(n, (int, np.integer)) or n < 1 or n > 3:
            raise ArgumentError(f"levi_civita index out of range: {n!r}")
    return int((i - j) * (j - k) * (k - i) / 2)


def levi_civita_array(d: int = 3) -> np.ndarray:
    """Dense eps[i, j, k] (0-based) for d = 3; d = 2 gives the 2-index symbol."""
    if d == 3:
        eps = np.zeros((3, 3, 3))
        for i, j, k in itertools.product(range(3), repeat=3):
            eps[i, j, k] = levi_civita(i + 1, j + 1, k + 1)
        return eps
    if d == 2:
        return np.array([[0.0, 1.0], [-1.0, 0.0]])
    raise ArgumentError(f"unsupported dimension {d}")


def cross(a, b) -> np.ndarray:
    """c_i = eps_ijk a_j b_k for length-3 vectors (stacked on the last axis)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != 3 or b.shape[-1] != 3:
        raise ArgumentError("cross expects vectors of length 3; embed 2D vectors as (a1, a2, 0)")
    return np.cross(a, b)


def cross2(a, b) -> np.ndarray:
    """Scalar 2D cross product a1 b2 - a2 b1."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def scalar_cross(c, b) -> np.ndarray:
    """Out-of-plane scalar c crossed with in-plane b: (-c b2, c b1)."""
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.stack([-c * b[..., 1], c * b[..., 0]], axis=-1)


def sym_identity(d: int) -> np.ndarray:
    """I_ijmn = (d_im d_jn + d_in d_jm) / 2."""
    eye = np.eye(d)
    return 0.5 * (np.einsum("im,jn->ijmn", eye, eye) + np.einsum("in,jm->ijmn", eye, eye))


def tensor4_apply(N, S) -> np.ndarray:
    """result_mn = N_ijmn S_ij."""
    N = np.asarray(N, dtype=float)
    S = np.asarray(S, dtype=float)
    d = S.shape[0]
    if S.shape != (d, d) or N.shape != (d, d, d, d):
        raise ArgumentError(f"dimension mismatch: N{N.shape}, S{S.shape}")
    return np.einsum("ijmn,ij->mn", N, S)


def voigt_basis(d: int) -> np.ndarray:
    """Orthonormal basis of symmetric d x d matrices, shape (nv, d, d).

    Ordering is (11, 22[, 33]) followed by the off-diagonal pairs
    (12[, 13, 23]); off-diagonal basis matrices carry 1/sqrt(2) so that
    Voigt vectors use the sqrt(2) scaling.
    """
    mats = []
    for i in range(d):
        m = np.zeros((d, d))
        m[i, i] = 1.0
        mats.append(m)
    for i, j in itertools.combinations(range(d), 2):
        m = np.zeros((d, d))
        m[i, j] = m[j, i] = 1.0 / np.sqrt(2.0)
        mats.append(m)
    return np.array(mats)


def to_voigt(S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    return np.einsum("aij,ij->a", voigt_basis(S.shape[0]), S)


def from_voigt(v, d: int) -> np.ndarray:
    return np.einsum("a,aij->ij", np.asarray(v, dtype=float), voigt_basis(d))


def voigt_matrix(N) -> np.ndarray:
    """Matrix of the quadratic form S -> S:N:S in the orthonormal Voigt basis."""
    N = np.asarray(N, dtype=float)
    V = voigt_basis(N.shape[0])
    return np.einsum("aij,ijmn,bmn->ab", V, N, V)


def major_symmetry_deviation(N) -> float:
    N = np.asarray(N, dtype=float)
    return float(np.max(np.abs(N - N.transpose(2, 3, 0, 1)))) if N.size else 0.0


def minor_symmetry_deviation(N) -> float:
    N = np.asarray(N, dtype=float)
    return float(max(np.max(np.abs(N - N.transpose(1, 0, 2, 3))),
                     np.max(np.abs(N - N.transpose(0, 1, 3, 2)))))


def ellipticity_report(T, tol: float | None = None) -> dict:
    """Smallest eigenvalue and major symmetry of a Tensor4 or a matrix.

    For a fourth-rank tensor the eigenvalues are those of the symmetrized
    Voigt matrix, i.e. of the quadratic form on symmetric matrices.
    """
    T = np.asarray(T, dtype=float)
    if not np.all(np.isfinite(T)):
        raise ArgumentError("tensor has non-finite entries")
    if tol is None:
        tol = SYM_TOL_ANALYTIC
    if T.ndim == 4:
        A = voigt_matrix(T)
        dev = major_symmetry_deviation(T)
    elif T.ndim == 2:
        A = T
        dev = float(np.max(np.abs(T - T.T))) if T.size else 0.0
    else:
        raise ArgumentError(f"expected rank 2 or 4, got rank {T.ndim}")
    As = 0.5 * (A + A.T)
    try:
        eig = np.linalg.eigvalsh(As)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalError(f"eigen-solve failed (cond={np.linalg.cond(As):.3e})") from exc
    return {
        "min_eigenvalue": float(eig[0]),
        "eigenvalues": eig.tolist(),
        "major_symmetric": bool(dev <= tol),
        "symmetry_deviation": dev,
        "tolerance_used": float(tol),
    }
