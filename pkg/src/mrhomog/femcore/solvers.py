"""Direct solves of saddle-point systems and Picard iteration.

Factorizations use MKL PARDISO (through pypardiso) when the runtime library
can be loaded, pinned to one thread by default so repeated runs are bitwise
identical (see ``set_threads``).
Otherwise SuperLU is used; it is adequate for 2D but its fill on 3D
Taylor-Hood systems is prohibitive.
"""
from __future__ import annotations

import glob
import os
import site
import sys as _sys
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import NonConvergenceError, SingularSystemError

RESIDUAL_TOL = 1e-10
_THREADS = {"n": 1}


def set_threads(n: int):
    """Thread count for the sparse direct solver; 1 keeps results bitwise reproducible."""
    n = int(n)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _THREADS["n"] = n


def get_threads() -> int:
    return _THREADS["n"]


@dataclass
class SaddleSystem:
    """[A B^T C^T; B 0 0; C 0 0] with an optional zero-mean row on the multiplier block.

    ``mean`` (len = rows of B) adds one extra multiplier enforcing mean . p = 0.
    ``C`` holds extra linear constraints C x = h on the primal unknowns.
    """

    A: sp.spmatrix
    f: np.ndarray
    B: sp.spmatrix | None = None
    g: np.ndarray | None = None
    mean: np.ndarray | None = None
    C: sp.spmatrix | None = None
    h: np.ndarray | None = None
    symmetric: bool = False
    hints: list = field(default_factory=list)


@dataclass
class SaddleSolution:
    x: np.ndarray
    p: np.ndarray | None
    mult: np.ndarray | None
    residual: float


def _kkt(sys: SaddleSystem):
    n = sys.A.shape[0]
    blocks = [[sys.A]]
    rhs = [np.asarray(sys.f, dtype=float)]
    m = 0
    if sys.B is not None:
        m = sys.B.shape[0]
        blocks[0].append(sys.B.T)
        blocks.append([sys.B, None])
        rhs.append(np.zeros(m) if sys.g is None else np.asarray(sys.g, dtype=float))
    k = 0
    if sys.C is not None:
        k = sys.C.shape[0]
        for row in blocks:
            row.append(None)
        blocks[0][-1] = sys.C.T
        blocks.append([sys.C] + [None] * (len(blocks[0]) - 1))
        rhs.append(np.zeros(k) if sys.h is None else np.asarray(sys.h, dtype=float))
    if sys.mean is not None and m:
        mvec = sp.csr_matrix(np.asarray(sys.mean, dtype=float).reshape(-1, 1))
        for row in blocks:
            row.append(None)
        blocks[1][-1] = mvec
        last = [None] * len(blocks[0])
        last[1] = mvec.T
        blocks.append(last)
        rhs.append(np.zeros(1))
    K = sp.bmat(blocks, format="csc")
    return K, np.concatenate(rhs), n, m, k


_PARDISO = {"checked": False, "module": None}


def _locate_mkl_rt():
    if os.environ.get("PYPARDISO_MKL_RT"):
        return os.environ["PYPARDISO_MKL_RT"]
    roots = {_sys.prefix, _sys.base_prefix, "/usr/local", "/usr", site.USER_BASE or ""}
    for root in sorted(r for r in roots if r):
        hits = sorted(glob.glob(os.path.join(root, "lib*", "libmkl_rt.so*")), key=len)
        if hits:
            return hits[0]
    return None


def pardiso_available() -> bool:
    if not _PARDISO["checked"]:
        _PARDISO["checked"] = True
        if os.environ.get("MRHOMOG_SOLVER", "").lower() == "superlu":
            return False
        path = _locate_mkl_rt()
        if path:
            os.environ.setdefault("PYPARDISO_MKL_RT", path)
        try:
            import pypardiso
            pypardiso.PyPardisoSolver()
            _PARDISO["module"] = pypardiso
        except (ImportError, OSError):
            _PARDISO["module"] = None
    return _PARDISO["module"] is not None


class _PardisoLU:
    def __init__(self, K: sp.csr_matrix, plain: bool = False):
        mod = _PARDISO["module"]
        self.K = sp.csr_matrix(K)
        self.K.sort_indices()
        self.plain = plain
        self.solver = mod.PyPardisoSolver(mtype=11)
        self.solver.libmkl.MKL_Set_Num_Threads(_THREADS["n"])
        if plain:
            # no scaling / weighted matching; pivot perturbation 1e-13 plus refinement
            for i, v in ((1, 1), (2, 2), (10, 13), (11, 0), (13, 0)):
                self.solver.set_iparm(i, v)
        try:
            self.solver.factorize(self.K)
        except Exception as exc:  # pypardiso raises its own error type
            raise RuntimeError(str(exc)) from exc

    def solve(self, b):
        return self.solver.solve(self.K, np.asarray(b, dtype=float))

    def __del__(self):
        try:
            self.solver.free_memory(everything=True)
        except Exception:
            pass


class _SuperLU:
    def __init__(self, K: sp.csc_matrix):
        self.lu = spla.splu(sp.csc_matrix(K), permc_spec="COLAMD", diag_pivot_thresh=1e-3,
                            options=dict(SymmetricMode=True))

    def solve(self, b):
        return self.lu.solve(np.asarray(b, dtype=float))


def factorize(K):
    """Direct factorization object with a ``solve(b)`` method."""
    if pardiso_available():
        return _PardisoLU(K, plain=True)
    return _SuperLU(K)


class Factorized:
    """Reusable factorization of a KKT matrix (several right-hand sides)."""

    def __init__(self, sys: SaddleSystem):
        self.sys = sys
        self.K, self.rhs, self.n, self.m, self.k = _kkt(sys)
        try:
            self.lu = factorize(self.K)
        except RuntimeError as exc:
            raise SingularSystemError(_singular_message(sys, str(exc))) from exc

    def solve_raw(self, rhs: np.ndarray, refine: int = 3) -> tuple[np.ndarray, float]:
        x = self.lu.solve(rhs)
        nb = np.linalg.norm(rhs)
        for _ in range(refine):
            r = rhs - self.K @ x
            if nb == 0 or np.linalg.norm(r) <= 1e-14 * nb:
                break
            x = x + self.lu.solve(r)
        r = rhs - self.K @ x
        res = float(np.linalg.norm(r) / nb) if nb > 0 else float(np.linalg.norm(r))
        if not np.all(np.isfinite(x)):
            raise SingularSystemError(_singular_message(self.sys, "non-finite solution"))
        return x, res

    def solve(self, f=None, g=None, h=None) -> SaddleSolution:
        rhs = self.rhs.copy()
        n, m, k = self.n, self.m, self.k
        if f is not None:
            rhs[:n] = f
        if g is not None:
            rhs[n:n + m] = g
        if h is not None:
            rhs[n + m:n + m + k] = h
        x, res = self.solve_raw(rhs)
        if res > RESIDUAL_TOL and isinstance(self.lu, _PardisoLU) and self.lu.plain:
            # second attempt with scaling and weighted matching
            try:
                self.lu = _PardisoLU(self.K, plain=False)
                x, res = self.solve_raw(rhs)
            except RuntimeError:
                res = np.inf
        if res > RESIDUAL_TOL and isinstance(self.lu, _PardisoLU):
            try:
                self.lu = _SuperLU(self.K)
            except RuntimeError as exc:
                raise SingularSystemError(_singular_message(self.sys, str(exc))) from exc
            x, res = self.solve_raw(rhs)
        if res > RESIDUAL_TOL:
            detail = f"relative residual {res:.2e} exceeds {RESIDUAL_TOL:g}"
            raise SingularSystemError(_singular_message(self.sys, detail))
        return SaddleSolution(x=x[:n], p=x[n:n + m] if m else None,
                              mult=x[n + m:n + m + k] if k else None, residual=res)


def _singular_message(sys: SaddleSystem, detail: str) -> str:
    hints = list(sys.hints)
    if sys.B is not None and sys.mean is None:
        hints.append("constant pressure mode: add the zero-mean pressure constraint")
    msg = f"singular or ill-conditioned saddle system ({detail})"
    if hints:
        msg += "; null-space candidates: " + "; ".join(hints)
    return msg


def solve_saddle(sys: SaddleSystem) -> SaddleSolution:
    return Factorized(sys).solve()


@dataclass
class PicardResult:
    state: object
    history: list
    iterations: int
    converged: bool


def picard_solve(step, x0, tol: float = 1e-9, maxit: int = 30, norm=np.linalg.norm, linear: bool = False,
                 report=None, atol: float = 1e-14) -> PicardResult:
    """Fixed-point iteration x_{k+1} = step(x_k).

    ``step`` returns the new primal vector (and may stash extra data on
    itself).  Stops when ||x_{k+1} - x_k|| <= tol ||x_k||, or when the update
    is below the absolute floor ``atol`` (roundoff-level solutions).  A
    linear problem stops after one solve.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    history = []
    x = np.asarray(x0, dtype=float)
    prev = None
    for it in range(1, maxit + 1):
        xn = step(x)
        upd = float(norm(xn - x))
        ref = float(norm(x))
        ratio = upd / prev if prev not in (None, 0.0) else None
        history.append({"iteration": it, "update": upd, "norm": float(norm(xn)), "ratio": ratio})
        prev = upd
        x = xn
        if linear or upd <= tol * ref or upd <= atol:
            return PicardResult(state=x, history=history, iterations=it, converged=True)
        if not np.isfinite(upd):
            break
    raise NonConvergenceError(
        f"Picard iteration did not converge in {maxit} iterations (last update {history[-1]['update']:.3e})",
        history=history, report=report)
