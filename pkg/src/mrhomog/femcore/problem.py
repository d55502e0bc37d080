"""The coupled velocity/pressure/magnetic weak problem and its Picard solve.

Unknowns (u, p[, B]) with u in a constrained P2 space, p in P1 and B in
P2.  The static part (A blocks, divergence, loads) is assembled once; the
frozen convection/coupling operator is rebuilt each Picard step by a
user-supplied callback.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .constraints import Constraint
from .forms import convection_matrix, divergence_form, induction_matrix, lorentz_matrix, mass_form
from .solvers import Factorized, PicardResult, SaddleSystem, picard_solve
from .spaces import FESpace


@dataclass
class DimensionlessParams:
    Re: float = 1.0
    Rm: float = 1.0
    Al: float = 0.0

    def __post_init__(self):
        from ..errors import ValidationError
        for name in ("Re", "Rm", "Al"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and non-negative, got {v}")
            setattr(self, name, v)
        if self.Rm <= 0:
            raise ValidationError("Rm must be positive")

    @property
    def magnetic(self) -> bool:
        return self.Al > 0


@dataclass
class MixedState:
    u: np.ndarray
    p: np.ndarray
    B: np.ndarray | None = None
    history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True
    residual: float = 0.0
    u_reduced: np.ndarray | None = None


class MixedProblem:
    def __init__(self, V: FESpace, Q: FESpace, cu: Constraint, cp: Constraint, A_uu, f_u,
                 W: FESpace | None = None, cb: Constraint | None = None, A_bb=None, f_b=None,
                 nonlinear=None, G_u=None, G_b=None, zero_mean=True):
        self.V, self.Q, self.W = V, Q, W
        self.cu, self.cp, self.cb = cu, cp, cb
        self.A_uu, self.A_bb = A_uu, A_bb
        self.f_u = f_u
        self.f_b = f_b
        self.nonlinear = nonlinear
        self.Bdiv = divergence_form(V, Q)
        self.mass_p = mass_form(Q)
        self.mean_full = np.asarray(self.mass_p.sum(axis=1)).ravel()
        self.zero_mean = zero_mean
        self.G_u = G_u
        self.G_b = G_b
        self.nu = V.ndofs
        self.nb = W.ndofs if W is not None else 0

    @property
    def has_B(self) -> bool:
        return self.W is not None

    def split(self, x):
        return x[:self.nu], x[self.nu:]

    def norm(self, x):
        """Product norm: sqrt(|u|_G_u^2 + |B|_G_b^2)."""
        u, b = self.split(x)
        s = float(u @ (self.G_u @ u)) if self.G_u is not None else float(u @ u)
        if self.has_B:
            s += float(b @ (self.G_b @ b)) if self.G_b is not None else float(b @ b)
        return float(np.sqrt(max(s, 0.0)))

    def operator(self, x):
        """Full (unreduced) primal operator at the frozen state x."""
        u, b = self.split(x)
        blocks = self.nonlinear(u, b if self.has_B else None) if self.nonlinear is not None else None
        if self.has_B:
            Cuu, Cub, Cbu = blocks if blocks is not None else (None, None, None)
            Auu = self.A_uu if Cuu is None else self.A_uu + Cuu
            return sp.bmat([[Auu, Cub], [Cbu, self.A_bb]], format="csr")
        Cuu = blocks[0] if blocks is not None else None
        return self.A_uu if Cuu is None else (self.A_uu + Cuu).tocsr()

    def _prolongation(self):
        if self.has_B:
            P = sp.block_diag([self.cu.P, self.cb.P], format="csr")
            off = np.concatenate([self.cu.offset, self.cb.offset])
        else:
            P, off = self.cu.P, self.cu.offset
        return P, off

    def linear_solve(self, x_frozen) -> tuple[np.ndarray, np.ndarray, float, np.ndarray]:
        P, off = self._prolongation()
        K = self.operator(x_frozen)
        f = np.concatenate([self.f_u, self.f_b]) if self.has_B else self.f_u
        Kr = (P.T @ K @ P).tocsr()
        fr = P.T @ (f - K @ off)
        Bfull = self.Bdiv
        if self.has_B:
            Bfull = sp.hstack([Bfull, sp.csr_matrix((Bfull.shape[0], self.nb))], format="csr")
        Br = (self.cp.P.T @ Bfull @ P).tocsr()
        gr = -(self.cp.P.T @ (Bfull @ off))
        mean = self.cp.P.T @ self.mean_full if self.zero_mean else None
        hints = [] if self.zero_mean else ["constant pressure mode"]
        sys = SaddleSystem(A=Kr, f=fr, B=Br, g=gr, mean=mean, hints=hints)
        sol = Factorized(sys).solve()
        x = P @ sol.x + off
        p = self.cp.expand(sol.p)
        return x, p, sol.residual, sol.x

    def solve(self, tol=1e-9, maxit=30, x0=None, report=None) -> MixedState:
        n = self.nu + self.nb
        x0 = np.zeros(n) if x0 is None else x0
        last = {}

        def step(x):
            xn, p, res, z = self.linear_solve(x)
            last["p"] = p
            last["res"] = res
            last["z"] = z
            return xn

        linear = self.nonlinear is None
        result: PicardResult = picard_solve(step, x0, tol=tol, maxit=maxit, norm=self.norm, linear=linear,
                                            report=report)
        u, b = self.split(result.state)
        return MixedState(u=u, p=last["p"], B=b if self.has_B else None, history=result.history,
                          iterations=result.iterations, converged=result.converged, residual=last["res"],
                          u_reduced=last["z"][:self.cu.n_reduced])

    def reduced_residual(self, x, p) -> np.ndarray:
        """P^T (K(x) x + B^T p - f) on the primal unknowns at a fixed point."""
        P, _ = self._prolongation()
        K = self.operator(x)
        f = np.concatenate([self.f_u, self.f_b]) if self.has_B else self.f_u
        r = K @ x - f
        r[:self.nu] += self.Bdiv.T @ p
        return P.T @ r

    def trilinear_value(self, x) -> float:
        """C(x; x, x) using the assembled frozen operator."""
        if self.nonlinear is None:
            return 0.0
        u, b = self.split(x)
        blocks = self.nonlinear(u, b if self.has_B else None)
        if self.has_B:
            Cuu, Cub, Cbu = blocks
            val = u @ (Cuu @ u) + u @ (Cub @ b) + b @ (Cbu @ u)
        else:
            val = u @ (blocks[0] @ u)
        return float(val)


def coupling_callback(V: FESpace, W: FESpace | None, Re: float, Al: float, conv_where="all",
                      lorentz_where="solid", lorentz_scale=1.0, E=None, E_where="solid"):
    """Picard-frozen trilinear operator blocks.

    Convection uses the skew-symmetric form.  Magnetic blocks implement
    -Al int [(curl C2 x C1) . u3 + (u2 x C1) . E curl C3] with frozen C1.
    """

    def cb(u, b):
        uq, _ = V.evaluate(u, 3 * V.order + 1)
        Cuu = convection_matrix(V, uq, where=conv_where, scale=Re) if Re != 0 else None
        if W is None:
            return (Cuu,)
        if Al == 0:
            z = sp.csr_matrix((V.ndofs, W.ndofs))
            return Cuu, z, z.T.tocsr()
        bq, _ = W.evaluate(b, 3 * W.order + 1)
        Cub = lorentz_matrix(V, W, bq, where=lorentz_where, scale=-Al * lorentz_scale)
        Cbu = induction_matrix(V, W, bq, E=E, where=E_where, scale=-Al)
        return Cuu, Cub, Cbu

    return cb
