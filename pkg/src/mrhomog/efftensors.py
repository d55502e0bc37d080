"""Effective tensors from cell solutions.

N (flux average and energy forms), M and E (solid averages of curl plus
drive, energy variants and the bilinear variant), with symmetry and
ellipticity reporting.

Note on the flux-average N: for a periodic corrector the cell average of
grad omega vanishes, so that variant reproduces the symmetric identity for
every geometry.  The energy variant carries the stiffening and is the one
used downstream.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cellprob import MagCellSolution, StokesCellSolution, strain_basis
from .errors import DimensionError, StateError
from .tensoralg import (SYM_TOL_FEM, ellipticity_report, major_symmetry_deviation, minor_symmetry_deviation,
                        sym_identity, voigt_basis)


@dataclass
class EffectiveTensors:
    dim: int
    N: np.ndarray  # normative (energy form)
    M: np.ndarray | None
    E: np.ndarray | None
    volume_fraction: float
    variants: dict = field(default_factory=dict)
    consistency: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()
        return {
            "dim": self.dim,
            "N": arr(self.N),
            "M": arr(self.M),
            "E": arr(self.E),
            "volume_fraction": self.volume_fraction,
            "variants": {k: arr(v) for k, v in self.variants.items()},
            "consistency": dict(self.consistency),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EffectiveTensors":
        def arr(a):
            return None if a is None else np.asarray(a, dtype=float)
        return cls(dim=int(d["dim"]), N=arr(d["N"]), M=arr(d.get("M")), E=arr(d.get("E")),
                   volume_fraction=float(d["volume_fraction"]),
                   variants={k: arr(v) for k, v in d.get("variants", {}).items()},
                   consistency=dict(d.get("consistency", {})))


def _strain_fields(cells: StokesCellSolution, degree=3):
    """X[i,j] = E^{ij} - D(omega^{ij}) at quadrature points: (d, d, nc, nq, d, d)."""
    if not cells.complete:
        raise StateError("Stokes cell set incomplete")
    d = cells.dim
    V = cells.V
    out = None
    for i in range(d):
        for j in range(d):
            _, g = V.evaluate(cells.omega[i, j], degree)
            D = 0.5 * (g + np.swapaxes(g, -1, -2))
            X = strain_basis(d, i, j) - D
            if out is None:
                out = np.empty((d, d) + X.shape)
            out[i, j] = X
    return out


def effective_viscosity(cells: StokesCellSolution, degree: int = 3) -> dict:
    """Both N variants and their deviation.

    N_flux_ijmn = <[E^{ij} - D(omega^{ij})]_mn>,
    N_energy_ijmn = <(E^{ij} - D(omega^{ij})) : (E^{mn} - D(omega^{mn}))>.
    """
    X = _strain_fields(cells, degree)
    w = cells.V.element_data(degree).weights
    vol = float(np.sum(w))
    N_flux = np.einsum("eq,ijeqmn->ijmn", w, X) / vol
    N_energy = np.einsum("eq,ijeqab,mneqab->ijmn", w, X, X, optimize=True) / vol
    N_energy = 0.5 * (N_energy + N_energy.transpose(2, 3, 0, 1))
    scale = max(np.max(np.abs(N_energy)), 1e-300)
    dev = float(np.max(np.abs(N_flux - N_energy)) / scale)
    return {"N_flux": N_flux, "N_energy": N_energy, "max_relative_deviation": dev}


def _curls(V, coef, degree):
    _, g = V.evaluate(coef, degree)
    return np.stack([g[..., 2, 1] - g[..., 1, 2], g[..., 0, 2] - g[..., 2, 0], g[..., 1, 0] - g[..., 0, 1]], -1)


def effective_magnetics(mag: MagCellSolution, degree: int = 3) -> dict:
    """M, E (solid averages), energy-form and bilinear variants.

    Normative: M_jq = <1_s [curl Theta^j + e^j]_q>,
               E_kq = <1_s [curl Psi^k + Rm e^k]_q>   (drive-consistent, E = Rm M).
    Also reported: E with the literal e^k term, the energy forms
    <1_s curl(Theta^i + e^i) . curl(Theta^j + e^j)> (where curl e = 0) and
    the bilinear variant <1_s (curl Theta^i + e^i) . (curl Theta^j + e^j)>.
    """
    if mag.mesh.dim != 3:
        raise DimensionError("effective magnetics require a 3D cell solution")
    V = mag.V
    ed = V.element_data(degree)
    vol = float(np.sum(ed.weights))
    ws = ed.weights * mag.mesh.solid_mask()[:, None]
    I3 = np.eye(3)
    cT = np.stack([_curls(V, mag.theta[j], degree) for j in range(3)])  # (3, nc, nq, 3)
    cP = np.stack([_curls(V, mag.psi[j], degree) for j in range(3)])
    vs = float(np.sum(ws))
    M_avg = np.einsum("eq,jeqk->jk", ws, cT) / vol + I3 * vs / vol
    E_avg = np.einsum("eq,jeqk->jk", ws, cP) / vol + mag.Rm * I3 * vs / vol
    E_lit = np.einsum("eq,jeqk->jk", ws, cP) / vol + I3 * vs / vol
    M_energy = np.einsum("eq,ieqk,jeqk->ij", ws, cT, cT) / vol
    E_energy = np.einsum("eq,ieqk,jeqk->ij", ws, cP, cP) / vol
    XT = cT + I3[:, None, None, :]
    Mbil = np.einsum("eq,ieqk,jeqk->ij", ws, XT, XT) / vol
    scale = max(np.max(np.abs(M_avg)), 1e-300)
    return {
        "M_avg": M_avg, "E_avg": E_avg, "E_avg_literal": E_lit, "M_energy_form": M_energy,
        "E_energy_form": E_energy, "M_bilinear": Mbil,
        "E_minus_RmM": float(np.max(np.abs(E_avg - mag.Rm * M_avg)) / max(mag.Rm * scale, 1e-300)) if vs > 0 else 0.0,
        "M_energy_deviation": float(np.max(np.abs(M_energy - M_avg)) / scale) if vs > 0 else 0.0,
        "E_energy_deviation": (float(np.max(np.abs(E_energy - E_avg)) / max(np.max(np.abs(E_avg)), 1e-300))
                               if vs > 0 else 0.0),
    }


def assemble_tensors(cells: StokesCellSolution, mag: MagCellSolution | None = None) -> EffectiveTensors:
    nv = effective_viscosity(cells)
    d = cells.dim
    t = EffectiveTensors(dim=d, N=nv["N_energy"], M=None, E=None, volume_fraction=cells.volume_fraction,
                         variants={"N_flux": nv["N_flux"], "N_energy": nv["N_energy"]},
                         consistency={"N_flux_vs_energy": nv["max_relative_deviation"]})
    if mag is not None:
        mm = effective_magnetics(mag)
        t.M = mm["M_avg"]
        t.E = mm["E_avg"]
        for k in ("M_avg", "E_avg", "E_avg_literal", "M_energy_form", "E_energy_form", "M_bilinear"):
            t.variants[k] = mm[k]
        t.consistency.update({"E_vs_RmM": mm["E_minus_RmM"], "M_energy_vs_avg": mm["M_energy_deviation"],
                              "E_energy_vs_avg": mm["E_energy_deviation"]})
    return t


def degenerate_2d_magnetics(volume_fraction: float, Rm: float = 1.0):
    """In-plane 2D closure: Theta constant, M = phi I, E = Rm phi I."""
    return volume_fraction * np.eye(2), Rm * volume_fraction * np.eye(2)


def trace_free_min_eigenvalue(N: np.ndarray) -> float:
    """Smallest eigenvalue of the quadratic form on trace-free symmetric matrices."""
    d = N.shape[0]
    V = voigt_basis(d)
    A = np.einsum("aij,ijmn,bmn->ab", V, N, V)
    A = 0.5 * (A + A.T)
    # orthonormal basis of the trace-free subspace in Voigt coordinates
    tr = np.einsum("aii->a", V)
    Qm, _ = np.linalg.qr(np.column_stack([tr / np.linalg.norm(tr), np.eye(len(tr))]))
    B = Qm[:, 1:len(tr)]
    return float(np.linalg.eigvalsh(B.T @ A @ B)[0])


def tensor_report(t: EffectiveTensors, tol: float = SYM_TOL_FEM) -> dict:
    rep = {"volume_fraction": t.volume_fraction, "dim": t.dim}
    I = sym_identity(t.dim)
    e = ellipticity_report(t.N, tol)
    rep["N"] = {
        "major_symmetry_deviation": major_symmetry_deviation(t.N),
        "minor_symmetry_deviation": minor_symmetry_deviation(t.N),
        "eigenvalues": e["eigenvalues"],
        "min_eigenvalue": e["min_eigenvalue"],
        "trace_free_min_eigenvalue": trace_free_min_eigenvalue(t.N),
        "is_symmetric_identity": bool(np.max(np.abs(t.N - I)) <= 1e-10),
    }
    for name in ("M", "E"):
        A = getattr(t, name)
        if A is None:
            continue
        r = ellipticity_report(A, tol)
        rep[name] = {
            "symmetry_deviation": r["symmetry_deviation"],
            "eigenvalues": r["eigenvalues"],
            "min_eigenvalue": r["min_eigenvalue"],
            "is_zero": bool(np.all(A == 0.0)),
            "diagonal": np.diag(A).tolist(),
        }
    rep["consistency"] = dict(t.consistency)
    return rep


def voigt_row(N: np.ndarray) -> tuple[list, list]:
    """Flattened N in Voigt order: (N1111, N1122, N1212, ...) header and values.

    Entries are plain tensor components.  2D order: N1111, N1122, N1212,
    N2222, N1112, N2212.  3D: upper triangle over the Voigt pairs
    (11, 22, 33, 23, 13, 12).
    """
    d = N.shape[0]
    if d == 2:
        idx = [(0, 0, 0, 0), (0, 0, 1, 1), (0, 1, 0, 1), (1, 1, 1, 1), (0, 0, 0, 1), (1, 1, 0, 1)]
    else:
        pairs = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]
        idx = [pairs[a] + pairs[b] for a in range(6) for b in range(a, 6)]
    names = ["N" + "".join(str(k + 1) for k in t) for t in idx]
    vals = [float(N[t]) for t in idx]
    return names, vals
