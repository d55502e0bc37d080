"""Quadrature on the reference simplex.

Rules return barycentric points (nq, d+1) and weights summing to the
reference simplex volume 1/d!.
"""
from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


def _compositions(total: int, parts: int):
    for c in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for x in c:
            out.append(x - prev - 1)
            prev = x
        out.append(total + parts - 1 - prev - 1)
        yield out


@lru_cache(maxsize=None)
def grundmann_moeller(d: int, degree: int):
    """Grundmann-Moeller rule exact for polynomials of total degree <= degree."""
    s = max(0, (degree - 1 + 1) // 2)  # 2s+1 >= degree
    m = 2 * s + 1
    pts, wts = [], []
    for i in range(s + 1):
        w = (-1) ** i * 2.0 ** (-2 * s) * (m + d - 2 * i) ** m / (math.factorial(i) * math.factorial(m + d - i))
        for beta in _compositions(s - i, d + 1):
            pts.append([(2 * b + 1) / (m + d - 2 * i) for b in beta])
            wts.append(w)
    pts = np.array(pts)
    wts = np.array(wts)
    # merge duplicated points from different levels
    key = np.round(pts, 14)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    w2 = np.zeros(len(uniq))
    np.add.at(w2, inv.ravel(), wts)
    keep = np.abs(w2) > 0
    return uniq[keep], w2[keep]


@lru_cache(maxsize=None)
def collapsed_gauss(d: int, degree: int):
    """Conical-product Gauss rule (positive weights), exact to ``degree``."""
    n = degree // 2 + 2
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    if d == 2:
        U, V = np.meshgrid(x, x, indexing="ij")
        WU, WV = np.meshgrid(w, w, indexing="ij")
        xi = U
        eta = V * (1 - U)
        W = WU * WV * (1 - U)
        ref = np.stack([xi.ravel(), eta.ravel()], axis=1)
        W = W.ravel()
    elif d == 3:
        U, V, Z = np.meshgrid(x, x, x, indexing="ij")
        WU, WV, WZ = np.meshgrid(w, w, w, indexing="ij")
        xi = U
        eta = V * (1 - U)
        zeta = Z * (1 - U) * (1 - V)
        W = WU * WV * WZ * (1 - U) ** 2 * (1 - V)
        ref = np.stack([xi.ravel(), eta.ravel(), zeta.ravel()], axis=1)
        W = W.ravel()
    else:
        raise ValueError(f"unsupported dimension {d}")
    bary = np.concatenate([1.0 - ref.sum(axis=1, keepdims=True), ref], axis=1)
    return bary, W


def simplex_rule(d: int, degree: int):
    return grundmann_moeller(d, degree)
