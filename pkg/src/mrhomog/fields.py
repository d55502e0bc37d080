"""Source fields (body force g, magnetic source h) and a registry of named profiles.

A field is given as a constant vector, a callable mapping points (..., d) to
values (..., d), or a registered profile name.
"""
from __future__ import annotations

import numpy as np

from .errors import ArgumentError, ConfigurationError


def _swirl(x):
    out = np.zeros_like(x)
    out[..., 0] = -(x[..., 1] - 0.5)
    out[..., 1] = x[..., 0] - 0.5
    return out


def _shear(x):
    out = np.zeros_like(x)
    out[..., 0] = np.sin(np.pi * x[..., 1])
    return out


def _gravity(x):
    out = np.zeros_like(x)
    out[..., 1] = -1.0
    return out


def _vortex(x):
    """Divergence-free cellular forcing (sin, cos products)."""
    out = np.zeros_like(x)
    s, c = np.sin, np.cos
    out[..., 0] = s(np.pi * x[..., 0]) * c(np.pi * x[..., 1])
    out[..., 1] = -c(np.pi * x[..., 0]) * s(np.pi * x[..., 1])
    return out


def _tangent_loop(x):
    """3D source with zero normal trace on the unit box faces."""
    out = np.zeros_like(x)
    if x.shape[-1] != 3:
        raise ArgumentError("profile 'loop' is three-dimensional")
    s, c = np.sin, np.cos
    a = (1.0, 1.0, -2.0)
    for i in range(3):
        v = a[i] * s(np.pi * x[..., i])
        for j in range(3):
            if j != i:
                v = v * c(np.pi * x[..., j])
        out[..., i] = v
    return out


PROFILES = {
    "zero": lambda x: np.zeros_like(x),
    "swirl": _swirl,
    "shear": _shear,
    "gravity": _gravity,
    "vortex": _vortex,
    "loop": _tangent_loop,
}


def as_field(f, d: int):
    """Normalize a field spec into a callable of points returning (..., d)."""
    if f is None:
        return PROFILES["zero"]
    if isinstance(f, str):
        key = f.strip().lower()
        if key not in PROFILES:
            raise ConfigurationError(f"unknown profile {f!r}; known: {', '.join(sorted(PROFILES))}")
        return PROFILES[key]
    if callable(f):
        return f
    v = np.asarray(f, dtype=float).ravel()
    if v.shape != (d,):
        raise ArgumentError(f"constant field needs {d} components, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ArgumentError("field components must be finite")

    def const(x, v=v):
        return np.broadcast_to(v, x.shape[:-1] + (d,)).copy()

    return const


def is_zero(f) -> bool:
    if f is None:
        return True
    if isinstance(f, str):
        return f.strip().lower() == "zero"
    if callable(f):
        return False
    return bool(np.all(np.asarray(f, dtype=float) == 0.0))


def field_l2_norm(space, f, where="all", degree: int = 6) -> float:
    """L2 norm of a field over the selected cells of the space's mesh."""
    fn = as_field(f, space.dim)
    ed = space.element_data(degree)
    from .femcore.spaces import cell_weights
    w = ed.weights * cell_weights(space.mesh, where)[:, None]
    vals = np.asarray(fn(ed.points), dtype=float)
    return float(np.sqrt(np.sum(w * np.sum(vals ** 2, axis=-1))))
