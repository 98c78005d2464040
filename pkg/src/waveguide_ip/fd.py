"""Finite-difference stencils and discrete Sobolev norms on ``Grid3``."""
from __future__ import annotations

import numpy as np

from .grid import Grid3

__all__ = [
    "laplacian",
    "laplacian_transverse",
    "gradient",
    "hessian",
    "sobolev_norm",
    "l2_norm",
    "interior_slices",
]


def interior_slices(g: Grid3):
    """Slices selecting nodes where the full stencil is available."""
    if g.kind == "annulus":
        return (slice(1, -1), slice(None), slice(1, -1))
    return (slice(1, -1), slice(1, -1), slice(1, -1))


def _second_diff(u, axis, h, periodic=False):
    out = np.zeros_like(u)
    if periodic:
        return (np.roll(u, -1, axis) - 2 * u + np.roll(u, 1, axis)) / h ** 2
    sl = [slice(None)] * u.ndim
    sp, sc, sm = list(sl), list(sl), list(sl)
    sp[axis] = slice(2, None)
    sc[axis] = slice(1, -1)
    sm[axis] = slice(None, -2)
    out[tuple(sc)] = (u[tuple(sp)] - 2 * u[tuple(sc)] + u[tuple(sm)]) / h ** 2
    return out


def _polar_transverse(g: Grid3, u):
    """Polar transverse Laplacian (flux form in r), valid for radial index 1..n-1."""
    r = g.x1[(slice(None),) + (None,) * (u.ndim - 1)]
    h = g.h_prime
    dt = 2 * np.pi / g.n2
    out = np.zeros_like(u)
    rp = 0.5 * (r[1:-1] + r[2:])
    rm = 0.5 * (r[1:-1] + r[:-2])
    out[1:-1] = (rp * (u[2:] - u[1:-1]) - rm * (u[1:-1] - u[:-2])) / (h ** 2 * r[1:-1])
    out[1:-1] += (np.roll(u, -1, 1) - 2 * u + np.roll(u, 1, 1))[1:-1] / (r[1:-1] ** 2 * dt ** 2)
    return out


def laplacian_transverse(g: Grid3, u):
    """Transverse Laplacian; entries without a full stencil are zero."""
    u = np.asarray(u)
    if g.kind == "annulus":
        return _polar_transverse(g, u)
    out = _second_diff(u, 0, g.h_prime) + _second_diff(u, 1, g.h_prime)
    out[0] = 0
    out[-1] = 0
    out[:, 0] = 0
    out[:, -1] = 0
    return out


def laplacian(g: Grid3, u):
    """Seven-point (or polar) Laplacian; zero where the stencil leaves the grid."""
    u = np.asarray(u)
    out = laplacian_transverse(g, u) + _second_diff(u, 2, g.h3)
    out[..., 0] = 0
    out[..., -1] = 0
    if g.kind == "annulus":
        out[0] = 0
        out[-1] = 0
    else:
        out[0] = 0
        out[-1] = 0
        out[:, 0] = 0
        out[:, -1] = 0
    return out


def _d(u, axis, h, periodic=False):
    if periodic:
        return (np.roll(u, -1, axis) - np.roll(u, 1, axis)) / (2 * h)
    return np.gradient(u, h, axis=axis, edge_order=2)


def gradient(g: Grid3, u):
    """Second-order gradient components in an orthonormal frame.

    Cartesian ``(d1, d2, d3)`` for rectangles, ``(dr, dt / r, d3)`` for
    annuli.
    """
    u = np.asarray(u)
    if g.kind == "annulus":
        r = g.x1[:, None, None]
        return (_d(u, 0, g.h_prime), _d(u, 1, 2 * np.pi / g.n2, periodic=True) / r,
                _d(u, 2, g.h3))
    return (_d(u, 0, g.h_prime), _d(u, 1, g.h_prime), _d(u, 2, g.h3))


def hessian(g: Grid3, u):
    """All second derivatives obtained by differentiating the gradient."""
    out = []
    for gi in gradient(g, u):
        out.append(gradient(g, gi))
    return out


def l2_norm(g: Grid3, u, mask=None) -> float:
    w = g.volume_weights
    a = np.abs(np.asarray(u)) ** 2 * w
    if mask is not None:
        a = a[mask]
    return float(np.sqrt(np.sum(a)))


def sobolev_norm(g: Grid3, u, s: int = 0, mask=None) -> float:
    """Discrete ``H^s`` norm, ``s`` in {0, 1, 2}, optionally on a node mask."""
    if s not in (0, 1, 2):
        raise ValueError("s must be 0, 1 or 2")
    w = g.volume_weights
    dens = np.abs(np.asarray(u)) ** 2
    if s >= 1:
        grads = gradient(g, u)
        for gi in grads:
            dens = dens + np.abs(gi) ** 2
        if s == 2:
            for gi in grads:
                for gij in gradient(g, gi):
                    dens = dens + np.abs(gij) ** 2
    a = dens * w
    if mask is not None:
        a = a[mask]
    return float(np.sqrt(np.sum(a)))
