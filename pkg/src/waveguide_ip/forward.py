"""Dirichlet and source problems for ``-Delta_h u + q u`` on rectangle grids.

The seven-point operator acts on interior unknowns. Small systems are
factorized once with SuperLU; larger ones use conjugate gradients
preconditioned by the exact sine-transform inverse of the shifted Dirichlet
Laplacian, batched over many right-hand sides.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .grid import INTERIOR, Grid3, ParameterError, TraceField
from .fd import laplacian

__all__ = [
    "SolverError",
    "ForwardSolver",
    "assemble_operator",
    "solve_dirichlet",
    "solve_source",
    "normal_derivative",
    "cap_normal_derivative",
    "green_pairing",
    "GreenSides",
]

DIRECT_LIMIT = 40_000


class SolverError(RuntimeError):
    """Singular system or non-convergent iteration."""


def _require_rectangle(g: Grid3):
    if g.kind != "rectangle":
        raise ParameterError("forward solves are implemented for rectangle cross-sections")


def _lap1d(n, h):
    e = np.ones(n - 1)
    return sp.diags([-e[:-1], 2 * e, -e[:-1]], [-1, 0, 1], shape=(n - 1, n - 1)) / h ** 2


def assemble_operator(g: Grid3, qvals) -> sp.csr_matrix:
    """Sparse ``-Delta_h + q`` on interior unknowns in C order ``(i, j, k)``."""
    _require_rectangle(g)
    A1 = _lap1d(g.n1, g.h_prime)
    A2 = _lap1d(g.n2, g.h_prime)
    A3 = _lap1d(g.n3, g.h3)
    I1, I2, I3 = (sp.identity(n - 1) for n in (g.n1, g.n2, g.n3))
    A = sp.kron(sp.kron(A1, I2), I3) + sp.kron(sp.kron(I1, A2), I3) + sp.kron(sp.kron(I1, I2), A3)
    qi = np.asarray(qvals)[1:-1, 1:-1, 1:-1].ravel()
    return (A + sp.diags(qi)).tocsr()


def _neg_lap_zero_bc(x, h, h3):
    """``-Delta_h x`` for batched interior arrays with zero Dirichlet padding."""
    out = (2 / h ** 2 + 2 / h ** 2 + 2 / h3 ** 2) * x
    for ax, hh in ((1, h), (2, h), (3, h3)):
        c = 1.0 / hh ** 2
        sl_a = [slice(None)] * 4
        sl_b = [slice(None)] * 4
        sl_a[ax] = slice(1, None)
        sl_b[ax] = slice(None, -1)
        out[tuple(sl_a)] -= c * x[tuple(sl_b)]
        out[tuple(sl_b)] -= c * x[tuple(sl_a)]
    return out


def _lap_interior_batch(u, h, h3):
    """Interior values of ``Delta_h u`` for batched full-grid arrays."""
    c = u[:, 1:-1, 1:-1, 1:-1]
    out = (u[:, 2:, 1:-1, 1:-1] + u[:, :-2, 1:-1, 1:-1] - 2 * c) / h ** 2
    out += (u[:, 1:-1, 2:, 1:-1] + u[:, 1:-1, :-2, 1:-1] - 2 * c) / h ** 2
    out += (u[:, 1:-1, 1:-1, 2:] + u[:, 1:-1, 1:-1, :-2] - 2 * c) / h3 ** 2
    return out


class ForwardSolver:
    """Reusable solver for ``-Delta_h + q`` with Dirichlet boundary conditions.

    Parameters
    ----------
    g : Grid3
    qvals : ndarray
        Potential values on all nodes (only interior values enter).
    method : {'auto', 'direct', 'pcg'}
    tol : float
        Relative residual target of the iterative solver.
    """

    def __init__(self, g: Grid3, qvals, method: str = "auto", tol: float = 1e-10,
                 maxiter: int = 2000):
        _require_rectangle(g)
        self.g = g
        self.q = np.asarray(qvals)
        self.qi = self.q[1:-1, 1:-1, 1:-1]
        self.ni = (g.n1 - 1, g.n2 - 1, g.n3 - 1)
        self.N = int(np.prod(self.ni))
        self.tol = tol
        self.maxiter = maxiter
        if method == "auto":
            method = "direct" if self.N <= DIRECT_LIMIT else "pcg"
        if method not in ("direct", "pcg"):
            raise ParameterError(f"unknown solver method {method!r}")
        self.method = method
        self._lu = None
        if method == "direct":
            A = assemble_operator(g, self.q).tocsc()
            try:
                self._lu = splu(A)
            except RuntimeError as exc:
                raise SolverError(f"factorization failed: {exc}") from exc
        else:
            lam = []
            for n, h in ((g.n1, g.h_prime), (g.n2, g.h_prime), (g.n3, g.h3)):
                k = np.arange(1, n)
                lam.append(4 / h ** 2 * np.sin(np.pi * k / (2 * n)) ** 2)
            shift = float(np.mean(self.qi))
            sym = lam[0][:, None, None] + lam[1][None, :, None] + lam[2][None, None, :] + shift
            if np.min(sym) <= 0:
                sym = sym - shift
            self._inv_sym = 1.0 / sym
        self.last_info = {}

    # -- interior algebra ---------------------------------------------------
    def apply(self, x):
        """Apply the interior operator to a batch ``(m, *ni)``."""
        g = self.g
        return _neg_lap_zero_bc(x, g.h_prime, g.h3) + self.qi[None] * x

    def _precond(self, r):
        z = sfft.dstn(r, type=1, axes=(1, 2, 3), norm="ortho")
        z *= self._inv_sym[None]
        return sfft.idstn(z, type=1, axes=(1, 2, 3), norm="ortho")

    def _pcg(self, b):
        m = b.shape[0]
        x = np.zeros_like(b)
        r = b.copy()
        bn = np.sqrt(np.sum(np.abs(b) ** 2, axis=(1, 2, 3)))
        bn[bn == 0] = 1.0
        z = self._precond(r)
        p = z.copy()
        rz = np.sum(np.conj(r) * z, axis=(1, 2, 3))
        active = np.ones(m, bool)
        it = 0
        res = np.sqrt(np.sum(np.abs(r) ** 2, axis=(1, 2, 3))) / bn
        active = res > self.tol
        while active.any() and it < self.maxiter:
            it += 1
            idx = np.flatnonzero(active)
            Ap = self.apply(p[idx])
            pAp = np.sum(np.conj(p[idx]) * Ap, axis=(1, 2, 3))
            if np.any(pAp.real <= 0):
                raise SolverError("operator is not positive definite; use method='direct'")
            alpha = rz[idx] / pAp
            x[idx] += alpha[:, None, None, None] * p[idx]
            r[idx] -= alpha[:, None, None, None] * Ap
            res[idx] = np.sqrt(np.sum(np.abs(r[idx]) ** 2, axis=(1, 2, 3))) / bn[idx]
            z_new = self._precond(r[idx])
            rz_new = np.sum(np.conj(r[idx]) * z_new, axis=(1, 2, 3))
            beta = rz_new / rz[idx]
            p[idx] = z_new + beta[:, None, None, None] * p[idx]
            rz[idx] = rz_new
            active = res > self.tol
        if active.any():
            raise SolverError(f"PCG did not converge: max relative residual {res.max():.3e} "
                              f"after {it} iterations")
        self.last_info = dict(iterations=it, residual=float(res.max()))
        return x

    def solve_interior(self, b):
        """Solve for interior unknowns; ``b`` is ``(*ni)`` or ``(m, *ni)``."""
        b = np.asarray(b)
        single = b.ndim == 3
        bb = b[None] if single else b
        if self.method == "direct":
            flat = bb.reshape(bb.shape[0], -1).T
            if np.iscomplexobj(flat):
                x = self._lu.solve(np.ascontiguousarray(flat.real)) + \
                    1j * self._lu.solve(np.ascontiguousarray(flat.imag))
            else:
                x = self._lu.solve(np.ascontiguousarray(flat))
            out = x.T.reshape(bb.shape)
            if not np.all(np.isfinite(out)):
                raise SolverError("direct solve produced non-finite values (singular system)")
            self.last_info = dict(iterations=0)
        else:
            chunk = max(1, int(1.5e7 // self.N))
            out = np.empty(bb.shape, dtype=np.result_type(bb.dtype, np.complex128)
                           if np.iscomplexobj(bb) else float)
            for s in range(0, bb.shape[0], chunk):
                out[s:s + chunk] = self._pcg(bb[s:s + chunk].astype(out.dtype))
        return out[0] if single else out

    # -- full-grid interface -----------------------------------------------
    def solve(self, F=None, bc=None):
        """Solve ``(-Delta_h + q) u = F`` in the interior with ``u = bc`` on the boundary.

        ``F`` and ``bc`` are full-grid arrays, optionally with a leading batch
        axis. Missing arguments are treated as zero.
        """
        g = self.g
        ref = F if F is not None else bc
        if ref is None:
            raise ParameterError("need a source or boundary data")
        ref = np.asarray(ref)
        batched = ref.ndim == 4
        shape = ref.shape
        dtype = np.result_type(*(np.asarray(a).dtype for a in (F, bc) if a is not None), float)
        rhs = np.zeros((shape[0] if batched else 1,) + self.ni, dtype=dtype)
        if F is not None:
            Fb = np.asarray(F) if batched else np.asarray(F)[None]
            rhs += Fb[:, 1:-1, 1:-1, 1:-1]
        bcb = None
        if bc is not None:
            bcb = np.asarray(bc) if batched else np.asarray(bc)[None]
            interior = g.classification == INTERIOR
            if np.any(bcb[:, interior] != 0):
                bcb = bcb * (~interior)[None]
            rhs += _lap_interior_batch(bcb, g.h_prime, g.h3)
        x = self.solve_interior(rhs)
        u = np.zeros((rhs.shape[0],) + g.shape, dtype=x.dtype)
        if bcb is not None:
            u += bcb
        u[:, 1:-1, 1:-1, 1:-1] = x
        return u if batched else u[0]

    def residual(self, u, F=None) -> float:
        """Relative interior residual of ``(-Delta_h + q) u - F``."""
        g = self.g
        Lu = -laplacian(g, u) + self.q * u
        R = Lu - (0 if F is None else F)
        R = R[1:-1, 1:-1, 1:-1]
        scale = max(np.linalg.norm(Lu[1:-1, 1:-1, 1:-1]), np.linalg.norm(u), 1e-300)
        return float(np.linalg.norm(R) / scale)


def _qvals(q):
    return q.values if hasattr(q, "values") else np.asarray(q)


def _grid_of(q, g=None):
    if g is not None:
        return g
    if hasattr(q, "grid"):
        return q.grid
    raise ParameterError("grid required when q is a plain array")


def solve_dirichlet(q, f: TraceField, g: Grid3 | None = None, cap_data=None, **kw):
    """Solve ``-Delta_h u + q u = 0`` with lateral data ``f``.

    Caps carry zero data unless ``cap_data`` (a full-grid array whose cap
    values are used) is given.
    """
    g = _grid_of(q, g)
    solver = ForwardSolver(g, _qvals(q), **kw)
    bc = g.extend_trace(f, dtype=np.result_type(f.values.dtype, float))
    if cap_data is not None:
        cap_data = np.asarray(cap_data)
        bc = bc.astype(np.result_type(bc.dtype, cap_data.dtype))
        bc[..., 0] = cap_data[..., 0]
        bc[..., -1] = cap_data[..., -1]
    return solver.solve(bc=bc)


def solve_source(q, F, g: Grid3 | None = None, **kw):
    """Solve ``-Delta_h u + q u = F`` with homogeneous Dirichlet data."""
    g = _grid_of(q, g)
    return ForwardSolver(g, _qvals(q), **kw).solve(F=np.asarray(F))


def _one_sided(u0, u1, u2, h):
    return (3 * u0 - 4 * u1 + u2) / (2 * h)


def normal_derivative(g: Grid3, u, scheme: str = "one_sided") -> np.ndarray:
    """Outward normal derivative on lateral nodes, shape ``(..., n_ring, n_axial)``.

    ``scheme='one_sided'`` uses second-order one-sided differences along the
    inward grid line; at a corner the two face derivatives are averaged, which
    keeps the ring trapezoidal rule consistent. ``scheme='link'`` uses the
    first-order link flux ``(u_b - u_1) / h``, which makes the discrete Green
    identity exact (corners carry no link and get zero).
    """
    if scheme not in ("one_sided", "link"):
        raise ParameterError("scheme must be 'one_sided' or 'link'")
    _require_rectangle(g)
    u = np.asarray(u)
    rg = g.ring
    i, j = rg["i"], rg["j"]
    n1, n2, h = g.n1, g.n2, g.h_prime
    ks = slice(1, -1)
    acc = np.zeros(u.shape[:-3] + (i.size, g.n3 - 1), dtype=u.dtype if np.iscomplexobj(u) else float)
    cnt = np.zeros(i.size)
    for sel, di, dj in ((i == 0, 1, 0), (i == n1, -1, 0), (j == 0, 0, 1), (j == n2, 0, -1)):
        idx = np.flatnonzero(sel)
        if idx.size == 0:
            continue
        a, b = i[idx], j[idx]
        if scheme == "link":
            inner = ~rg["corner"][idx]
            idx, a, b = idx[inner], a[inner], b[inner]
            acc[..., idx, :] += (u[..., a, b, ks] - u[..., a + di, b + dj, ks]) / h
            cnt[idx] += 1
            continue
        acc[..., idx, :] += _one_sided(u[..., a, b, ks], u[..., a + di, b + dj, ks],
                                       u[..., a + 2 * di, b + 2 * dj, ks], h)
        cnt[idx] += 1
    return acc / np.maximum(cnt, 1)[:, None]


def cap_normal_derivative(g: Grid3, u):
    """Outward normal derivatives on the two caps, each of transverse shape."""
    u = np.asarray(u)
    lo = _one_sided(u[..., 0], u[..., 1], u[..., 2], g.h3)
    hi = _one_sided(u[..., -1], u[..., -2], u[..., -3], g.h3)
    return lo, hi


@dataclass
class GreenSides:
    volumetric: complex
    boundary: complex

    @property
    def gap(self) -> float:
        s = max(abs(self.volumetric), abs(self.boundary), 1e-300)
        return abs(self.volumetric - self.boundary) / s


def _trap2(n1, n2, h1, h2):
    w1 = np.full(n1 + 1, h1)
    w1[[0, -1]] *= 0.5
    w2 = np.full(n2 + 1, h2)
    w2[[0, -1]] *= 0.5
    return np.outer(w1, w2)


def green_pairing(u, v, q, g: Grid3 | None = None, tol: float = 1e-12) -> GreenSides:
    """Both sides of the discrete Green identity for zero-trace ``u``.

    ``volumetric = sum_int [(L u) v - u (L v)] dV`` and
    ``boundary = -sum_bdry (d_nu u) v dS`` with ``L = -Delta_h + q``.
    """
    g = _grid_of(q, g)
    _require_rectangle(g)
    u = np.asarray(u)
    v = np.asarray(v)
    qv = _qvals(q)
    bmask = g.classification != INTERIOR
    scale = max(np.max(np.abs(u)), 1e-300)
    if np.max(np.abs(u[bmask])) > tol * scale:
        raise ParameterError("green_pairing requires u with zero boundary trace")
    Lu = -laplacian(g, u) + qv * u
    Lv = -laplacian(g, v) + qv * v
    w = g.h_prime ** 2 * g.h3
    sl = (slice(1, -1),) * 3
    vol = np.sum((Lu[sl] * v[sl] - u[sl] * Lv[sl])) * w
    rg = g.ring
    dn = normal_derivative(g, u)
    vb = v[rg["i"], rg["j"], 1:-1]
    bnd = np.sum(dn * vb) * g.h_prime * g.h3
    # caps: trapezoid over the closed transverse face
    lo, hi = cap_normal_derivative(g, u)
    wc = _trap2(g.n1, g.n2, g.h_prime, g.h_prime)
    bnd += np.sum(wc * (lo * v[..., 0] + hi * v[..., -1]))
    # lateral trapezoid end corrections at the cap edges are zero (u vanishes there)
    return GreenSides(complex(vol), complex(-bnd))
