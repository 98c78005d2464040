"""Dirichlet-to-Neumann matrices in a Sobolev-weighted trace basis.

Input traces are expanded in products of discrete Fourier modes around the
boundary curve and discrete sine modes on the axial interior levels. Both
families are orthonormal for the lateral quadrature and diagonalize the
discrete boundary Laplacian, whose eigenvalue ``mu`` defines the weights
``(1 + mu)^{s/2}``. Output rows are nodal values of the normal derivative.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft
from scipy.linalg import cholesky
from scipy.sparse.linalg import svds

from .forward import ForwardSolver, normal_derivative
from .grid import Grid3, ParameterError

__all__ = [
    "DnDifferenceApplier",
    "galerkin_matrix",
    "TraceBasis",
    "DnOperator",
    "assemble_dn",
    "assemble_dn_difference",
    "restrict_partial",
    "operator_norm",
    "weighted_matrix",
    "from_weighted",
    "add_noise",
    "apply_dn_difference",
]

S_IN = 1.5
S_OUT = 0.5


@dataclass(frozen=True)
class TraceBasis:
    """Ring-Fourier times axial-sine basis on the lateral nodes."""

    n_ring: int
    n_axial: int
    ds: float
    h3: float
    m: np.ndarray
    k: np.ndarray

    @classmethod
    def for_grid(cls, g: Grid3, basis_size=None):
        R, K = g.n_ring, g.n_axial
        if basis_size is None:
            Mm, Kk = R, K
        else:
            Mm, Kk = int(basis_size[0]), int(basis_size[1])
            if not (1 <= Mm <= R and 1 <= Kk <= K):
                raise ParameterError(f"basis_size must lie in [1,{R}] x [1,{K}]")
        freqs = np.rint(sfft.fftfreq(R, 1.0 / R)).astype(int)
        order = np.lexsort((-freqs, np.abs(freqs)))[:Mm]
        ms = freqs[order]
        ks = np.arange(1, Kk + 1)
        M, Kg = np.meshgrid(ms, ks, indexing="ij")
        return cls(R, K, float(g.ring["ds"][0]), g.h3, M.ravel(), Kg.ravel())

    @property
    def size(self) -> int:
        return self.m.size

    def mu_ring(self, m):
        return (4.0 / self.ds ** 2) * np.sin(np.pi * np.asarray(m) / self.n_ring) ** 2

    def mu_axial(self, k):
        return (4.0 / self.h3 ** 2) * np.sin(np.pi * np.asarray(k) / (2 * (self.n_axial + 1))) ** 2

    @property
    def mu(self) -> np.ndarray:
        return self.mu_ring(self.m) + self.mu_axial(self.k)

    def ring_mode(self, m):
        s = np.arange(self.n_ring)
        return np.exp(2j * np.pi * np.outer(s, np.atleast_1d(m)) / self.n_ring) / np.sqrt(self.n_ring * self.ds)

    def axial_mode(self, k):
        n3 = self.n_axial + 1
        l = np.arange(1, n3)
        return np.sqrt(2.0 / (n3 * self.h3)) * np.sin(np.pi * np.outer(l, np.atleast_1d(k)) / n3)

    def synthesize(self, coeffs) -> np.ndarray:
        """Nodal trace(s) ``(..., n_ring, n_axial)`` from coefficient vector(s)."""
        c = np.asarray(coeffs)
        full = np.zeros(c.shape[:-1] + (self.n_ring, self.n_axial), dtype=complex)
        full[..., self.m % self.n_ring, self.k - 1] = c
        f = sfft.ifft(full, axis=-2, norm="ortho")
        f = sfft.idst(f, type=1, axis=-1, norm="ortho")
        return f / np.sqrt(self.ds * self.h3)

    def analyze(self, f) -> np.ndarray:
        """Coefficients of nodal trace(s) on this basis (orthogonal projection)."""
        c = sfft.fft(np.asarray(f), axis=-2, norm="ortho")
        c = sfft.dst(c, type=1, axis=-1, norm="ortho") * np.sqrt(self.ds * self.h3)
        return c[..., self.m % self.n_ring, self.k - 1]

    @property
    def is_complete(self) -> bool:
        return self.size == self.n_ring * self.n_axial


@dataclass
class DnOperator:
    """DN (or DN-difference) matrix.

    ``matrix[r, c]``: nodal normal derivative at output row ``r`` produced by
    input basis function ``c``. Rows are ``(ring node, axial level)`` pairs in
    C order over ``row_ring x axial``.
    """

    grid: Grid3
    basis: TraceBasis
    matrix: np.ndarray
    row_ring: np.ndarray
    partial: bool = False
    scheme: str = "one_sided"
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.matrix.shape

    def __sub__(self, other: "DnOperator") -> "DnOperator":
        if self.matrix.shape != other.matrix.shape or not np.array_equal(self.row_ring, other.row_ring):
            raise ParameterError("DN operators have incompatible layouts")
        return replace(self, matrix=self.matrix - other.matrix, meta=dict(self.meta))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.matrix)

    def apply(self, coeffs) -> np.ndarray:
        """Nodal output ``(len(row_ring), n_axial)`` for input coefficients."""
        y = self.matrix @ np.asarray(coeffs)
        return y.reshape(self.row_ring.size, self.basis.n_axial)


def galerkin_matrix(op: DnOperator) -> np.ndarray:
    """``A[i, j] = <psi_i, Lambda psi_j>`` in the unweighted boundary ``L^2`` pairing.

    Hermitian for real potentials when the scheme is self-adjoint.
    """
    if op.partial:
        raise ParameterError("galerkin_matrix needs the full operator")
    b = op.basis
    Y = op.matrix.T.reshape(b.size, b.n_ring, b.n_axial)
    return b.analyze(Y).T


def _bc_batch(g: Grid3, traces):
    rg = g.ring
    bc = np.zeros((traces.shape[0],) + g.shape, dtype=complex)
    bc[:, rg["i"], rg["j"], 1:-1] = traces
    return bc


def _chunk(g: Grid3, budget=2.5e8):
    return max(1, int(budget // (16 * 6 * np.prod(g.shape))))


def assemble_dn(q, basis_size=None, g: Grid3 | None = None, scheme="one_sided",
                solver: ForwardSolver | None = None) -> DnOperator:
    """Full DN matrix of ``-Delta_h + q``: one Dirichlet solve per basis function."""
    g = q.grid if g is None else g
    qv = q.values if hasattr(q, "values") else np.asarray(q)
    basis = TraceBasis.for_grid(g, basis_size)
    solver = ForwardSolver(g, qv) if solver is None else solver
    cols = np.empty((g.n_ring * g.n_axial, basis.size), dtype=complex)
    step = _chunk(g)
    for s in range(0, basis.size, step):
        idx = np.arange(s, min(s + step, basis.size))
        E = np.zeros((idx.size, basis.size), complex)
        E[np.arange(idx.size), idx] = 1.0
        try:
            u = solver.solve(bc=_bc_batch(g, basis.synthesize(E)))
        except Exception as exc:
            raise type(exc)(f"column block starting at {s}: {exc}") from exc
        cols[:, idx] = normal_derivative(g, u, scheme).reshape(idx.size, -1).T
    return DnOperator(g, basis, cols, np.arange(g.n_ring), False, scheme)


def assemble_dn_difference(q1, q2, basis_size=None, g: Grid3 | None = None,
                           scheme="one_sided") -> DnOperator:
    """``Lambda_{q1} - Lambda_{q2}`` without subtractive cancellation.

    For data ``f`` with ``u1`` the ``q1``-solution, ``w = u1 - u2`` solves
    ``(-Delta_h + q2) w = (q2 - q1) u1`` with zero trace, and the column is
    the normal derivative of ``w``.
    """
    g = q1.grid if g is None else g
    v1 = q1.values if hasattr(q1, "values") else np.asarray(q1)
    v2 = q2.values if hasattr(q2, "values") else np.asarray(q2)
    basis = TraceBasis.for_grid(g, basis_size)
    cols = np.zeros((g.n_ring * g.n_axial, basis.size), dtype=complex)
    dq = v2 - v1
    if not np.any(dq[1:-1, 1:-1, 1:-1]):
        return DnOperator(g, basis, cols, np.arange(g.n_ring), False, scheme)
    S1 = ForwardSolver(g, v1)
    S2 = ForwardSolver(g, v2)
    step = _chunk(g)
    for s in range(0, basis.size, step):
        idx = np.arange(s, min(s + step, basis.size))
        E = np.zeros((idx.size, basis.size), complex)
        E[np.arange(idx.size), idx] = 1.0
        try:
            u1 = S1.solve(bc=_bc_batch(g, basis.synthesize(E)))
            w = S2.solve(F=dq[None] * u1)
        except Exception as exc:
            raise type(exc)(f"column block starting at {s}: {exc}") from exc
        cols[:, idx] = normal_derivative(g, w, scheme).reshape(idx.size, -1).T
    return DnOperator(g, basis, cols, np.arange(g.n_ring), False, scheme)


def restrict_partial(op: DnOperator, gamma0=None) -> DnOperator:
    """Keep only output rows on ``Gamma_0 x [-L, L]``.

    ``gamma0`` defaults to the descriptor of the grid's cross-section; a
    different descriptor may be passed as a tuple.
    """
    if op.partial:
        raise ParameterError("operator is already restricted")
    g = op.grid
    if gamma0 is not None:
        cs = replace(g.cross_section, gamma0=tuple(gamma0))
        g = replace(g, cross_section=cs)
    keep = g.ring_in_gamma0()
    if not keep.any():
        raise ParameterError("empty Gamma_0")
    rows = np.flatnonzero(keep)
    K = op.basis.n_axial
    M = op.matrix.reshape(op.row_ring.size, K, -1)[rows].reshape(rows.size * K, -1)
    meta = dict(op.meta, gamma0=list(g.cross_section.gamma0))
    return DnOperator(op.grid, op.basis, M, rows, True, op.scheme, meta)


def _output_cholesky(basis: TraceBasis, rows: np.ndarray, k: int):
    """Upper Cholesky factor of the quotient ``H^{1/2}`` Gram matrix on a ring subset."""
    R = basis.n_ring
    ms = np.arange(R)
    lam = (1.0 + basis.mu_ring(ms) + basis.mu_axial(k)) ** (S_OUT / 2)
    Psi = basis.ring_mode(ms)
    Kinv = (Psi / lam) @ Psi.conj().T
    G = np.linalg.inv(Kinv[np.ix_(rows, rows)])
    G = 0.5 * (G + G.conj().T)
    return cholesky(G, lower=False)


def weighted_matrix(op: DnOperator) -> np.ndarray:
    """Matrix of ``op`` between the weighted ``H^{3/2}`` and ``H^{1/2}`` coordinates."""
    b = op.basis
    A = op.matrix * (1.0 + b.mu)[None, :] ** (-S_IN / 2)
    K = b.n_axial
    Y = A.reshape(op.row_ring.size, K, -1)
    full = op.row_ring.size == b.n_ring and not op.partial
    if full or (op.partial and op.row_ring.size == b.n_ring):
        C = sfft.fft(Y, axis=0, norm="ortho")
        C = sfft.dst(C, type=1, axis=1, norm="ortho") * np.sqrt(b.ds * b.h3)
        ms = np.arange(b.n_ring)
        ks = np.arange(1, K + 1)
        w = (1.0 + b.mu_ring(ms)[:, None] + b.mu_axial(ks)[None, :]) ** (S_OUT / 4)
        return (C * w[:, :, None]).reshape(b.n_ring * K, -1)
    Z = sfft.dst(Y, type=1, axis=1, norm="ortho") * np.sqrt(b.h3)
    out = np.empty_like(Z)
    for kk in range(K):
        U = _output_cholesky(b, op.row_ring, kk + 1)
        out[:, kk, :] = U @ Z[:, kk, :]
    return out.reshape(op.row_ring.size * K, -1)


def from_weighted(template: DnOperator, B) -> DnOperator:
    """Inverse of :func:`weighted_matrix` for full operators with a complete basis."""
    b = template.basis
    if template.partial or not b.is_complete:
        raise ParameterError("from_weighted needs a full operator on a complete basis")
    K = b.n_axial
    ms = np.arange(b.n_ring)
    ks = np.arange(1, K + 1)
    w = (1.0 + b.mu_ring(ms)[:, None] + b.mu_axial(ks)[None, :]) ** (S_OUT / 4)
    C = np.asarray(B).reshape(b.n_ring, K, -1) / w[:, :, None]
    Y = sfft.idst(C / np.sqrt(b.ds * b.h3), type=1, axis=1, norm="ortho")
    Y = sfft.ifft(Y, axis=0, norm="ortho")
    A = Y.reshape(b.n_ring * K, -1) * (1.0 + b.mu)[None, :] ** (S_IN / 2)
    return replace(template, matrix=A, meta=dict(template.meta))


def _sigma_max(B) -> float:
    if not np.any(B):
        return 0.0
    if min(B.shape) <= 400:
        return float(np.linalg.norm(B, 2))
    v0 = np.ones(min(B.shape), dtype=B.dtype) / np.sqrt(min(B.shape))
    s = svds(B, k=1, tol=1e-13, v0=v0, return_singular_vectors=False, maxiter=20000)
    return float(s[0])


def operator_norm(op: DnOperator) -> float:
    """Largest singular value between weighted ``H^{3/2}`` and ``H^{1/2}`` coordinates.

    Partial operators are measured in the quotient norm of the restriction
    space on ``Gamma_0 x [-L, L]``, which never exceeds the full norm.
    """
    return _sigma_max(weighted_matrix(op))


def add_noise(op: DnOperator, delta: float, seed) -> DnOperator:
    """Add ``delta * N`` with ``N`` seeded Gaussian, normalized to operator norm 1."""
    if delta < 0:
        raise ParameterError("delta must be non-negative")
    if delta == 0:
        return replace(op, matrix=op.matrix.copy(), meta=dict(op.meta))
    rng = np.random.default_rng(seed)
    N = rng.standard_normal(op.matrix.shape) + 1j * rng.standard_normal(op.matrix.shape)
    noise = replace(op, matrix=N)
    N = N / operator_norm(noise)
    meta = dict(op.meta, noise_delta=float(delta), noise_seed=seed)
    return replace(op, matrix=op.matrix + delta * N, meta=meta)


def apply_dn_difference(q1, q2, trace, g: Grid3 | None = None, scheme="one_sided"):
    """Matrix-free ``(Lambda_{q1} - Lambda_{q2}) f`` for nodal lateral data ``f``."""
    f = trace.values if hasattr(trace, "values") else np.asarray(trace)
    return DnDifferenceApplier(q1, q2, g, scheme).apply_nodal(f)


class DnDifferenceApplier:
    """Matrix-free ``Lambda_{q1} - Lambda_{q2}`` with factorizations reused across calls.

    Mirrors the parts of :class:`DnOperator` used by the Fourier pairing
    (``grid``, ``basis``, ``row_ring``, ``partial``, ``apply``) for grids
    where the dense matrix is too large.
    """

    partial = False

    def __init__(self, q1, q2, g: Grid3 | None = None, scheme="one_sided", **solver_kw):
        g = q1.grid if g is None else g
        self.grid = g
        self.scheme = scheme
        self.basis = TraceBasis.for_grid(g)
        self.row_ring = np.arange(g.n_ring)
        self.v1 = q1.values if hasattr(q1, "values") else np.asarray(q1)
        self.v2 = q2.values if hasattr(q2, "values") else np.asarray(q2)
        self.dq = self.v2 - self.v1
        self.is_zero = not np.any(self.dq[1:-1, 1:-1, 1:-1])
        self._s1 = ForwardSolver(g, self.v1, **solver_kw)
        self._s2 = ForwardSolver(g, self.v2, **solver_kw)

    def apply_nodal(self, f) -> np.ndarray:
        """Output ``(..., n_ring, n_axial)`` for nodal lateral data of the same shape."""
        f = np.asarray(f)
        if self.is_zero:
            return np.zeros(f.shape, dtype=np.result_type(f, float))
        batch = f.ndim == 3
        fb = f if batch else f[None]
        u1 = self._s1.solve(bc=_bc_batch(self.grid, fb))
        w = self._s2.solve(F=self.dq[None] * u1)
        out = normal_derivative(self.grid, w, self.scheme)
        return out if batch else out[0]

    def apply(self, coeffs) -> np.ndarray:
        return self.apply_nodal(self.basis.synthesize(np.asarray(coeffs)))
