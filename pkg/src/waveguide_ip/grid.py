"""Cross-sections, truncated cylinder grids and boundary traces.

Two cross-section families are supported:

* ``rectangle``: the box ``[-a1/2, a1/2] x [-a2/2, a2/2]`` on a Cartesian
  tensor grid. This is the geometry used by the forward solver, the DN map
  and the CGO machinery.
* ``annulus``: the collar ``r0 <= |x'| <= 1`` of the unit disc on a polar
  tensor grid. The outer circle is the physical boundary; the inner circle is
  the artificial boundary of the collar. This geometry hosts the weight
  function and the Carleman laboratory.

Nested subdomains ``W_0 > W_1 > W_2 > W_3`` are superlevel sets of a level
function that equals 1 on the outer boundary and decreases inwards.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "ParameterError",
    "CrossSection",
    "Grid3",
    "TraceField",
    "build_grid",
    "subdomain_mask",
    "boundary_restriction",
    "INTERIOR",
    "LATERAL",
    "CAP",
    "INNER",
]

INTERIOR, LATERAL, CAP, INNER = 0, 1, 2, 3

EDGES = ("y-", "x+", "y+", "x-")


class ParameterError(ValueError):
    """Invalid geometric or numerical parameter."""


@dataclass(frozen=True)
class CrossSection:
    """Transverse cross-section with boundary piece and nested offsets.

    Parameters
    ----------
    kind : {'rectangle', 'annulus'}
    a1, a2 : float
        Side lengths of the rectangle.
    r0 : float
        Inner radius of the annular collar (outer radius is 1).
    gamma0 : tuple
        Accessible boundary piece. ``('full',)``; for rectangles a tuple of
        edge names from ``('y-', 'x+', 'y+', 'x-')``; for annuli
        ``('arc', t0, t1)`` with angles in radians.
    offsets : tuple of 4 floats
        Strictly decreasing depths ``d_0 > d_1 > d_2 > d_3 > 0``;
        ``W_j = {1 - d_j < level(x') <= 1}``.
    level_p : float
        Exponent of the p-norm level function of the rectangle.
    """

    kind: str = "rectangle"
    a1: float = 1.0
    a2: float = 1.0
    r0: float = 0.5
    gamma0: tuple = ("full",)
    offsets: tuple = (0.3, 0.25, 0.2, 0.15)
    level_p: float = 8.0

    def __post_init__(self):
        if self.kind not in ("rectangle", "annulus"):
            raise ParameterError(f"unknown cross-section kind {self.kind!r}")
        if self.kind == "rectangle" and (self.a1 <= 0 or self.a2 <= 0):
            raise ParameterError("rectangle side lengths must be positive")
        if self.kind == "annulus" and not 0.0 < self.r0 < 1.0:
            raise ParameterError("annulus requires 0 < r0 < 1")
        d = np.asarray(self.offsets, dtype=float)
        if d.shape != (4,) or np.any(d <= 0) or np.any(np.diff(d) >= 0):
            raise ParameterError("offsets must be four strictly decreasing positive numbers")
        dmax = 1.0 - self.r0 if self.kind == "annulus" else 1.0
        if d[0] > dmax + 1e-12:
            raise ParameterError(f"offset d0={d[0]} exceeds the available depth {dmax}")
        g = tuple(self.gamma0)
        if len(g) == 0:
            raise ParameterError("empty gamma0 descriptor")
        if g[0] == "full":
            pass
        elif self.kind == "rectangle":
            if any(e not in EDGES for e in g):
                raise ParameterError(f"gamma0 edges must be drawn from {EDGES}")
        elif g[0] == "arc":
            if len(g) != 3 or not g[2] > g[1]:
                raise ParameterError("arc descriptor is ('arc', t0, t1) with t1 > t0")
        else:
            raise ParameterError(f"bad gamma0 descriptor {g!r}")

    @property
    def D(self) -> float:
        """Supremum of ``|x'|`` over the closed cross-section."""
        if self.kind == "annulus":
            return 1.0
        return 0.5 * float(np.hypot(self.a1, self.a2))

    @property
    def gamma0_is_full(self) -> bool:
        g = tuple(self.gamma0)
        if g[0] == "full":
            return True
        if self.kind == "rectangle":
            return set(g) == set(EDGES)
        return g[2] - g[1] >= 2 * np.pi

    def level(self, x1, x2):
        """Level function: 1 on the outer boundary, decreasing inwards."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if self.kind == "annulus":
            return np.hypot(x1, x2)
        p = self.level_p
        t1 = np.abs(x1) / (0.5 * self.a1)
        t2 = np.abs(x2) / (0.5 * self.a2)
        # scale before powering to avoid underflow of tiny components
        m = np.maximum(np.maximum(t1, t2), 1e-300)
        return m * ((t1 / m) ** p + (t2 / m) ** p) ** (1.0 / p)

    def level_derivatives(self, x1, x2):
        """Level function with its analytic gradient and Hessian.

        Returns ``(l, (l_1, l_2), (l_11, l_12, l_22))``; undefined at the origin.
        """
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if self.kind == "annulus":
            r = np.hypot(x1, x2)
            n1, n2 = x1 / r, x2 / r
            return r, (n1, n2), ((1 - n1 * n1) / r, -n1 * n2 / r, (1 - n2 * n2) / r)
        p = self.level_p
        c1, c2 = 2.0 / self.a1, 2.0 / self.a2
        lev = self.level(x1, x2)
        s1 = np.abs(x1) * c1 / lev
        s2 = np.abs(x2) * c2 / lev
        g1 = c1 * s1 ** (p - 1) * np.sign(x1)
        g2 = c2 * s2 ** (p - 1) * np.sign(x2)
        h11 = c1 ** 2 * (p - 1) / lev * s1 ** (p - 2) * (1 - s1 ** p)
        h22 = c2 ** 2 * (p - 1) / lev * s2 ** (p - 2) * (1 - s2 ** p)
        h12 = -c1 * c2 * (p - 1) / lev * (s1 * s2) ** (p - 1) * np.sign(x1) * np.sign(x2)
        return lev, (g1, g2), (h11, h12, h22)

    def contains(self, x1, x2, tol=1e-12):
        """Closed cross-section membership."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if self.kind == "annulus":
            r = np.hypot(x1, x2)
            return (r >= self.r0 - tol) & (r <= 1.0 + tol)
        return (np.abs(x1) <= 0.5 * self.a1 + tol) & (np.abs(x2) <= 0.5 * self.a2 + tol)

    def in_subdomain(self, j: int, x1, x2):
        """Point membership in ``W_j`` (closure on the outer-boundary side)."""
        if j not in (0, 1, 2, 3):
            raise ParameterError("subdomain index must be 0..3")
        lev = self.level(x1, x2)
        return self.contains(x1, x2) & (lev > 1.0 - self.offsets[j] + 1e-12)


@dataclass(frozen=True)
class TraceField:
    """Complex grid function on lateral boundary nodes.

    ``values`` has shape ``(n_ring, n_axial)``; ``weights`` are the matching
    quadrature weights. ``order`` records the Sobolev index the field is
    meant to be measured in.
    """

    values: np.ndarray
    weights: np.ndarray
    order: float = 0.0

    def __post_init__(self):
        if np.shape(self.values) != np.shape(self.weights):
            raise ParameterError("values and weights must have equal shapes")

    def norm(self) -> float:
        """Discrete weighted L2 norm."""
        return float(np.sqrt(np.sum(self.weights * np.abs(self.values) ** 2)))


@dataclass
class Grid3:
    """Truncated tensor grid of ``omega x [-L, L]``.

    Arrays are indexed ``[i, j, k]`` with ``k`` the axial index. For the
    rectangle ``(i, j)`` are Cartesian indices; for the annulus they are
    radial and angular indices (angular direction periodic).
    """

    cross_section: CrossSection
    n1: int
    n2: int
    n3: int
    L: float
    h_prime: float
    h3: float
    x1: np.ndarray = field(repr=False)
    x2: np.ndarray = field(repr=False)
    x3: np.ndarray = field(repr=False)

    @property
    def kind(self) -> str:
        return self.cross_section.kind

    @property
    def shape(self) -> tuple:
        if self.kind == "annulus":
            return (self.n1 + 1, self.n2, self.n3 + 1)
        return (self.n1 + 1, self.n2 + 1, self.n3 + 1)

    @property
    def D(self) -> float:
        return self.cross_section.D

    @cached_property
    def transverse(self):
        """Cartesian transverse coordinates ``(X1, X2)`` of shape ``shape[:2]``."""
        if self.kind == "annulus":
            r, t = np.meshgrid(self.x1, self.x2, indexing="ij")
            return r * np.cos(t), r * np.sin(t)
        return tuple(np.meshgrid(self.x1, self.x2, indexing="ij"))

    def coords(self):
        """Broadcastable Cartesian coordinates ``(X1, X2, X3)``."""
        X1, X2 = self.transverse
        return X1[:, :, None], X2[:, :, None], self.x3[None, None, :]

    @cached_property
    def classification(self) -> np.ndarray:
        """Node class: INTERIOR, LATERAL, CAP or INNER (annulus inner circle)."""
        c = np.zeros(self.shape, dtype=np.int8)
        if self.kind == "annulus":
            c[-1, :, :] = LATERAL
            c[0, :, :] = INNER
        else:
            c[0, :, :] = LATERAL
            c[-1, :, :] = LATERAL
            c[:, 0, :] = LATERAL
            c[:, -1, :] = LATERAL
        c[:, :, 0] = CAP
        c[:, :, -1] = CAP
        return c

    @cached_property
    def interior_mask(self) -> np.ndarray:
        return self.classification == INTERIOR

    # ---- lateral ring ------------------------------------------------------
    @cached_property
    def ring(self):
        """Ordered nodes of the outer boundary curve.

        Returns a dict with integer index arrays ``i``, ``j``, edge labels,
        a corner flag, outward unit normals and arc-length spacing ``ds``.
        Rectangle edges are traversed counter-clockwise starting at
        ``(-a1/2, -a2/2)``; every edge owns its first corner, so each edge
        holds exactly ``n`` nodes.
        """
        if self.kind == "annulus":
            nt = self.n2
            i = np.full(nt, self.n1)
            j = np.arange(nt)
            t = self.x2
            normal = np.stack([np.cos(t), np.sin(t)], axis=1)
            return dict(i=i, j=j, edge=np.array(["arc"] * nt), corner=np.zeros(nt, bool),
                        normal=normal, ds=np.full(nt, 2 * np.pi / nt), angle=t)
        n1, n2 = self.n1, self.n2
        ii, jj, ee = [], [], []
        ii += list(range(0, n1)); jj += [0] * n1; ee += ["y-"] * n1
        ii += [n1] * n2; jj += list(range(0, n2)); ee += ["x+"] * n2
        ii += list(range(n1, 0, -1)); jj += [n2] * n1; ee += ["y+"] * n1
        ii += [0] * n2; jj += list(range(n2, 0, -1)); ee += ["x-"] * n2
        i = np.array(ii); j = np.array(jj); edge = np.array(ee)
        corner = ((i == 0) | (i == n1)) & ((j == 0) | (j == n2))
        nx = np.where(i == n1, 1.0, np.where(i == 0, -1.0, 0.0))
        ny = np.where(j == n2, 1.0, np.where(j == 0, -1.0, 0.0))
        normal = np.stack([nx, ny], axis=1)
        normal /= np.linalg.norm(normal, axis=1)[:, None]
        return dict(i=i, j=j, edge=edge, corner=corner, normal=normal,
                    ds=np.full(i.size, self.h_prime))

    @property
    def n_ring(self) -> int:
        return self.ring["i"].size

    @property
    def n_axial(self) -> int:
        """Number of interior axial levels carrying lateral data."""
        return self.n3 - 1

    def ring_in_gamma0(self) -> np.ndarray:
        """Boolean flag per ring node: node lies on Gamma_0."""
        g = tuple(self.cross_section.gamma0)
        if g[0] == "full":
            return np.ones(self.n_ring, bool)
        if self.kind == "rectangle":
            return np.isin(self.ring["edge"], list(g))
        t = np.mod(self.ring["angle"] - g[1], 2 * np.pi)
        return t <= (g[2] - g[1]) + 1e-12

    def trace_weights(self) -> np.ndarray:
        return np.outer(self.ring["ds"], np.full(self.n_axial, self.h3))

    def trace_of(self, u: np.ndarray, order: float = 0.0) -> TraceField:
        """Restrict a volume field to the lateral nodes."""
        rg = self.ring
        vals = np.asarray(u)[rg["i"], rg["j"], 1:-1]
        return TraceField(vals, self.trace_weights(), order)

    def extend_trace(self, f, dtype=complex) -> np.ndarray:
        """Volume array equal to ``f`` on lateral nodes and zero elsewhere."""
        vals = f.values if isinstance(f, TraceField) else np.asarray(f)
        u = np.zeros(self.shape, dtype=dtype)
        rg = self.ring
        u[rg["i"], rg["j"], 1:-1] = vals
        return u

    # ---- quadrature --------------------------------------------------------
    @cached_property
    def volume_weights(self) -> np.ndarray:
        """Node quadrature weights (Cartesian cell volume or polar ``r dr dt dx3``)."""
        if self.kind == "annulus":
            wr = np.full(self.n1 + 1, self.h_prime)
            wr[[0, -1]] *= 0.5
            w2 = (wr * self.x1)[:, None] * (2 * np.pi / self.n2)
            w2 = np.broadcast_to(w2, (self.n1 + 1, self.n2))
        else:
            w2 = np.full((self.n1 + 1, self.n2 + 1), self.h_prime ** 2)
        w3 = np.full(self.n3 + 1, self.h3)
        return w2[:, :, None] * w3[None, None, :]


def build_grid(cs: CrossSection, n_prime: int, n3: int, L: float) -> Grid3:
    """Build the truncated cylinder grid.

    Parameters
    ----------
    cs : CrossSection
    n_prime : int
        Transverse intervals: across side ``a1`` for a rectangle, across the
        radial width ``1 - r0`` for an annulus.
    n3 : int
        Axial intervals on ``[-L, L]``.
    L : float
        Truncation half-length.

    Returns
    -------
    Grid3
    """
    if int(n_prime) != n_prime or n_prime < 8:
        raise ParameterError("n_prime must be an integer >= 8")
    if int(n3) != n3 or n3 < 16:
        raise ParameterError("n3 must be an integer >= 16")
    if not L > 0:
        raise ParameterError("L must be positive")
    n_prime, n3 = int(n_prime), int(n3)
    h3 = 2.0 * L / n3
    x3 = np.linspace(-L, L, n3 + 1)
    if cs.kind == "rectangle":
        h = cs.a1 / n_prime
        n2f = cs.a2 / h
        n2 = int(round(n2f))
        if abs(n2 - n2f) > 1e-9 * max(1.0, n2f) or n2 < 8:
            raise ParameterError("a2 must be an integer multiple (>= 8) of the spacing a1/n_prime")
        x1 = np.linspace(-cs.a1 / 2, cs.a1 / 2, n_prime + 1)
        x2 = np.linspace(-cs.a2 / 2, cs.a2 / 2, n2 + 1)
        return Grid3(cs, n_prime, n2, n3, float(L), h, h3, x1, x2, x3)
    h = (1.0 - cs.r0) / n_prime
    nt = max(16, 4 * int(np.ceil(2 * np.pi / h / 4)))
    r = np.linspace(cs.r0, 1.0, n_prime + 1)
    t = 2 * np.pi * np.arange(nt) / nt
    return Grid3(cs, n_prime, nt, n3, float(L), h, h3, r, t, x3)


def subdomain_mask(g: Grid3, j: int) -> np.ndarray:
    """Node mask of ``O_j = W_j x [-L, L]`` with shape ``g.shape``."""
    X1, X2 = g.transverse
    m2 = g.cross_section.in_subdomain(j, X1, X2)
    return np.broadcast_to(m2[:, :, None], g.shape).copy()


def boundary_restriction(g: Grid3, f: TraceField, part: str = "full") -> TraceField:
    """Zero a trace outside ``Gamma_0 x [-L, L]``."""
    if part == "full":
        return f
    if part != "gamma0":
        raise ParameterError("part must be 'full' or 'gamma0'")
    keep = g.ring_in_gamma0()
    vals = np.where(keep[:, None], f.values, 0)
    return TraceField(vals, f.weights, f.order)
