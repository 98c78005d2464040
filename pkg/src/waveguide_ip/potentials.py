"""Admissible potentials: factory, admissibility report and spectral guard."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import LATERAL, Grid3, ParameterError, subdomain_mask

__all__ = [
    "PotentialField",
    "AdmissibilityReport",
    "SpectrumError",
    "bump_profile",
    "make_bump_potential",
    "check_admissibility",
    "spectrum_guard",
    "decay_sum",
]


class SpectrumError(RuntimeError):
    """Discrete Schroedinger operator is singular to tolerance."""


@dataclass
class PotentialField:
    """Real potential sampled on the nodes of a grid.

    Attributes
    ----------
    grid : Grid3
    values : ndarray
        Node values, shape ``grid.shape``.
    q0 : ndarray or None
        Reference potential (``None`` means zero).
    M : float
        Admissibility bound.
    cls : {'Q', 'Qprime'}
    meta : dict
        Factory parameters, kept for serialization.
    """

    grid: Grid3
    values: np.ndarray
    q0: np.ndarray | None = None
    M: float = 10.0
    cls: str = "Q"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ParameterError("potential values do not match the grid shape")
        self.values.setflags(write=False)

    @property
    def reference(self) -> np.ndarray:
        return np.zeros(self.grid.shape) if self.q0 is None else np.asarray(self.q0)

    @property
    def difference(self) -> np.ndarray:
        return self.values - self.reference

    @classmethod
    def zero(cls, g: Grid3, **kw):
        return cls(g, np.zeros(g.shape), **kw)

    @classmethod
    def constant(cls, g: Grid3, c: float, **kw):
        return cls(g, np.full(g.shape, float(c)), **kw)


def bump_profile(s):
    """Smooth radial bump ``exp(1 - 1/(1 - s^2))`` on ``s < 1``, zero outside."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = s < 1.0
    out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m] ** 2))
    return out


def _ellipsoid_surface(center, widths, n=24):
    t = np.linspace(0, np.pi, n)
    p = np.linspace(0, 2 * np.pi, 2 * n, endpoint=False)
    T, P = np.meshgrid(t, p, indexing="ij")
    pts = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], -1)
    return np.asarray(center) + pts * np.asarray(widths)


def make_bump_potential(g: Grid3, center, widths, amplitude, q0=None, cls="Q",
                        M=10.0, pad=None) -> PotentialField:
    """Compactly supported smooth bump added to a reference potential.

    Parameters
    ----------
    g : Grid3
    center : sequence of 3 floats
    widths : float or sequence of 3 floats
        Semi-axes of the ellipsoidal support.
    amplitude : float
    q0 : ndarray, optional
        Reference potential on the grid nodes.
    cls : {'Q', 'Qprime'}
        For ``'Qprime'`` the support must avoid the collar ``O_0``.
    pad : float, optional
        Required axial clearance from the caps (default ``2 * h3``).
    """
    center = np.asarray(center, dtype=float)
    widths = np.broadcast_to(np.asarray(widths, dtype=float), (3,)).copy()
    if np.any(widths <= 0):
        raise ParameterError("bump widths must be positive")
    pad = 2 * g.h3 if pad is None else float(pad)
    surf = _ellipsoid_surface(center, widths).reshape(-1, 3)
    cs = g.cross_section
    if g.kind == "rectangle":
        inside = (np.all(np.abs(surf[:, 0]) < 0.5 * cs.a1)
                  and np.all(np.abs(surf[:, 1]) < 0.5 * cs.a2))
    else:
        r = np.hypot(surf[:, 0], surf[:, 1])
        inside = bool(np.all((r > cs.r0) & (r < 1.0)))
    if not inside or np.max(np.abs(surf[:, 2])) > g.L - pad:
        raise ParameterError("bump support touches the boundary of the truncated cylinder")
    if cls == "Qprime":
        lev = cs.level(surf[:, 0], surf[:, 1])
        if np.any(lev > 1.0 - cs.offsets[0]):
            raise ParameterError("bump support meets the collar O_0 (Qprime family)")
    elif cls != "Q":
        raise ParameterError("cls must be 'Q' or 'Qprime'")
    X1, X2, X3 = g.coords()
    s = np.sqrt(((X1 - center[0]) / widths[0]) ** 2 + ((X2 - center[1]) / widths[1]) ** 2
                + ((X3 - center[2]) / widths[2]) ** 2)
    ref = np.zeros(g.shape) if q0 is None else np.asarray(q0, dtype=float)
    vals = ref + float(amplitude) * bump_profile(s)
    meta = dict(kind="bump", center=center.tolist(), widths=widths.tolist(),
                amplitude=float(amplitude))
    return PotentialField(g, vals, None if q0 is None else ref, M=M, cls=cls, meta=meta)


@dataclass
class AdmissibilityReport:
    passed: bool
    quantities: dict
    checks: dict

    def failures(self):
        return [k for k, v in self.checks.items() if not v]


def _h1_norm(g: Grid3, d) -> float:
    w = g.volume_weights
    tot = np.sum(w * d ** 2)
    steps = (g.h_prime, g.h_prime if g.kind == "rectangle" else None, g.h3)
    for ax, h in enumerate(steps):
        if g.kind == "annulus" and ax == 1:
            r = g.x1[:, None, None]
            df = (np.roll(d, -1, 1) - d) / (r * 2 * np.pi / g.n2)
            tot += np.sum(w * df ** 2)
            continue
        df = np.diff(d, axis=ax) / h
        sl = [slice(None)] * 3
        sl[ax] = slice(0, -1)
        tot += np.sum(w[tuple(sl)] * df ** 2)
    return float(np.sqrt(tot))


def _c2_norm(g: Grid3, q) -> float:
    val = np.max(np.abs(q))
    steps = (g.h_prime, g.h_prime, g.h3)
    first = max(np.max(np.abs(np.diff(q, axis=a))) / steps[a] for a in range(3))
    second = max(np.max(np.abs(np.diff(q, n=2, axis=a))) / steps[a] ** 2 for a in range(3))
    return float(val + first + second)


def decay_sum(g: Grid3, d) -> float:
    """Weighted axial moment ``sum (1 + |x3|) |d| dV``."""
    X3 = g.x3[None, None, :]
    return float(np.sum((1.0 + np.abs(X3)) * np.abs(d) * g.volume_weights))


def check_admissibility(q: PotentialField, q0: PotentialField | np.ndarray | None = None,
                        M: float | None = None, cls: str | None = None) -> AdmissibilityReport:
    """Evaluate the admissible-class conditions on the grid.

    Returns the computed norms and one boolean per condition.
    """
    g = q.grid
    if q0 is None:
        ref = q.reference
    elif isinstance(q0, PotentialField):
        if q0.grid.shape != g.shape:
            raise ParameterError("q and q0 live on different grids")
        ref = q0.values
    else:
        ref = np.asarray(q0, dtype=float)
        if ref.shape != g.shape:
            raise ParameterError("q and q0 live on different grids")
    M = q.M if M is None else float(M)
    cls = q.cls if cls is None else cls
    d = q.values - ref
    h1 = _h1_norm(g, d)
    linf = float(np.max(np.abs(q.values)))
    dec = decay_sum(g, d)
    lat = g.classification == LATERAL
    bdry = float(np.max(np.abs(d[lat]))) if lat.any() else 0.0
    quantities = dict(h1_diff=h1, linf=linf, decay=dec, total=h1 + linf + dec,
                      boundary_mismatch=bdry)
    checks = dict(bound=h1 + linf + dec <= M, boundary_agreement=bdry == 0.0)
    if cls == "Qprime":
        o0 = subdomain_mask(g, 0)
        quantities["o0_mismatch"] = float(np.max(np.abs(d[o0]))) if o0.any() else 0.0
        quantities["c2"] = _c2_norm(g, q.values)
        checks["o0_agreement"] = quantities["o0_mismatch"] == 0.0
        checks["c2_bound"] = quantities["c2"] <= M
    return AdmissibilityReport(all(checks.values()), quantities, checks)


def spectrum_guard(q: PotentialField, tol: float = 1e-10, raise_on_singular: bool = True) -> float:
    """Smallest singular value of the Dirichlet operator ``-Delta_h + q``.

    The operator is real symmetric, so this is the eigenvalue of smallest
    magnitude, found by shift-invert Lanczos around zero.
    """
    from scipy.sparse.linalg import eigsh

    from .forward import assemble_operator

    A = assemble_operator(q.grid, q.values).tocsc()
    try:
        v0 = np.ones(A.shape[0])
        vals = eigsh(A, k=1, sigma=0.0, which="LM", v0=v0, return_eigenvectors=False)
        margin = float(np.min(np.abs(vals)))
    except RuntimeError:
        margin = 0.0
    if margin < tol and raise_on_singular:
        raise SpectrumError(f"operator singular to tolerance (margin={margin:.3e})")
    return margin
