"""Complex geometrical optics solutions on rectangle waveguide grids.

A CGO solution has the form ``u = exp(-rho theta_s . x') c`` with core
``c = exp(i rho eta_s . x) chi(rho^{-1/4} x3) exp(-i xi_s . x) + r``. The
``+`` member uses ``(theta, eta, xi)``; the ``-`` member uses
``(-theta, -eta, 0)``. The exponential factor is never materialized inside
the solver: the remainder solves the conjugated equation

    P r + q r = -(P + q) p,   P = exp(a.x') (-Delta_h) exp(-a.x'),  a = rho theta_s

at interior nodes. ``P`` is inverted exactly (``E_rho``) with Bloch-periodic
conditions in ``x'`` and Dirichlet conditions on the caps, diagonalized by
FFT in ``x'`` and a type-I sine transform in ``x3``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, gmres

from .fd import sobolev_norm
from .grid import Grid3, ParameterError

__all__ = [
    "DegenerateFrequencyError",
    "ResolutionError",
    "ContractionError",
    "CgoParams",
    "CgoSolution",
    "chi",
    "make_params",
    "theta_for",
    "eta_of",
    "principal_part",
    "conjugated_rhs",
    "conjugated_apply",
    "ConjugatedInverse",
    "solve_remainder",
    "cgo_pair",
    "e_rho_norms",
    "estimate_rho0",
    "RESOLUTION_LIMIT",
]

RESOLUTION_LIMIT = 0.3


class DegenerateFrequencyError(ParameterError):
    """Frequency with vanishing transverse or axial part."""


class ResolutionError(ParameterError):
    """Grid too coarse for the CGO oscillation."""


class ContractionError(RuntimeError):
    """Fixed-point map fails to contract (rho too small)."""


# ---------------------------------------------------------------------------
# cutoff
# ---------------------------------------------------------------------------
def _f(y):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    m = y > 0
    out[m] = np.exp(-1.0 / y[m])
    return out


def _f1(y):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    m = y > 0
    out[m] = np.exp(-1.0 / y[m]) / y[m] ** 2
    return out


def _f2(y):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    m = y > 0
    out[m] = np.exp(-1.0 / y[m]) * (1.0 / y[m] ** 4 - 2.0 / y[m] ** 3)
    return out


def chi(t, derivative: int = 0):
    """Smooth even cutoff: 1 on ``|t| <= 1``, 0 on ``|t| >= 2``.

    On ``1 < |t| < 2`` with ``s = |t| - 1`` it equals
    ``f(1 - s) / (f(1 - s) + f(s))`` with ``f(y) = exp(-1/y)``.
    ``derivative`` selects the value (0) or the first two derivatives.
    """
    t = np.asarray(t, dtype=float)
    a_ = np.abs(t)
    s = np.clip(a_ - 1.0, 0.0, 1.0)
    a, b = _f(1 - s), _f(s)
    S = a + b
    mid = (a_ > 1) & (a_ < 2)
    if derivative == 0:
        out = np.where(a_ <= 1, 1.0, 0.0)
        out[mid] = (a / S)[mid]
        return out
    a1, b1 = -_f1(1 - s), _f1(s)
    N = a1 * b - a * b1
    out = np.zeros_like(t)
    if derivative == 1:
        out[mid] = (np.sign(t) * N / S ** 2)[mid]
        return out
    if derivative == 2:
        a2, b2 = _f2(1 - s), _f2(s)
        N1 = a2 * b - a * b2
        out[mid] = (N1 / S ** 2 - 2 * N * (a1 + b1) / S ** 3)[mid]
        return out
    raise ValueError("derivative must be 0, 1 or 2")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CgoParams:
    """Frequency data of one CGO pair."""

    rho: float
    theta: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    R: float
    rho0: float | None = None

    def signed(self, sign: int):
        """``(theta_s, eta_s, xi_s)`` for the ``+`` or ``-`` member."""
        if sign == +1:
            return self.theta, self.eta, self.xi
        if sign == -1:
            return -self.theta, -self.eta, np.zeros(3)
        raise ParameterError("sign must be +1 or -1")

    def as_dict(self):
        return dict(rho=float(self.rho), theta=self.theta.tolist(), xi=self.xi.tolist(),
                    eta=self.eta.tolist(), R=float(self.R), rho0=self.rho0)


def eta_of(xi) -> np.ndarray:
    """Unit vector orthogonal to ``xi`` with transverse part parallel to ``xi'``."""
    xi = np.asarray(xi, dtype=float)
    xp = xi[:2]
    n2 = float(xp @ xp)
    if n2 == 0.0 or xi[2] == 0.0:
        raise DegenerateFrequencyError("xi' and xi_3 must both be non-zero")
    v = np.array([xp[0], xp[1], -n2 / xi[2]])
    return v / np.sqrt(n2 + n2 ** 2 / xi[2] ** 2)


def theta_for(xi) -> np.ndarray:
    """Transverse unit vector obtained by rotating ``xi'`` by +90 degrees."""
    xp = np.asarray(xi, dtype=float)[:2]
    n = np.hypot(*xp)
    if n == 0.0:
        raise DegenerateFrequencyError("xi' must be non-zero")
    return np.array([-xp[1], xp[0]]) / n


def make_params(theta, xi, rho, R=None, rho0=None) -> CgoParams:
    """Validate frequencies and derive ``eta``."""
    theta = np.asarray(theta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if theta.shape != (2,) or xi.shape != (3,):
        raise ParameterError("theta must have 2 and xi 3 components")
    if abs(np.hypot(*theta) - 1.0) > 1e-12:
        raise ParameterError("theta must be a unit vector")
    if not rho >= 1.0:
        raise ParameterError("rho must be >= 1")
    nx = float(np.linalg.norm(xi))
    R = nx if R is None else float(R)
    if np.hypot(*xi[:2]) == 0.0 or xi[2] == 0.0:
        raise DegenerateFrequencyError("xi' and xi_3 must both be non-zero")
    if abs(theta @ xi[:2]) > 1e-12 * max(1.0, nx):
        raise ParameterError("xi' must be orthogonal to theta")
    if nx > R * (1 + 1e-12):
        raise ParameterError("|xi| exceeds R")
    return CgoParams(float(rho), theta, xi, eta_of(xi), R, rho0)


# ---------------------------------------------------------------------------
# principal part and conjugated operator
# ---------------------------------------------------------------------------
def _require_rectangle(g: Grid3):
    if g.kind != "rectangle":
        raise ParameterError("CGO solutions are implemented for rectangle cross-sections")


def principal_part(p: CgoParams, sign: int, x1, x2, x3, scaled: bool = True):
    """Principal part at points ``(x1, x2, x3)``.

    With ``scaled=True`` the factor ``exp(-rho theta_s . x')`` is omitted and
    the core ``exp(i rho eta_s . x) chi exp(-i xi_s . x)`` is returned.
    """
    th, et, xs = p.signed(sign)
    x1, x2, x3 = (np.asarray(v, dtype=float) for v in (x1, x2, x3))
    phase = (p.rho * et[0] - xs[0]) * x1 + (p.rho * et[1] - xs[1]) * x2 + (p.rho * et[2] - xs[2]) * x3
    core = np.exp(1j * phase) * chi(p.rho ** -0.25 * x3)
    if scaled:
        return core
    return np.exp(-p.rho * (th[0] * x1 + th[1] * x2)) * core


def _core_on_grid(g: Grid3, p: CgoParams, sign: int):
    X1, X2, X3 = g.coords()
    return principal_part(p, sign, X1, X2, X3) * np.ones(g.shape)


def conjugated_apply(g: Grid3, c, a, q=None):
    """``exp(a.x') (-Delta_h) exp(-a.x') c (+ q c)`` at interior nodes, zero elsewhere."""
    c = np.asarray(c)
    out = np.zeros(c.shape, dtype=complex)
    ctr = c[1:-1, 1:-1, 1:-1]
    acc = np.zeros(ctr.shape, dtype=complex)
    for ax, hh, aa in ((0, g.h_prime, a[0]), (1, g.h_prime, a[1]), (2, g.h3, 0.0)):
        sp_ = [slice(1, -1)] * 3
        sm_ = [slice(1, -1)] * 3
        sp_[ax] = slice(2, None)
        sm_[ax] = slice(None, -2)
        acc -= (np.exp(-aa * hh) * c[tuple(sp_)] - 2 * ctr + np.exp(aa * hh) * c[tuple(sm_)]) / hh ** 2
    if q is not None:
        acc += np.asarray(q)[1:-1, 1:-1, 1:-1] * ctr
    out[1:-1, 1:-1, 1:-1] = acc
    return out


def conjugated_rhs(p: CgoParams, q, sign: int = +1, g: Grid3 | None = None,
                   mode: str = "discrete", terms: bool = False):
    """Right side ``-(P + q) p`` of the remainder equation.

    ``mode='discrete'`` applies the conjugated seven-point stencil to the
    principal core (the remainder equation is then discretely exact).
    ``mode='analytic'`` evaluates the closed form

        -[(|xi_s|^2 + q) chi - 2i eta_3 rho^{3/4} chi' + 2i xi_3 rho^{-1/4} chi'
          - rho^{-1/2} chi''] exp(i rho eta_s.x) exp(-i xi_s.x)

    with the cutoff derivatives taken at ``rho^{-1/4} x3``; ``terms=True``
    returns the four contributions separately.
    """
    g = q.grid if g is None else g
    _require_rectangle(g)
    qv = q.values if hasattr(q, "values") else np.asarray(q)
    th, et, xs = p.signed(sign)
    rho = p.rho
    if mode == "discrete":
        return -conjugated_apply(g, _core_on_grid(g, p, sign), rho * th, qv)
    if mode != "analytic":
        raise ParameterError("mode must be 'discrete' or 'analytic'")
    X1, X2, X3 = g.coords()
    t = rho ** -0.25 * X3
    ph = np.exp(1j * ((rho * et[0] - xs[0]) * X1 + (rho * et[1] - xs[1]) * X2
                      + (rho * et[2] - xs[2]) * X3))
    c0, c1, c2 = chi(t), chi(t, 1), chi(t, 2)
    parts = dict(
        potential=-(float(xs @ xs) + qv) * c0 * ph,
        eta_term=2j * et[2] * rho ** 0.75 * c1 * ph * np.ones(g.shape),
        xi_term=-2j * xs[2] * rho ** -0.25 * c1 * ph * np.ones(g.shape),
        chi2_term=rho ** -0.5 * c2 * ph * np.ones(g.shape),
    )
    if terms:
        return parts
    return sum(parts.values())


class ConjugatedInverse:
    """Exact inverse of the Bloch-periodic conjugated seven-point operator.

    Parameters
    ----------
    g : Grid3
    a : array_like, shape (2,)
        Conjugation vector ``rho theta_s``.
    n_shifts : int
        Candidate Bloch shifts scanned to maximize the smallest symbol
        modulus.
    """

    def __init__(self, g: Grid3, a, n_shifts: int = 40):
        _require_rectangle(g)
        self.g = g
        self.a = np.asarray(a, dtype=float)
        N1, N2 = g.n1 + 1, g.n2 + 1
        h, h3 = g.h_prime, g.h3
        P1, P2 = N1 * h, N2 * h
        k1 = 2 * np.pi * sfft.fftfreq(N1, d=h)
        k2 = 2 * np.pi * sfft.fftfreq(N2, d=h)
        k3 = np.pi * np.arange(1, g.n3) / (2 * g.L)
        self.k3 = k3
        s3 = (4 / h3 ** 2) * np.sin(k3 * h3 / 2) ** 2
        anorm = np.hypot(*self.a)
        dirn = self.a / anorm if anorm > 0 else np.array([1.0, 0.0])
        best = None
        for t in np.arange(n_shifts) / n_shifts:
            shift = t * dirn * 2 * np.pi / np.array([P1, P2])
            e1 = (4 / h ** 2) * np.sin((k1 + shift[0] + 1j * self.a[0]) * h / 2) ** 2
            e2 = (4 / h ** 2) * np.sin((k2 + shift[1] + 1j * self.a[1]) * h / 2) ** 2
            m = np.min(np.abs(e1[:, None, None] + e2[None, :, None] + s3[None, None, :]))
            if best is None or m > best[0]:
                best = (m, shift, e1, e2)
        self.min_symbol, self.shift, e1, e2 = best
        self.symbol = e1[:, None, None] + e2[None, :, None] + s3[None, None, :]
        # same transverse symbol, axial frequency continuous on [0, pi/h3]
        T = e1[:, None] + e2[None, :]
        s_best = np.clip(-T.real, 0.0, 4 / h3 ** 2)
        self.min_symbol_guide = float(np.min(np.abs(T + s_best)))
        X1, X2 = g.transverse
        self._phase = np.exp(1j * (self.shift[0] * X1 + self.shift[1] * X2))[:, :, None]
        self.k1 = k1 + self.shift[0]
        self.k2 = k2 + self.shift[1]

    @property
    def norm_l2(self) -> float:
        """Exact discrete ``L^2 -> L^2`` norm (the transforms are unitary)."""
        return 1.0 / self.min_symbol

    @property
    def norm_guide(self) -> float:
        """``L^2`` norm on the untruncated guide; bounds :attr:`norm_l2` and is independent of ``L``."""
        return 1.0 / self.min_symbol_guide

    def _h2_weight(self):
        g = self.g
        d1 = (2 / g.h_prime) * np.sin(self.k1 * g.h_prime / 2)
        d2 = (2 / g.h_prime) * np.sin(self.k2 * g.h_prime / 2)
        d3 = (2 / g.h3) * np.sin(self.k3 * g.h3 / 2)
        D2 = d1[:, None, None] ** 2 + d2[None, :, None] ** 2 + d3[None, None, :] ** 2
        return np.sqrt(1.0 + D2 + D2 ** 2)

    @property
    def norm_h2_symbol(self) -> float:
        """Symbol bound of the ``L^2 -> H^2`` norm with difference-operator weights."""
        return float(np.max(self._h2_weight() / np.abs(self.symbol)))

    def to_modes(self, F):
        G = np.asarray(F)[:, :, 1:-1] * np.conj(self._phase)
        G = sfft.fft2(G, axes=(0, 1), norm="ortho")
        return sfft.dst(G, type=1, axis=2, norm="ortho")

    def from_modes(self, G):
        G = sfft.idst(G, type=1, axis=2, norm="ortho")
        G = sfft.ifft2(G, axes=(0, 1), norm="ortho")
        out = np.zeros(self.g.shape, dtype=complex)
        out[:, :, 1:-1] = G * self._phase
        return out

    def __call__(self, F):
        return self.from_modes(self.to_modes(F) / self.symbol)

    def adjoint(self, F):
        return self.from_modes(self.to_modes(F) / np.conj(self.symbol))

    def forward(self, r):
        """The Bloch-periodic conjugated operator itself (inverse of ``__call__``)."""
        return self.from_modes(self.to_modes(r) * self.symbol)


# ---------------------------------------------------------------------------
# remainder
# ---------------------------------------------------------------------------
@dataclass
class CgoSolution:
    """CGO member in scaled form: ``u = exp(-rho theta_s . x') * core``."""

    params: CgoParams
    sign: int
    grid: Grid3
    remainder: np.ndarray
    core: np.ndarray
    iterations: int
    contraction: float
    method: str
    report: dict = field(default_factory=dict)

    @property
    def a(self) -> np.ndarray:
        th, _, _ = self.params.signed(self.sign)
        return self.params.rho * th

    def log_factor(self):
        """``-a . x'`` on the transverse grid (log of the omitted factor)."""
        X1, X2 = self.grid.transverse
        return -(self.a[0] * X1 + self.a[1] * X2)

    def full_field(self):
        """Materialize ``u``; only sensible while ``rho D`` is moderate."""
        lf = self.log_factor()
        if np.max(np.abs(lf)) > 700:
            raise OverflowError("exponential factor overflows; use the scaled core")
        return np.exp(lf)[:, :, None] * self.core

    def residual(self, q) -> float:
        """Interior residual of ``(-Delta_h + q) u`` in scaled form, relative to the principal part's."""
        qv = q.values if hasattr(q, "values") else np.asarray(q)
        res = conjugated_apply(self.grid, self.core, self.a, qv)
        ref = conjugated_apply(self.grid, self.core - self.remainder, self.a, qv)
        den = max(np.linalg.norm(ref), 1e-300)
        return float(np.linalg.norm(res) / den)


def check_resolution(g: Grid3, p: CgoParams, sign: int = +1, limit: float = RESOLUTION_LIMIT):
    """Raise if the grid does not resolve the CGO oscillation and cutoff support."""
    th, et, xs = p.signed(sign)
    if g.h_prime * p.rho > limit + 1e-12:
        raise ResolutionError(f"h' * rho = {g.h_prime * p.rho:.3f} exceeds {limit}")
    w3 = abs(p.rho * et[2] - xs[2])
    if g.h3 * w3 > limit + 1e-12:
        raise ResolutionError(f"h3 * |rho eta_3 - xi_3| = {g.h3 * w3:.3f} exceeds {limit}")
    if 2 * p.rho ** 0.25 > g.L + 1e-12:
        raise ResolutionError(f"cutoff support 2 rho^(1/4) = {2 * p.rho ** 0.25:.3f} exceeds L")


def solve_remainder(p: CgoParams, q, sign: int = +1, method: str = "fixed_point",
                    g: Grid3 | None = None, tol: float = 1e-10, maxiter: int = 200,
                    einv: ConjugatedInverse | None = None, check: bool = True) -> CgoSolution:
    """Remainder of a CGO member.

    ``fixed_point`` iterates ``r <- E (F - q r)``; ``direct`` solves
    ``(I + E q) r = E F`` by GMRES. Both target the same discrete equation.
    """
    g = q.grid if g is None else g
    _require_rectangle(g)
    if check:
        check_resolution(g, p, sign)
    qv = q.values if hasattr(q, "values") else np.asarray(q)
    th, _, _ = p.signed(sign)
    a = p.rho * th
    E = ConjugatedInverse(g, a) if einv is None else einv
    core0 = _core_on_grid(g, p, sign)
    F = -conjugated_apply(g, core0, a, qv)
    w = g.volume_weights

    def nrm(x):
        return float(np.sqrt(np.sum(w * np.abs(x) ** 2)))

    qzero = not np.any(qv)
    bound = float(np.max(np.abs(qv))) * E.norm_l2
    if method == "fixed_point":
        r = np.zeros(g.shape, complex)
        prev_d = None
        ratio = 0.0
        it = 0
        for it in range(1, maxiter + 1):
            r_new = E(F - qv * r)
            d = nrm(r_new - r)
            r = r_new
            if qzero:
                break
            if prev_d is not None and prev_d > 0:
                ratio = max(ratio, d / prev_d) if it > 2 else d / prev_d
                if d / prev_d >= 1.0 and it > 3:
                    raise ContractionError(f"fixed-point ratio {d / prev_d:.3f} >= 1 "
                                           f"(rho={p.rho} too small)")
            prev_d = d
            if d <= tol * max(1.0, nrm(r)):
                break
        else:
            raise ContractionError(f"fixed point did not converge in {maxiter} iterations")
        contraction = ratio
    elif method == "direct":
        n = int(np.prod(g.shape))

        def mv(x):
            x = x.reshape(g.shape)
            return (x + E(qv * x)).ravel()

        A = LinearOperator((n, n), matvec=mv, dtype=complex)
        b = E(F).ravel()
        x, info = gmres(A, b, rtol=1e-13, atol=0.0, restart=50, maxiter=50)
        if info != 0:
            raise ContractionError(f"GMRES failed to converge (info={info})")
        r = x.reshape(g.shape)
        it, contraction = 1, bound
    else:
        raise ParameterError("method must be 'fixed_point' or 'direct'")
    core = core0 + r
    report = dict(r_l2=nrm(r), r_h2=sobolev_norm(g, r, 2), rhs_l2=nrm(F),
                  E_norm=E.norm_guide, E_norm_truncated=E.norm_l2, contraction_bound=bound)
    return CgoSolution(p, sign, g, r, core, it, contraction, method, report)


def cgo_pair(q1, q2, p: CgoParams, method: str = "fixed_point", **kw):
    """``(u1, u2)``: ``+`` member for ``q1`` and ``-`` member for ``q2``."""
    u1 = solve_remainder(p, q1, +1, method, **kw)
    u2 = solve_remainder(p, q2, -1, method, **kw)
    return u1, u2


def e_rho_norms(g: Grid3, theta, rho, n_sources: int = 20, seed=0, power_steps: int = 30):
    """Measured ``L^2`` and ``L^2 -> H^2`` norms of ``E_rho`` from random sources.

    Each random source is refined by power iteration on ``E^* E`` (resp. its
    ``H^2``-weighted analogue, diagonal in the mode basis) and the best
    Rayleigh quotient is reported; ``H^2`` norms of the final fields are
    evaluated with finite differences.
    """
    E = ConjugatedInverse(g, rho * np.asarray(theta, dtype=float))
    rng = np.random.default_rng(seed)
    w = g.volume_weights
    sym = np.abs(E.symbol)
    wh2 = E._h2_weight()
    best_l2 = best_h2 = 0.0
    best_h2_fd = 0.0
    for _ in range(n_sources):
        F = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
        F[:, :, [0, -1]] = 0
        G0 = E.to_modes(F)
        G = G0.copy()
        for _ in range(power_steps):
            G = G / sym ** 2
            G /= np.linalg.norm(G)
        Fs = E.from_modes(G)
        val = np.sqrt(np.sum(w * np.abs(E(Fs)) ** 2) / np.sum(w * np.abs(Fs) ** 2))
        best_l2 = max(best_l2, float(val))
        G = G0.copy()
        for _ in range(power_steps):
            G = G * (wh2 / sym) ** 2
            G /= np.linalg.norm(G)
        Fs = E.from_modes(G)
        src = np.sqrt(np.sum(w * np.abs(Fs) ** 2))
        val_h2 = sobolev_norm(g, E(Fs), 2) / src
        best_h2_fd = max(best_h2_fd, float(val_h2))
        best_h2 = max(best_h2, float(np.linalg.norm(G * wh2 / sym) / np.linalg.norm(G)))
    return dict(l2=best_l2, h2=best_h2, h2_fd=best_h2_fd, l2_exact=E.norm_l2,
                h2_symbol=E.norm_h2_symbol, min_symbol=E.min_symbol)


def estimate_rho0(g: Grid3, q, xi, rhos, ratio_target: float = 0.5):
    """Smallest ``rho`` in ``rhos`` whose fixed-point contraction bound is below target."""
    qv = q.values if hasattr(q, "values") else np.asarray(q)
    qmax = float(np.max(np.abs(qv)))
    th = theta_for(xi)
    for rho in sorted(rhos):
        E = ConjugatedInverse(g, rho * th)
        if qmax * E.norm_l2 <= ratio_target:
            return float(rho)
    return None
