"""Carleman weight on the boundary collar and the weak unique continuation estimate.

The weight is ``phi = exp(beta psi)`` with ``psi(x) = psi0(x')`` and

* annulus: ``psi0 = |x'| - r0`` on the whole annular grid, which is taken
  to be the collar ``O_0``; the inner circle plays the role of the
  artificial boundary ``Gamma#``;
* rectangle: ``psi0 = level(x') - (1 - d0)`` on ``W_0``, the superlevel
  collar of the p-norm level function.

Only ``Gamma_0`` equal to the full outer boundary is supported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fd import gradient, laplacian, sobolev_norm
from .grid import INTERIOR, Grid3, ParameterError, subdomain_mask

__all__ = [
    "UnsupportedConfigurationError",
    "WeightInvalidError",
    "TraceViolationError",
    "CarlemanWeight",
    "ConjugatedParts",
    "build_weight",
    "verify_weight_properties",
    "conjugate_decompose",
    "carleman_ratio",
    "carleman_sweep",
    "estimate_lambda0",
    "ucp_estimate",
    "random_test_field",
    "outer_normal_derivative",
]


class UnsupportedConfigurationError(ParameterError):
    """Requested weight configuration is not implemented."""


class WeightInvalidError(RuntimeError):
    """No admissible exponent ``beta`` up to the configured maximum."""


class TraceViolationError(ParameterError):
    """Field does not vanish on the boundary of the collar."""


@dataclass
class CarlemanWeight:
    """Weight data on a collar grid.

    Attributes
    ----------
    grid : Grid3
    beta : float
    c0 : float
        Level of the artificial boundary ``Gamma#`` (``psi0 = 0`` there).
    psi0 : ndarray
        ``psi0`` on the transverse nodes (zero outside the collar).
    grad_psi, hess_psi : tuple of ndarray
        Transverse gradient (grid frame) and Cartesian Hessian
        ``(p11, p12, p22)`` of ``psi0``.
    collar : ndarray of bool
        Closed collar mask on the transverse nodes.
    kappa : float
        Half the minimum of ``psi0`` on ``W_2 \\ W_3``.
    sharp_width : float
        Depth of the ``Gamma#`` collar ``W#``.
    alpha0 : float
        Minimum of ``|grad psi0|`` on the collar.
    lambda0 : float
        Empirical threshold (``nan`` until estimated).
    constants : dict
        Smallest admissible weight-property constants ``C0``, ``C1``, ``C2``.
    """

    grid: Grid3
    beta: float
    c0: float
    psi0: np.ndarray
    grad_psi: tuple
    hess_psi: tuple
    collar: np.ndarray
    kappa: float
    sharp_width: float
    alpha0: float
    lambda0: float = float("nan")
    constants: dict = field(default_factory=dict)

    @property
    def psi_max(self) -> float:
        return float(np.max(self.psi0[self.collar]))

    @property
    def alpha1(self) -> float:
        b, k = self.beta, self.kappa
        return math.exp(2 * b * k) - math.exp(b * k)

    @property
    def alpha2(self) -> float:
        b = self.beta
        return math.exp(2 * b * self.psi_max) - math.exp(2 * b * self.kappa)

    @property
    def phi(self) -> np.ndarray:
        """``phi`` on the transverse nodes (meaningful on the collar)."""
        return np.exp(self.beta * self.psi0)

    @property
    def sharp_mask(self) -> np.ndarray:
        """Transverse mask of ``W#``, the collar of ``Gamma#`` of depth ``sharp_width``."""
        return self.collar & (self.psi0 < self.sharp_width)

    @property
    def o0_open(self) -> np.ndarray:
        """3D mask of nodes where a collar test field may be nonzero."""
        g = self.grid
        m = self.collar & (self.psi0 > 0)
        return (g.classification == INTERIOR) & m[:, :, None]

    def with_beta(self, beta: float) -> "CarlemanWeight":
        from dataclasses import replace

        return replace(self, beta=float(beta), constants={})


def _psi_geometry(g: Grid3):
    cs = g.cross_section
    X1, X2 = g.transverse
    if g.kind == "annulus":
        c0 = cs.r0
        lev = g.x1[:, None] * np.ones(g.shape[1])[None, :]
        grad = (np.ones_like(lev), np.zeros_like(lev))
        r = lev
        cth, sth = np.cos(g.x2)[None, :], np.sin(g.x2)[None, :]
        hess = ((1 - cth ** 2) / r, -cth * sth / r, (1 - sth ** 2) / r)
        collar = np.ones_like(lev, bool)
    else:
        c0 = 1.0 - cs.offsets[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            lev, grad, hess = cs.level_derivatives(X1, X2)
        collar = lev >= c0 - 1e-12
        grad = tuple(np.where(collar, gi, 0.0) for gi in grad)
        hess = tuple(np.where(collar, hi, 0.0) for hi in hess)
    psi0 = np.where(collar, lev - c0, 0.0)
    return c0, psi0, grad, hess, collar


def build_weight(g: Grid3, beta: float = 2.0, gamma0=None) -> CarlemanWeight:
    """Construct the collar weight and its region constants.

    Raises
    ------
    UnsupportedConfigurationError
        ``Gamma_0`` other than the full outer boundary.
    """
    cs = g.cross_section
    g0 = cs.gamma0 if gamma0 is None else gamma0
    if not (tuple(g0)[0] == "full" or cs.gamma0_is_full):
        raise UnsupportedConfigurationError(
            "weight construction is available only for Gamma_0 = full outer boundary")
    if beta <= 0:
        raise ParameterError("beta must be positive")
    c0, psi0, grad, hess, collar = _psi_geometry(g)
    X1, X2 = g.transverse
    d = cs.offsets
    w23 = cs.in_subdomain(2, X1, X2) & ~cs.in_subdomain(3, X1, X2) & collar
    if not w23.any():
        raise ParameterError("W_2 \\ W_3 contains no grid nodes; refine the grid")
    kappa = 0.5 * float(np.min(psi0[w23]))
    # W# must stay inside {psi0 <= kappa} and clear of the closure of W_1
    depth_to_w1 = (1.0 - d[1]) - c0
    sharp = min(kappa, 0.5 * depth_to_w1)
    if sharp <= 0:
        raise ParameterError("collar too thin: W# would meet W_1")
    gnorm = np.hypot(*grad)
    alpha0 = float(np.min(gnorm[collar]))
    return CarlemanWeight(g, float(beta), float(c0), psi0, grad, hess, collar, kappa, sharp,
                          alpha0)


def _level_set_points(g: Grid3, level: float, n: int = 256):
    cs = g.cross_section
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    if g.kind == "annulus":
        return level * np.cos(t), level * np.sin(t)
    e = 2.0 / cs.level_p
    c, s = np.cos(t), np.sin(t)
    return (level * 0.5 * cs.a1 * np.sign(c) * np.abs(c) ** e,
            level * 0.5 * cs.a2 * np.sign(s) * np.abs(s) ** e)


def _grad_norm_derivs(w: CarlemanWeight):
    """``(|grad psi|, grad|grad psi| . grad psi, Laplacian |grad psi|)`` on the transverse nodes."""
    g = w.grid
    if g.kind == "annulus":
        one = np.ones_like(w.psi0)
        return one, np.zeros_like(one), np.zeros_like(one)
    cs = g.cross_section
    X1, X2 = g.transverse
    eps = 1e-4 * g.h_prime

    def gn(x, y):
        with np.errstate(divide="ignore", invalid="ignore"):
            _, (a, b), _ = cs.level_derivatives(x, y)
        return np.hypot(a, b)

    g0 = gn(X1, X2)
    gx = (gn(X1 + eps, X2) - gn(X1 - eps, X2)) / (2 * eps)
    gy = (gn(X1, X2 + eps) - gn(X1, X2 - eps)) / (2 * eps)
    lap = (gn(X1 + eps, X2) + gn(X1 - eps, X2) + gn(X1, X2 + eps) + gn(X1, X2 - eps)
           - 4 * g0) / eps ** 2
    dot = gx * w.grad_psi[0] + gy * w.grad_psi[1]
    return g0, dot, lap


def _weight_quantities(w: CarlemanWeight, beta: float):
    m = w.collar
    gn, dot, lapg = (a[m] for a in _grad_norm_derivs(w))
    psi = w.psi0[m]
    p11, p12, p22 = (h[m] for h in w.hess_psi)
    g1, g2 = w.grad_psi[0][m], w.grad_psi[1][m]
    if w.grid.kind == "annulus":
        # grid-frame gradient is radial; rotate to Cartesian for the Hessian term
        th = np.broadcast_to(w.grid.x2[None, :], w.collar.shape)[m]
        g1, g2 = np.cos(th), np.sin(th)
    lap_psi = p11 + p22
    ephi = np.exp(beta * psi)
    out = {}
    # (b): grad|grad phi|^2 . grad phi / (beta |grad phi|^3)
    out["C0"] = float(np.min((2 * beta * gn ** 4 + 2 * gn * dot) / (beta * gn ** 3)))
    # (c): smallest C1 with H(phi) + C1 beta |grad phi| I >= 0 (3x3, x3 direction gives 0)
    A11 = p11 + beta * g1 * g1
    A12 = p12 + beta * g1 * g2
    A22 = p22 + beta * g2 * g2
    tr, det = A11 + A22, A11 * A22 - A12 ** 2
    lam2 = 0.5 * (tr - np.sqrt(np.maximum(tr ** 2 - 4 * det, 0)))
    lam_min = np.minimum(lam2, 0.0)
    out["C1"] = float(max(0.0, np.max(-lam_min / (beta * gn))))
    # (d): |Laplacian |grad phi|| / |grad phi|^3
    num = np.abs(beta ** 2 * gn ** 3 + beta * lap_psi * gn + 2 * beta * dot + lapg)
    out["C2"] = float(np.max(num / (beta ** 2 * ephi ** 2 * gn ** 3)))
    # (e): Laplacian phi / (beta e^{beta psi})
    out["lap_phi_min"] = float(np.min(ephi * (beta ** 2 * gn ** 2 + beta * lap_psi)))
    out["grad_phi_min"] = float(np.min(beta * ephi * gn))
    return out


def verify_weight_properties(w: CarlemanWeight, beta_max: float = 64.0, grow: float = 1.5,
                             n_boundary: int = 256) -> tuple:
    """Check the weight properties at every collar node; raise ``beta`` until they hold.

    Returns
    -------
    (CarlemanWeight, dict)
        The weight at the accepted ``beta`` (constants filled in) and a
        report with one entry per property.
    """
    g = w.grid
    beta = w.beta
    # geometric properties of psi0 (independent of beta)
    coll = w.collar
    open_nodes = coll & (w.psi0 > 1e-12)
    geo = {}
    geo["psi_positive"] = bool(np.all(w.psi0[open_nodes] > 0))
    geo["alpha0"] = w.alpha0
    geo["gradient_floor"] = bool(w.alpha0 > 0)
    xs, ys = _level_set_points(g, w.c0, n_boundary)
    cs = g.cross_section
    with np.errstate(divide="ignore", invalid="ignore"):
        lev, (l1, l2), _ = cs.level_derivatives(xs, ys)
    geo["psi_on_sharp_max"] = float(np.max(np.abs(lev - w.c0)))
    geo["psi_zero_on_sharp"] = geo["psi_on_sharp_max"] <= 1e-12
    # outward normal of the collar on Gamma# is -grad(level)/|grad(level)|
    dnu = -np.hypot(l1, l2)
    geo["dnu_psi_max"] = float(np.max(dnu))
    geo["dnu_nonpositive"] = bool(np.all(dnu <= 0))
    X1, X2 = g.transverse
    w23 = cs.in_subdomain(2, X1, X2) & ~cs.in_subdomain(3, X1, X2) & coll
    geo["eq13"] = bool(np.all(w.psi0[w23] >= 2 * w.kappa - 1e-12))
    sharp = w.sharp_mask
    geo["eq14"] = bool(np.all(w.psi0[sharp] <= w.kappa + 1e-12))
    geo["sharp_disjoint_w1"] = not bool(np.any(sharp & cs.in_subdomain(1, X1, X2)))
    # sharp collar must also stay clear of the closure of W_1 in the continuum
    geo["sharp_depth_ok"] = w.c0 + w.sharp_width < 1.0 - cs.offsets[1]
    while True:
        q = _weight_quantities(w, beta)
        checks = dict(
            a=q["grad_phi_min"] >= beta * w.alpha0 * (1 - 1e-12),
            b=q["C0"] > 0,
            c=np.isfinite(q["C1"]),
            d=np.isfinite(q["C2"]),
            e=q["lap_phi_min"] >= 0,
        )
        if all(checks.values()):
            break
        beta *= grow
        if beta > beta_max:
            raise WeightInvalidError(f"no beta <= {beta_max} satisfies the weight properties")
    out = w.with_beta(beta)
    out.constants = dict(C0=q["C0"], C1=q["C1"], C2=q["C2"])
    report = dict(geometry=geo, items=checks, quantities=q, beta=beta,
                  passed=all(checks.values()) and all(
                      v for k, v in geo.items() if isinstance(v, bool)))
    return out, report


# ---------------------------------------------------------------------------
# conjugation and Carleman quantities
# ---------------------------------------------------------------------------
@dataclass
class ConjugatedParts:
    plus: np.ndarray
    minus: np.ndarray
    rest: np.ndarray
    reference: np.ndarray

    @property
    def recomposition_gap(self) -> float:
        s = self.plus + self.minus + self.rest
        den = np.linalg.norm(self.reference)
        return float(np.linalg.norm(s - self.reference) / den) if den > 0 else float(
            np.linalg.norm(s))


def _grad_phi(w: CarlemanWeight):
    """Grid-frame gradient of ``phi`` and ``Laplacian phi`` on the transverse nodes."""
    b = w.beta
    phi = w.phi
    g1, g2 = w.grad_psi
    lap_psi = w.hess_psi[0] + w.hess_psi[2]
    gn2 = g1 ** 2 + g2 ** 2
    return (b * phi * g1, b * phi * g2), phi * (b * b * gn2 + b * lap_psi)


def _require_collar_field(w: CarlemanWeight, v, tol=0.0):
    v = np.asarray(v)
    if v.shape != w.grid.shape:
        raise ParameterError("field does not match the grid")
    outside = ~w.o0_open
    if np.any(np.abs(v[outside]) > tol):
        raise TraceViolationError("field must vanish on the collar boundary and outside the collar")


def conjugate_decompose(v, lam: float, w: CarlemanWeight) -> ConjugatedParts:
    """``P+ v = -Delta v - lam^2 |grad phi|^2 v``, ``P- v = 2 lam grad phi . grad v``, ``R v = lam v Delta phi``.

    ``reference`` is ``-e^{lam phi} Delta_h (e^{-lam phi} v)``.
    """
    _require_collar_field(w, v)
    g = w.grid
    v = np.asarray(v)
    (p1, p2), lphi = _grad_phi(w)
    gv = gradient(g, v)
    lap = laplacian(g, v)
    gp2 = (p1 ** 2 + p2 ** 2)[:, :, None]
    plus = -lap - lam ** 2 * gp2 * v
    minus = 2 * lam * (p1[:, :, None] * gv[0] + p2[:, :, None] * gv[1])
    rest = lam * lphi[:, :, None] * v
    phi = w.phi
    shift = float(np.min(phi[w.collar]))
    e = np.exp(-lam * (phi - shift))[:, :, None]
    ref = -laplacian(g, e * v) / e
    m = g.interior_mask
    z = np.zeros(g.shape, dtype=np.result_type(v, float))
    return ConjugatedParts(np.where(m, plus, z), np.where(m, minus, z), np.where(m, rest, z),
                           np.where(m, ref, z))


def outer_normal_derivative(g: Grid3, u):
    """Outward normal derivative on the outer lateral boundary, shape ``(n_ring, n3 + 1)``.

    Second-order one-sided radial difference on annuli; rectangle values come
    from the lateral ring (caps included as zero rows are not produced).
    """
    u = np.asarray(u)
    h = g.h_prime
    if g.kind == "annulus":
        return (3 * u[-1] - 4 * u[-2] + u[-3]) / (2 * h)
    from .forward import normal_derivative

    inner = normal_derivative(g, u)
    out = np.zeros(inner.shape[:-1] + (g.n3 + 1,), dtype=inner.dtype)
    out[..., 1:-1] = inner
    return out


def _gamma0_weights(g: Grid3):
    ds = g.ring["ds"]
    w3 = np.full(g.n3 + 1, g.h3)
    w3[[0, -1]] *= 0.5
    return ds[:, None] * w3[None, :]


def carleman_ratio(u, q, lam: float, w: CarlemanWeight):
    """Both sides of the weighted estimate for a collar test field.

    Returns ``(lhs, rhs, log_scale)``; the true values are
    ``exp(log_scale)`` times the returned ones, with
    ``log_scale = 2 lam max(phi)``.
    """
    _require_collar_field(w, u)
    g = w.grid
    u = np.asarray(u)
    qv = q.values if hasattr(q, "values") else np.broadcast_to(np.asarray(q, float), g.shape)
    phi = w.phi
    pmax = float(np.max(phi[w.collar]))
    wt = np.exp(2 * lam * (phi - pmax))[:, :, None]
    vw = g.volume_weights
    if not np.any(u):
        return 0.0, 0.0, 2 * lam * pmax
    gu = gradient(g, u)
    gsq = sum(np.abs(gi) ** 2 for gi in gu)
    m = w.collar[:, :, None] & np.ones(g.shape, bool)
    lhs = lam * np.sum((wt * (lam ** 2 * np.abs(u) ** 2 + gsq) * vw)[m])
    Lu = -laplacian(g, u) + qv * u
    mi = m & g.interior_mask
    rhs_vol = np.sum((wt * np.abs(Lu) ** 2 * vw)[mi])
    dn = outer_normal_derivative(g, u)
    rg = g.ring
    phib = phi[rg["i"], rg["j"]]
    wb = np.exp(2 * lam * (phib - pmax))[:, None]
    rhs_b = lam * np.sum(wb * np.abs(dn) ** 2 * _gamma0_weights(g))
    if not np.isfinite(lhs) or not np.isfinite(rhs_vol + rhs_b):
        raise FloatingPointError("Carleman quadrature overflowed despite scaling")
    return float(lhs), float(rhs_vol + rhs_b), 2 * lam * pmax


def random_test_field(w: CarlemanWeight, seed=0, n_modes: int = 3) -> np.ndarray:
    """Smooth random field vanishing on the collar boundary and caps."""
    rng = np.random.default_rng(seed)
    g = w.grid
    t = np.clip(w.psi0 / w.psi_max, 0, 1)
    X1, X2 = g.transverse
    ang = np.arctan2(X2, X1)
    trans = np.zeros_like(t)
    for _ in range(n_modes):
        a, b = rng.standard_normal(2)
        m = rng.integers(0, 4)
        k = rng.integers(1, 3)
        trans += np.sin(np.pi * k * t) * (a * np.cos(m * ang) + b * np.sin(m * ang))
    trans = np.where(w.collar, trans, 0.0)
    s = (g.x3 + g.L) / (2 * g.L)
    ax = np.zeros_like(s)
    for _ in range(n_modes):
        ax += rng.standard_normal() * np.sin(np.pi * rng.integers(1, 4) * s)
    u = trans[:, :, None] * ax[None, None, :]
    u[~w.o0_open] = 0.0
    return u


def carleman_sweep(w: CarlemanWeight, lams, fields, q=0.0):
    """Rows ``(lambda, field index, lhs, rhs, ratio)`` with a common per-row scaling."""
    rows = []
    for lam in lams:
        for n, u in enumerate(fields):
            lhs, rhs, _ = carleman_ratio(u, q, lam, w)
            rows.append(dict(lam=float(lam), field=n, lhs=lhs, rhs=rhs,
                             ratio=lhs / rhs if rhs > 0 else float("nan")))
    return rows


def estimate_lambda0(w: CarlemanWeight, fields, lam_min: float = 0.05, lam_max: float = 200.0,
                     steps_per_octave: int = 2, tol: float = 0.02, q=0.0) -> CarlemanWeight:
    """Smallest scanned ``lambda`` after which the worst ratio stops growing.

    ``lambda`` runs over a geometric grid; the threshold is the first
    point whose successor raises ``max ratio`` over ``fields`` by at most
    ``tol`` (relative). Returns a copy of ``w`` with ``lambda0`` set.
    """
    from dataclasses import replace

    n = int(math.ceil(math.log2(lam_max / lam_min) * steps_per_octave)) + 1
    lams = lam_min * 2.0 ** (np.arange(n) / steps_per_octave)
    worst = []
    for lam in lams:
        rows = carleman_sweep(w, [lam], fields, q)
        worst.append(max(r["ratio"] for r in rows))
    lam0 = float(lams[-1])
    for k in range(n - 1):
        if worst[k + 1] <= worst[k] * (1 + tol):
            lam0 = float(lams[k])
            break
    return replace(w, lambda0=lam0)


# ---------------------------------------------------------------------------
# unique continuation estimate
# ---------------------------------------------------------------------------
def ucp_estimate(wfield, F, lam: float, w: CarlemanWeight, C: float | None = None,
                 g: Grid3 | None = None) -> dict:
    """Evaluate both sides of the weak unique continuation estimate.

    ``lhs = ||w||_{H^1(O_2 \\ O_3)}``;
    ``rhs = exp(-lam alpha1) ||w||_{H^2} + exp(lam alpha2) (||d_nu w||_{Gamma_0} + ||F||_{O_0})``.
    Sides are returned in log form because ``exp(lam alpha2)`` overflows
    quickly. ``C`` defaults to the ratio ``lhs / rhs`` (tight fit).
    """
    g = w.grid if g is None else g
    wf = np.asarray(wfield)
    Fv = np.asarray(F)
    m23 = subdomain_mask(g, 2) & ~subdomain_mask(g, 3)
    lhs = sobolev_norm(g, wf, 1, m23)
    h2 = sobolev_norm(g, wf, 2)
    dn = outer_normal_derivative(g, wf)
    bnd = float(np.sqrt(np.sum(np.abs(dn) ** 2 * _gamma0_weights(g))))
    o0 = subdomain_mask(g, 0) if g.kind == "rectangle" else np.ones(g.shape, bool)
    fn = sobolev_norm(g, Fv, 0, o0)
    a1, a2 = w.alpha1, w.alpha2
    t1 = -lam * a1 + math.log(h2) if h2 > 0 else -math.inf
    t2 = lam * a2 + math.log(bnd + fn) if bnd + fn > 0 else -math.inf
    log_rhs = float(np.logaddexp(t1, t2))
    log_lhs = math.log(lhs) if lhs > 0 else -math.inf
    if C is None:
        C = math.exp(log_lhs - log_rhs) if np.isfinite(log_rhs) and lhs > 0 else 1.0
    log_C = math.log(C)
    slack = (log_C + log_rhs - log_lhs) if lhs > 0 else math.inf
    return dict(lhs=lhs, h2=h2, boundary=bnd, source=fn, alpha1=a1, alpha2=a2, lam=lam,
                log_lhs=log_lhs, log_rhs=log_rhs, C=C, log_slack=slack,
                holds=bool(lhs == 0 or slack >= -1e-12))
