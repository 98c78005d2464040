"""Partial-data chain: interior cutoff, commutator source and the Fourier bound.

The chain is evaluated with known ground truth. For a CGO pair ``u1``
(potential ``q1``), ``u2`` (potential ``q2``) let ``u`` solve
``(-Delta + q1) u = (q2 - q1) u2`` with zero trace. Then

    sum Theta q u2 u1 = - sum P1(u) u1,     P1 = [-Delta', Theta],

and the unique continuation estimate converts ``||u||_{H^1(O_2 \\ O_3)}``
into boundary data on ``Gamma_0`` plus an exponentially small remainder.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .carleman import CarlemanWeight, build_weight, ucp_estimate
from .cgo import chi, solve_remainder
from .dnmap import DnOperator, operator_norm, restrict_partial
from .fd import gradient, laplacian, laplacian_transverse, sobolev_norm
from .forward import normal_derivative, solve_source
from .grid import Grid3, ParameterError, subdomain_mask

__all__ = [
    "Cutoff",
    "PartialChainReport",
    "build_cutoff_theta",
    "commutator_source",
    "verify_identity_45",
    "default_tau",
    "partial_bound_chain",
    "partial_stability_experiment",
]


def _vals(q):
    return q.values if hasattr(q, "values") else np.asarray(q)


@dataclass
class Cutoff:
    """Transverse cutoff with analytic first and second derivatives.

    ``grad`` is given in the grid frame (Cartesian, or ``(r, theta)`` on
    annuli); ``lap`` is the transverse Laplacian.
    """

    grid: Grid3
    values: np.ndarray
    grad: tuple
    lap: np.ndarray
    transition: np.ndarray


def build_cutoff_theta(g: Grid3) -> Cutoff:
    """``Theta = 1`` off ``W_2``, ``0`` on ``W_3``, smooth monotone in between."""
    cs = g.cross_section
    d2, d3 = cs.offsets[2], cs.offsets[3]
    if not d2 > d3:
        raise ParameterError("subdomains W_2 and W_3 are not nested")
    X1, X2 = g.transverse
    with np.errstate(divide="ignore", invalid="ignore"):
        lev, (l1, l2), (l11, l12, l22) = cs.level_derivatives(X1, X2)
    width = d2 - d3
    t = np.clip((lev - (1.0 - d2)) / width, 0.0, None)
    s = 1.0 + t
    val = chi(s)
    f1 = chi(s, 1) / width
    f2 = chi(s, 2) / width ** 2
    trans = (t > 0) & (t < 1)
    f1 = np.where(trans, f1, 0.0)
    f2 = np.where(trans, f2, 0.0)
    l1, l2 = np.nan_to_num(l1), np.nan_to_num(l2)
    lap_l = np.nan_to_num(l11 + l22)
    g1, g2 = f1 * l1, f1 * l2
    lap = f2 * (l1 ** 2 + l2 ** 2) + f1 * lap_l
    if g.kind == "annulus":
        th = g.x2[None, :]
        g1, g2 = g1 * np.cos(th) + g2 * np.sin(th), -g1 * np.sin(th) + g2 * np.cos(th)
    val = np.where(lev > 1.0 - d3, 0.0, np.where(lev <= 1.0 - d2, 1.0, val))
    depth = width / float(np.max(np.hypot(l1, l2)[trans])) if trans.any() else 0.0
    if depth < 4 * g.h_prime:
        warnings.warn(f"cutoff transition ({depth:.3g} deep) spans fewer than 4 cells",
                      stacklevel=2)
    return Cutoff(g, val, (g1, g2), lap, trans)


def commutator_source(theta, u) -> np.ndarray:
    """``P1 u = [-Delta', Theta] u = -2 grad' Theta . grad' u - (Delta' Theta) u``.

    ``theta`` is a :class:`Cutoff` (analytic derivatives) or a plain
    transverse array (finite-difference derivatives; requires ``grid`` via a
    ``(grid, array)`` tuple).
    """
    if isinstance(theta, Cutoff):
        g = theta.grid
        tg, tl = theta.grad, theta.lap
    else:
        g, arr = theta
        arr = np.asarray(arr, dtype=float)
        a3 = np.broadcast_to(arr[:, :, None], g.shape)
        gr = gradient(g, a3)
        tg = (gr[0][:, :, 0], gr[1][:, :, 0])
        tl = laplacian_transverse(g, a3)[:, :, 0]
    u = np.asarray(u)
    gu = gradient(g, u)
    out = -2 * (tg[0][:, :, None] * gu[0] + tg[1][:, :, None] * gu[1]) - tl[:, :, None] * u
    return out


def _scaled_full(sol):
    lf = sol.log_factor()
    m = float(np.max(lf))
    return np.exp(lf - m)[:, :, None] * sol.core, m


def verify_identity_45(q1, q2, p, theta: Cutoff | None = None, method="fixed_point",
                       g: Grid3 | None = None) -> dict:
    """Both sides of ``sum Theta q u2 u1 = - sum P1(u) u1`` and their relative gap.

    ``p`` is a :class:`CgoParams`; ``u`` is the zero-trace solution of
    ``(-Delta_h + q1) u = (q2 - q1) u2``.
    """
    g = q1.grid if g is None else g
    theta = build_cutoff_theta(g) if theta is None else theta
    dq = _vals(q2) - _vals(q1)
    if not np.any(dq):
        return dict(lhs=0j, rhs=0j, gap=0.0)
    s1 = solve_remainder(p, q1, +1, method, g=g)
    s2 = solve_remainder(p, q2, -1, method, g=g)
    u1, m1 = _scaled_full(s1)
    u2, m2 = _scaled_full(s2)
    u = solve_source(q1, dq * u2, g=g)
    w = g.volume_weights
    scale = math.exp(m1 + m2)
    th = theta.values[:, :, None] if isinstance(theta, Cutoff) else np.asarray(theta[1])[:, :, None]
    lhs = complex(np.sum(w * th * dq * u2 * u1)) * scale
    rhs = -complex(np.sum(w * commutator_source(theta, u) * u1)) * scale
    den = max(abs(lhs), abs(rhs), 1e-300)
    return dict(lhs=lhs, rhs=rhs, gap=abs(lhs - rhs) / den)


# ---------------------------------------------------------------------------
# bound chain
# ---------------------------------------------------------------------------
def default_tau(weight: CarlemanWeight, D: float) -> float:
    """Smallest ``tau`` with ``2 D' - tau alpha1 <= -1`` (``D' = D + 1``)."""
    return (2.0 * (D + 1.0) + 1.0) / weight.alpha1


@dataclass
class PartialChainReport:
    rows: list
    constants: dict
    fitted: dict
    links_ok: bool
    implied_ok: bool
    meta: dict = field(default_factory=dict)

    LINKS = ("fourier", "ucp", "boundary", "growth_u", "growth_h", "final")

    def csv_rows(self):
        """One row per (xi, link) with lhs, rhs in log form and slack."""
        out = []
        for r in self.rows:
            for ln in self.LINKS:
                lk = r["links"][ln]
                out.append(dict(xi1=r["xi"][0], xi2=r["xi"][1], xi3=r["xi"][2], rho=r["rho"],
                                link=ln, log_lhs=lk["log_lhs"], log_rhs=lk["log_rhs"],
                                log_C=lk["log_C"], slack=lk["slack"]))
        return out


def _log(x):
    return math.log(x) if x > 0 else -math.inf


def _h32_norm(basis, coeffs):
    return float(np.sqrt(np.sum((1.0 + basis.mu) ** 1.5 * np.abs(coeffs) ** 2)))


def partial_bound_chain(dLam_partial: DnOperator, q1, q2, params, lambda_rule=None,
                        weight: CarlemanWeight | None = None, constants: dict | None = None,
                        method: str = "fixed_point") -> PartialChainReport:
    """Evaluate each link of the partial-data Fourier bound per frequency.

    Parameters
    ----------
    dLam_partial : DnOperator
        Restricted DN difference (defines ``gamma1``).
    params : CgoParams or list of CgoParams
        Frequencies and ``rho``; ``R`` defaults to ``|xi|``.
    lambda_rule : float, callable or None
        ``tau`` (so ``lambda = tau rho``), a function ``rho -> lambda``, or
        ``None`` for :func:`default_tau`.
    weight : CarlemanWeight, optional
        Built on the same grid when omitted.
    constants : dict, optional
        Link constants ``fourier``, ``ucp``, ``boundary``, ``growth_u``,
        ``growth_h``. Missing ones are fitted as the tight maximum over the
        supplied frequencies.
    """
    g = dLam_partial.grid
    plist = params if isinstance(params, (list, tuple)) else [params]
    weight = build_weight(g) if weight is None else weight
    Dp = g.D + 1.0
    if lambda_rule is None:
        tau = default_tau(weight, g.D)
    elif callable(lambda_rule):
        tau = None
    else:
        tau = float(lambda_rule)
    gamma1 = operator_norm(dLam_partial)
    dq = _vals(q2) - _vals(q1)
    vw = g.volume_weights
    X1, X2, X3 = g.coords()
    o0 = subdomain_mask(g, 0)
    m23 = subdomain_mask(g, 2) & ~subdomain_mask(g, 3)
    basis = dLam_partial.basis
    raw = []
    for p in plist:
        rho = p.rho
        lam = tau * rho if tau is not None else float(lambda_rule(rho))
        R = float(p.R) if p.R is not None else float(np.linalg.norm(p.xi))
        qhat = abs(complex(np.sum(vw * dq * np.exp(-1j * (p.xi[0] * X1 + p.xi[1] * X2
                                                          + p.xi[2] * X3)))))
        if not np.any(dq):
            rec = dict(xi=np.asarray(p.xi), rho=rho, lam=lam, R=R, qhat=0.0, zero=True,
                       log_u_h1=-math.inf, log_u_h2=-math.inf, log_dnu=-math.inf,
                       log_h=0.0, ucp=None)
            raw.append(rec)
            continue
        s2 = solve_remainder(p, q2, -1, method, g=g)
        u2, m2 = _scaled_full(s2)
        u = solve_source(q1, dq * u2, g=g)
        F = -laplacian(g, u) + _vals(q1) * u
        F = np.where(g.interior_mask, F, 0.0)
        ucp = ucp_estimate(u, F, lam, weight, C=1.0, g=g)
        dn = normal_derivative(g, u)
        keep = g.ring_in_gamma0()
        wb = g.ring["ds"][:, None] * g.h3
        dnu = float(np.sqrt(np.sum((np.abs(dn) ** 2 * wb)[keep])))
        rg = g.ring
        trace = u2[rg["i"], rg["j"], 1:-1]
        hnorm = _h32_norm(basis, basis.analyze(trace))
        rec = dict(xi=np.asarray(p.xi), rho=rho, lam=lam, R=R, qhat=qhat, zero=False,
                   log_u_h1=_log(sobolev_norm(g, u, 1, m23)) + m2,
                   log_u_h2=_log(sobolev_norm(g, u, 2)) + m2,
                   log_dnu=_log(dnu) + m2, log_h=_log(hnorm) + m2,
                   log_ucp_rhs=ucp["log_rhs"] + m2, ucp=ucp,
                   o0_source=float(np.max(np.abs(F[o0]))) if o0.any() else 0.0)
        raw.append(rec)

    # link sides (log lhs, log rhs without constant)
    a1, a2 = weight.alpha1, weight.alpha2
    sides = []
    for r in raw:
        rho, lam, R = r["rho"], r["lam"], r["R"]
        tail = 2 * math.log(R) - math.log(rho) / 8 if R > 0 else -math.inf
        s = {}
        s["fourier"] = (_log(r["qhat"]), float(np.logaddexp(tail, Dp * rho + r["log_u_h1"])))
        s["ucp"] = (r["log_u_h1"], r.get("log_ucp_rhs", -math.inf))
        s["boundary"] = (r["log_dnu"], _log(gamma1) + r["log_h"])
        s["growth_u"] = (r["log_u_h2"], Dp * rho)
        s["growth_h"] = (r["log_h"], Dp * rho)
        ta = lam / rho
        al3 = ta * a1 - 2 * Dp
        al4 = 2 * Dp + ta * a2
        s["final"] = (_log(r["qhat"]),
                      float(np.logaddexp(np.logaddexp(tail, -al3 * rho),
                                         al4 * rho + _log(gamma1))))
        sides.append(s)
    consts = dict(constants or {})
    log_c = {ln: math.log(c) for ln, c in consts.items()}
    fitted = {}
    for ln in PartialChainReport.LINKS:
        if ln in consts:
            continue
        worst = -math.inf
        for s in sides:
            lhs, rhs = s[ln]
            if lhs > -math.inf:
                worst = max(worst, lhs - rhs)
        # kept in log form: tight constants can underflow
        log_c[ln] = worst if worst > -math.inf else 0.0
        fitted[ln] = math.exp(log_c[ln])
        consts[ln] = fitted[ln]
    rows = []
    links_ok = True
    implied_ok = True
    tau_eff = raw[0]["lam"] / raw[0]["rho"] if raw else float("nan")
    log_c_end = log_c["fourier"] + max(0.0, log_c["ucp"] + log_c["growth_u"],
                                       log_c["ucp"] + log_c["boundary"] + log_c["growth_h"])
    c_end = math.exp(min(log_c_end, 700.0))
    for r, s in zip(raw, sides):
        links = {}
        for ln in PartialChainReport.LINKS:
            lhs, rhs = s[ln]
            lc = log_c[ln]
            slack = (lc + rhs - lhs) if lhs > -math.inf else math.inf
            links[ln] = dict(log_lhs=lhs, log_rhs=rhs, log_C=lc, slack=slack,
                             holds=bool(slack >= -1e-9))
        ok = all(links[ln]["holds"] for ln in ("fourier", "ucp", "boundary", "growth_u",
                                                "growth_h"))
        links_ok &= ok
        if ok:
            lhs, rhs = s["final"]
            implied = lhs <= log_c_end + rhs + 1e-9 or lhs == -math.inf
            implied_ok &= bool(implied)
        rows.append(dict(xi=r["xi"], rho=r["rho"], lam=r["lam"], R=r["R"], qhat=r["qhat"],
                         links=links, gamma1=gamma1,
                         o0_source=r.get("o0_source", 0.0)))
    al3 = tau_eff * a1 - 2 * Dp
    al4 = 2 * Dp + tau_eff * a2
    cst = dict(alpha1=a1, alpha2=a2, alpha3=al3, alpha4=al4, tau=tau_eff, D_prime=Dp,
               beta=weight.beta, kappa=weight.kappa, gamma1=gamma1, C_end=c_end,
               log_constants=log_c, **consts)
    return PartialChainReport(rows, cst, fitted, bool(links_ok), bool(implied_ok))


def partial_stability_experiment(q1, q2, dLam: DnOperator, noise_levels, config=None, seed=0,
                                 gamma0=None, cache=None):
    """Noise sweep whose schedule is driven by ``gamma1`` (restricted operator norm).

    Records carry ``extra['gamma_full']`` for the ``gamma1 <= gamma`` check.
    """
    from .fourier import stability_experiment

    if dLam.partial:
        raise ParameterError("pass the full DN difference; restriction is applied internally")
    return stability_experiment(q1, q2, dLam, noise_levels, config, seed=seed, cache=cache,
                                restrict=lambda op: restrict_partial(op, gamma0))
