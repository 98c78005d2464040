"""Fourier sampling of a potential difference from DN data and low-pass inversion.

For a CGO pair ``u1`` (potential ``q1``) and ``u2`` (potential ``q2``) the
Green identity gives

    int (q2 - q1) u1 u2 dx = -< (Lambda_{q1} - Lambda_{q2}) u2|_bdry , u1|_bdry >,

and ``u1 u2 = exp(-i xi.x) chi^2 + z`` with a cross term ``z`` built from the
remainders. The pairing therefore samples the Fourier transform of
``q = q2 - q1`` at ``xi`` up to ``int q z``. Samples on the dual lattice of
the grid inside ``|xi| <= R`` are inverted by a truncated inverse FFT.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft

from .cgo import (CgoSolution, ConjugatedInverse, ResolutionError, chi, make_params,
                  solve_remainder, theta_for)
from .dnmap import DnOperator, add_noise, operator_norm
from .grid import Grid3, ParameterError

__all__ = [
    "ProjectionError",
    "LatticeError",
    "PairingData",
    "FourierSampleSet",
    "Schedule",
    "StabilityRecord",
    "prepare_pairing",
    "boundary_pairing",
    "xi_lattice",
    "fourier_sample",
    "invert_lowpass",
    "choose_parameters",
    "desk_schedule",
    "stability_experiment",
    "fit_bound_constant",
    "bound_value",
    "fourier_oracle",
    "tail_energy",
]


class ProjectionError(RuntimeError):
    """Boundary trace poorly represented in the DN input basis."""


class LatticeError(ParameterError):
    """Samples do not lie on the dual lattice of the inversion grid."""


def _vals(q):
    return q.values if hasattr(q, "values") else np.asarray(q)


# ---------------------------------------------------------------------------
# pairing
# ---------------------------------------------------------------------------
@dataclass
class PairingData:
    """Boundary data of one CGO pair, in scaled form, ready to meet a DN matrix.

    ``coeffs``: basis coefficients of ``exp(-s2) u2|_bdry``; ``trace1``:
    ``exp(-s1) u1|_bdry`` on the ring; the true pairing is
    ``exp(s1 + s2)`` times the scaled one.
    """

    xi: np.ndarray
    rho: float
    coeffs: np.ndarray
    trace1: np.ndarray
    log_scale: float
    projection_residual: float
    volumetric: complex
    principal: complex
    cross_term: complex
    cross_abs: float
    r_norms: tuple
    chi_plateau_ok: bool

    def pair(self, op: DnOperator) -> complex:
        """``-< op u2, u1 >`` over the output rows of ``op``."""
        if op.partial:
            raise ParameterError("the Green pairing needs the full DN operator")
        b = op.basis
        y = op.apply(self.coeffs).reshape(op.row_ring.size, b.n_axial)
        val = -np.sum(y * self.trace1[op.row_ring]) * b.ds * b.h3
        return complex(val * math.exp(self.log_scale))


def _scaled_trace(sol: CgoSolution):
    g = sol.grid
    rg = g.ring
    lf = sol.log_factor()[rg["i"], rg["j"]]
    m = float(np.max(lf))
    tr = np.exp(lf - m)[:, None] * sol.core[rg["i"], rg["j"], 1:-1]
    return tr, m


def prepare_pairing(g: Grid3, q1, q2, xi, rho, basis, method="fixed_point", theta=None,
                    max_residual: float = 1e-8, einv_cache: dict | None = None) -> PairingData:
    """Solve the CGO pair for ``xi`` and extract its boundary data."""
    xi = np.asarray(xi, dtype=float)
    th = theta_for(xi) if theta is None else np.asarray(theta, dtype=float)
    p = make_params(th, xi, rho)
    einv = {+1: None, -1: None}
    if einv_cache is not None:
        for sgn in (+1, -1):
            a = rho * th * sgn
            key = (round(a[0], 12), round(a[1], 12))
            if key not in einv_cache:
                einv_cache[key] = ConjugatedInverse(g, a)
            einv[sgn] = einv_cache[key]
    u1 = solve_remainder(p, q1, +1, method, g=g, einv=einv[+1])
    u2 = solve_remainder(p, q2, -1, method, g=g, einv=einv[-1])
    t2, s2 = _scaled_trace(u2)
    t1, s1 = _scaled_trace(u1)
    c2 = basis.analyze(t2)
    if basis.is_complete:
        res = 0.0
    else:
        res = float(np.linalg.norm(basis.synthesize(c2) - t2) / max(np.linalg.norm(t2), 1e-300))
    # the residual is amplified by exp(s1 + s2) relative to O(1) pairings
    amp = res * math.exp(min(s1 + s2, 700.0))
    if amp > max_residual:
        raise ProjectionError(f"trace projection residual {res:.2e} amplified to {amp:.2e}")
    dq = _vals(q2) - _vals(q1)
    w = g.volume_weights
    X1, X2, X3 = g.coords()
    p1 = u1.core - u1.remainder
    p2 = u2.core - u2.remainder
    vol = complex(np.sum(w * dq * u1.core * u2.core))
    princ = complex(np.sum(w * dq * p1 * p2))
    z = dq * (p1 * u2.remainder + u1.remainder * p2 + u1.remainder * u2.remainder)
    supp = np.abs(dq) > 0
    plateau = True
    if supp.any():
        zmax = float(np.max(np.abs(np.broadcast_to(X3, g.shape)[supp])))
        plateau = zmax <= rho ** 0.25
    return PairingData(xi, float(rho), c2, t1, s1 + s2, res, vol, princ,
                       complex(np.sum(w * z)), float(np.sum(w * np.abs(z))),
                       (u1.report["r_l2"], u2.report["r_l2"]), plateau)


def boundary_pairing(dLam: DnOperator, p, q1, q2, with_oracle: bool = False):
    """``-< dLam u2|_bdry, u1|_bdry >`` for the CGO pair of ``p``.

    Parameters
    ----------
    dLam : DnOperator
        ``Lambda_{q1} - Lambda_{q2}`` (possibly noisy), full boundary.
    p : CgoParams
    with_oracle : bool
        Also return the :class:`PairingData` with the volumetric oracle.
    """
    if dLam.is_zero:
        val = 0j
        if not with_oracle:
            return val
    data = prepare_pairing(dLam.grid, q1, q2, p.xi, p.rho, dLam.basis, theta=p.theta)
    val = data.pair(dLam)
    return (val, data) if with_oracle else val


# ---------------------------------------------------------------------------
# lattice, sampling and inversion
# ---------------------------------------------------------------------------
def xi_lattice(g: Grid3, R: float):
    """Dual-lattice frequencies of the node grid inside ``|xi| <= R``.

    Returns integer FFT indices ``(n, 3)`` and frequencies ``(n, 3)``.
    """
    ks = [2 * np.pi * sfft.fftfreq(n, d=h) for n, h in
          ((g.n1 + 1, g.h_prime), (g.n2 + 1, g.h_prime), (g.n3 + 1, g.h3))]
    K = np.meshgrid(*ks, indexing="ij")
    KK = np.sqrt(K[0] ** 2 + K[1] ** 2 + K[2] ** 2)
    idx = np.argwhere(KK <= R * (1 + 1e-12))
    xis = np.stack([ks[a][idx[:, a]] for a in range(3)], axis=1)
    order = np.lexsort((xis[:, 2], xis[:, 1], xis[:, 0], np.round(np.linalg.norm(xis, axis=1), 12)))
    return idx[order], xis[order]


def _continuity_offsets(xi, eps):
    xp0 = np.hypot(*xi[:2]) == 0.0
    x30 = xi[2] == 0.0
    if not xp0 and not x30:
        return [np.zeros(3)]
    if xp0 and x30:
        return [np.array([eps, 0, eps]), np.array([-eps, 0, -eps]),
                np.array([0, eps, eps]), np.array([0, -eps, -eps])]
    if xp0:
        return [np.array([eps, 0, 0]), np.array([-eps, 0, 0]),
                np.array([0, eps, 0]), np.array([0, -eps, 0])]
    return [np.array([0, 0, eps]), np.array([0, 0, -eps])]


@dataclass
class FourierSampleSet:
    """Estimated transform values on lattice points, with diagnostics."""

    grid: Grid3
    R: float
    idx: np.ndarray
    xi: np.ndarray
    values: np.ndarray
    rho: np.ndarray
    valid: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def hermitian_defect(self):
        """``|q(-xi) - conj q(xi)|`` per sample (NaN where the partner is absent)."""
        key = {tuple(np.round(x, 10)): i for i, x in enumerate(self.xi)}
        out = np.full(self.xi.shape[0], np.nan)
        for i, x in enumerate(self.xi):
            j = key.get(tuple(np.round(-x, 10)))
            if j is not None:
                out[i] = abs(self.values[j] - np.conj(self.values[i]))
        return out


def fourier_oracle(g: Grid3, q, xis, rho=None):
    """Direct quadrature of ``int q exp(-i xi.x) [chi^2(rho^{-1/4} x3)] dx``."""
    X1, X2, X3 = g.coords()
    w = g.volume_weights * _vals(q)
    if rho is not None:
        w = w * chi(rho ** -0.25 * X3) ** 2
    out = np.empty(len(xis), complex)
    for n, xi in enumerate(xis):
        out[n] = np.sum(w * np.exp(-1j * (xi[0] * X1 + xi[1] * X2 + xi[2] * X3)))
    return out


def fourier_sample(dLam: DnOperator, q1, q2, xi_grid, rho_rule, eps: float = 0.05,
                   method: str = "fixed_point", source: str = "boundary",
                   cache: dict | None = None, noise: DnOperator | None = None,
                   noise_scale: float = 0.0) -> FourierSampleSet:
    """Estimate ``(q2 - q1)^`` on lattice points.

    Parameters
    ----------
    dLam : DnOperator
        Full DN difference.
    xi_grid : tuple (idx, xi) or float
        Lattice from :func:`xi_lattice`, or a radius ``R``.
    rho_rule : float or callable
        ``rho`` per sample, or a function of ``xi``.
    eps : float
        Offset for continuity filling at lattice points with ``xi' = 0`` or
        ``xi_3 = 0``.
    source : {'boundary', 'volumetric'}
        Use the DN pairing or (oracle mode) the volumetric integral.
    cache : dict, optional
        Reuses prepared CGO pairs across calls keyed by ``(xi, rho)``.
    noise, noise_scale
        Optional extra operator added as ``noise_scale * noise`` in the pairing.
    """
    g = dLam.grid
    if np.isscalar(xi_grid):
        R = float(xi_grid)
        idx, xis = xi_lattice(g, R)
    else:
        idx, xis = xi_grid
        R = float(np.max(np.linalg.norm(xis, axis=1))) if len(xis) else 0.0
    cache = {} if cache is None else cache
    einv = cache.setdefault("_einv", {})
    n = xis.shape[0]
    vals = np.zeros(n, complex)
    rhos = np.zeros(n)
    valid = np.ones(n, bool)
    diag = {k: np.zeros(n, complex) for k in ("volumetric", "principal", "cross_term")}
    diag["cross_abs"] = np.zeros(n)
    diag["r_l2_max"] = np.zeros(n)
    diag["chi_plateau_ok"] = np.ones(n, bool)
    diag["errors"] = [None] * n
    zero = dLam.is_zero and (noise is None or noise_scale == 0)
    for s in range(n):
        xi = xis[s]
        rho = float(rho_rule(xi) if callable(rho_rule) else rho_rule)
        rhos[s] = rho
        offs = _continuity_offsets(xi, eps)
        acc = np.zeros(len(offs), complex)
        try:
            for o, off in enumerate(offs):
                x = xi + off
                key = (tuple(np.round(x, 12)), rho)
                if key not in cache:
                    cache[key] = prepare_pairing(g, q1, q2, x, rho, dLam.basis, method,
                                                 einv_cache=einv)
                d = cache[key]
                if source == "volumetric":
                    acc[o] = d.volumetric
                else:
                    acc[o] = 0j if zero else d.pair(dLam)
                    if noise is not None and noise_scale:
                        acc[o] += noise_scale * d.pair(noise)
                diag["volumetric"][s] += d.volumetric / len(offs)
                diag["principal"][s] += d.principal / len(offs)
                diag["cross_term"][s] += d.cross_term / len(offs)
                diag["cross_abs"][s] += d.cross_abs / len(offs)
                diag["r_l2_max"][s] = max(diag["r_l2_max"][s], *d.r_norms)
                diag["chi_plateau_ok"][s] &= d.chi_plateau_ok
        except (ParameterError, RuntimeError, ProjectionError) as exc:
            valid[s] = False
            diag["errors"][s] = f"{type(exc).__name__}: {exc}"
            continue
        vals[s] = acc.mean()
    return FourierSampleSet(g, R, idx, xis, vals, rhos, valid, diag)


def invert_lowpass(samples: FourierSampleSet, R: float | None = None, g: Grid3 | None = None):
    """Truncated inverse transform of Hermitian-symmetrized samples on the node grid.

    Returns the real reconstruction array of shape ``g.shape``.
    """
    g = samples.grid if g is None else g
    R = samples.R if R is None else float(R)
    shape = (g.n1 + 1, g.n2 + 1, g.n3 + 1)
    ks = [2 * np.pi * sfft.fftfreq(n, d=h) for n, h in
          ((g.n1 + 1, g.h_prime), (g.n2 + 1, g.h_prime), (g.n3 + 1, g.h3))]
    idx = np.asarray(samples.idx)
    if idx.size:
        if np.any(idx < 0) or np.any(idx >= np.array(shape)):
            raise LatticeError("sample indices outside the inversion grid")
        lat = np.stack([ks[a][idx[:, a]] for a in range(3)], axis=1)
        if not np.allclose(lat, samples.xi, atol=1e-9 * (1 + np.abs(samples.xi).max())):
            raise LatticeError("sample frequencies are not on the dual lattice")
    x0 = np.array([g.x1[0], g.x2[0], g.x3[0]])
    cell = g.h_prime ** 2 * g.h3
    spec = np.zeros(shape, complex)
    have = np.zeros(shape, bool)
    keep = samples.valid & (np.linalg.norm(samples.xi, axis=1) <= R * (1 + 1e-12))
    for (i, j, k), xi, v in zip(idx[keep], samples.xi[keep], samples.values[keep]):
        spec[i, j, k] = v * np.exp(1j * xi @ x0) / cell
        have[i, j, k] = True
    # Hermitian symmetrization: the DFT of a real array satisfies S[-k] = conj S[k]
    neg = tuple((-np.arange(n)) % n for n in shape)
    spec_m = np.conj(spec[np.ix_(*neg)])
    have_m = have[np.ix_(*neg)]
    both = have & have_m
    out = np.where(both, 0.5 * (spec + spec_m), np.where(have, spec, spec_m))
    return np.real(sfft.ifftn(out))


# ---------------------------------------------------------------------------
# parameter schedule
# ---------------------------------------------------------------------------
@dataclass
class Schedule:
    R: float
    rho: float
    log_R36: float
    log_gamma0: float
    C_prime: float
    kind: str


def _log_gamma0(rho0: float) -> float:
    return (1.0 + rho0 ** (1.0 / 18.0)) ** 36


def choose_parameters(gamma: float, M: float = None, rho0_est: float = 1.0, D: float = 0.0,
                      variant: str = "full", alpha4: float | None = None) -> Schedule:
    """Literal frequency schedule ``rho = R^36`` evaluated in log space.

    Full data: ``C' = 4 D' + 1`` with ``D' = D + 1`` and
    ``R^36 = 2 log(3 gamma0 + 1/gamma) / (1 + C')``.
    Partial data: ``C' = 2 alpha4 + 1`` and
    ``R^36 = log(3 gamma0 + 1/gamma) / (1 + C')``.
    ``gamma0 = exp((1 + rho0^{1/18})^36)``. ``M`` enters only through the
    (existential) constants and is accepted for interface symmetry.
    ``gamma = 0`` returns ``R = rho = inf``.
    """
    if gamma < 0:
        raise ParameterError("gamma must be non-negative")
    lg0 = _log_gamma0(rho0_est)
    if variant == "full":
        Cp = 4.0 * (D + 1.0) + 1.0
        factor = 2.0
    elif variant == "partial":
        if alpha4 is None:
            raise ParameterError("partial schedule needs alpha4")
        Cp = 2.0 * alpha4 + 1.0
        factor = 1.0
    else:
        raise ParameterError("variant must be 'full' or 'partial'")
    if gamma == 0:
        return Schedule(math.inf, math.inf, math.inf, lg0, Cp, f"literal-{variant}")
    # log(3 gamma0 + 1/gamma) without forming gamma0
    L = float(np.logaddexp(math.log(3.0) + lg0, -math.log(gamma)))
    R36 = factor * L / (1.0 + Cp)
    return Schedule(R36 ** (1.0 / 36.0), R36, math.log(R36), lg0, Cp, f"literal-{variant}")


def desk_schedule(gamma: float, c: float = 1.25, p: float = 1.0, C_eff: float = 1.0,
                  rho_min: float = 1.0, rho_max: float = math.inf,
                  factor: float = 2.0) -> Schedule:
    """Desk-scale schedule: ``rho = clip(factor log(3 + 1/gamma) / (1 + C_eff))``, ``R = (rho/c)^(1/p)``."""
    if gamma < 0:
        raise ParameterError("gamma must be non-negative")
    if gamma == 0:
        rho = rho_max
        L = math.inf
    else:
        L = float(np.logaddexp(math.log(3.0), -math.log(gamma)))
        rho = min(max(factor * L / (1.0 + C_eff), rho_min), rho_max)
    R = (rho / c) ** (1.0 / p)
    return Schedule(R, rho, math.log(rho), 0.0, C_eff, "desk")


def bound_value(gamma: float, C: float = 1.0) -> float:
    """``C log(3 + 1/gamma)^(-1/36)``; zero for ``gamma = 0``."""
    if gamma == 0:
        return 0.0
    return C * float(np.logaddexp(math.log(3.0), -math.log(gamma))) ** (-1.0 / 36.0)


def fit_bound_constant(gammas, errors) -> float:
    """Smallest ``C`` with ``error <= C log(3 + 1/gamma)^(-1/36)`` at every point."""
    best = 0.0
    for gm, e in zip(gammas, errors):
        b = bound_value(gm, 1.0)
        if b > 0:
            best = max(best, e / b)
    return best


# ---------------------------------------------------------------------------
# stability sweep
# ---------------------------------------------------------------------------
@dataclass
class StabilityRecord:
    delta: float
    gamma: float
    R: float
    rho: float
    error: float
    bound: float
    cross_term_budget: float
    tail_budget: float
    rel_error: float = 0.0
    literal_R: float = 0.0
    literal_rho: float = 0.0
    C_prime: float = 0.0
    gamma0_log: float = 0.0
    n_samples: int = 0
    n_invalid: int = 0
    extra: dict = field(default_factory=dict)

    CSV_COLUMNS = ("delta", "gamma", "R", "rho", "error", "bound", "cross_term_budget",
                   "tail_budget")

    def row(self):
        return [getattr(self, c) for c in self.CSV_COLUMNS]


def _h1_spectral(g: Grid3, q):
    cell = g.h_prime ** 2 * g.h3
    S = sfft.fftn(_vals(q)) * cell
    ks = [2 * np.pi * sfft.fftfreq(n, d=h) for n, h in
          ((g.n1 + 1, g.h_prime), (g.n2 + 1, g.h_prime), (g.n3 + 1, g.h3))]
    K = np.meshgrid(*ks, indexing="ij")
    K2 = K[0] ** 2 + K[1] ** 2 + K[2] ** 2
    vol = np.prod([(g.n1 + 1) * g.h_prime, (g.n2 + 1) * g.h_prime, (g.n3 + 1) * g.h3])
    # Parseval on the periodic box: ||f||^2 = sum |S|^2 / vol
    return S, K2, vol


def tail_energy(g: Grid3, q, R: float) -> tuple:
    """``(||q - q_R||_L2, ||grad q||_L2 / R)`` from the discrete spectrum."""
    S, K2, vol = _h1_spectral(g, q)
    tail = float(np.sqrt(np.sum(np.abs(S[K2 > R * R]) ** 2) / vol))
    grad = float(np.sqrt(np.sum(K2 * np.abs(S) ** 2) / vol))
    return tail, grad / R if R > 0 else math.inf


def stability_experiment(q1, q2, dLam: DnOperator, noise_levels, config: dict | None = None,
                         seed=0, cache: dict | None = None, restrict=None):
    """Noise sweep: measure gamma, schedule (R, rho), reconstruct, and record errors.

    ``config`` keys (all optional): ``c``, ``p``, ``C_eff``, ``rho_min``,
    ``rho_max``, ``rho0``, ``M``, ``cross_C`` (fitted cross-term constant),
    ``method``, ``factor`` and ``kind`` (``'desk'`` or ``'paper_literal'``;
    the latter raises :class:`ResolutionError` when the grid cannot resolve
    the literal ``rho``). ``restrict`` is an optional callable mapping a
    noisy full operator to the operator whose norm defines gamma (partial
    data); reconstruction always uses the full noisy operator.
    """
    cfg = dict(c=1.25, p=1.0, C_eff=1.0, rho_min=1.0, rho_max=math.inf, rho0=1.0, M=10.0,
               cross_C=1.0, method="fixed_point", factor=2.0, kind="desk")
    cfg.update(config or {})
    g = dLam.grid
    q = _vals(q2) - _vals(q1)
    qn = float(np.sqrt(np.sum(g.volume_weights * q ** 2)))
    cache = {} if cache is None else cache
    unit = add_noise(replace_zero(dLam), 1.0, seed)
    records = []
    for delta in noise_levels:
        noisy = replace(dLam, matrix=dLam.matrix + delta * unit.matrix) if delta > 0 else dLam
        meas = restrict(noisy) if restrict is not None else noisy
        gamma = operator_norm(meas)
        gamma_full = operator_norm(noisy) if restrict is not None else gamma
        lit = choose_parameters(gamma, cfg["M"], cfg["rho0"], g.D)
        if cfg["kind"] == "paper_literal":
            sch = lit
            if not g.h_prime * sch.rho <= 0.3:
                raise ResolutionError(
                    f"literal schedule rho={sch.rho:.4g} is not resolved (h' rho <= 0.3)")
        else:
            sch = desk_schedule(gamma, cfg["c"], cfg["p"], cfg["C_eff"], cfg["rho_min"],
                                cfg["rho_max"], cfg["factor"])
        if gamma == 0 and not np.any(q):
            records.append(StabilityRecord(delta, 0.0, math.inf, sch.rho, 0.0, 0.0, 0.0, 0.0,
                                           0.0, lit.R, lit.rho, lit.C_prime, lit.log_gamma0,
                                           extra=dict(gamma_full=gamma_full)))
            continue
        lattice = xi_lattice(g, sch.R)
        samples = fourier_sample(dLam, q1, q2, lattice, sch.rho, method=cfg["method"],
                                 cache=cache, noise=unit if delta > 0 else None,
                                 noise_scale=delta)
        qrec = invert_lowpass(samples, sch.R)
        err = float(np.sqrt(np.sum(g.volume_weights * (qrec - q) ** 2)))
        tail, tail_bd = tail_energy(g, q, sch.R)
        rec = StabilityRecord(
            delta=float(delta), gamma=float(gamma), R=float(sch.R), rho=float(sch.rho),
            error=err, bound=0.0,
            cross_term_budget=float(cfg["cross_C"] * sch.R ** 2 * sch.rho ** -0.125),
            tail_budget=float(tail_bd), rel_error=err / qn if qn > 0 else 0.0,
            literal_R=float(lit.R), literal_rho=float(lit.rho), C_prime=float(lit.C_prime),
            gamma0_log=float(lit.log_gamma0), n_samples=int(samples.valid.sum()),
            n_invalid=int((~samples.valid).sum()),
            extra=dict(tail=tail, gamma_full=gamma_full, max_cross=float(np.max(np.abs(samples.diagnostics["cross_term"])))
                       if len(samples.xi) else 0.0))
        records.append(rec)
    C = fit_bound_constant([r.gamma for r in records], [r.error for r in records])
    for r in records:
        r.bound = bound_value(r.gamma, C)
        r.extra["C_fit"] = C
    return records


def replace_zero(op: DnOperator) -> DnOperator:
    return replace(op, matrix=np.zeros_like(op.matrix), meta=dict(op.meta))
