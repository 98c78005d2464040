"""Experiment runners behind the command line interface.

Each runner takes a validated config dict and an output directory, writes
its artifacts and returns a JSON-friendly summary.
"""
from __future__ import annotations

import math
import warnings
from pathlib import Path

import numpy as np

from .carleman import (UnsupportedConfigurationError, build_weight, carleman_sweep,
                       random_test_field, verify_weight_properties)
from .cgo import make_params, solve_remainder, theta_for
from .dnmap import TraceBasis, assemble_dn, assemble_dn_difference, operator_norm, restrict_partial
from .fd import l2_norm
from .forward import ForwardSolver, solve_dirichlet
from .fourier import (StabilityRecord, bound_value, fourier_sample, invert_lowpass,
                      stability_experiment, xi_lattice)
from .grid import CrossSection, TraceField, build_grid
from .io import write_array, write_csv, write_json
from .partial import partial_bound_chain
from .potentials import PotentialField, make_bump_potential

__all__ = [
    "make_grid",
    "make_pair",
    "run_forward",
    "run_dn",
    "run_cgo",
    "run_reconstruct",
    "run_stability",
    "run_partial",
    "run_carleman",
    "emit_plotdata",
    "RUNNERS",
]


def make_grid(cfg):
    gc = cfg["grid"]
    cs = CrossSection(gc["kind"], gc["a1"], gc["a2"], gc["r0"], tuple(gc["gamma0"]),
                      tuple(gc["offsets"]))
    return build_grid(cs, gc["n_prime"], gc["n3"], gc["L"])


def make_pair(cfg, g):
    pc = cfg["potential"]
    q0 = np.full(g.shape, float(pc["q0"]))
    pad = cfg["grid"]["pad"]

    def one(spec):
        if spec is None:
            return PotentialField(g, q0, q0 if pc["q0"] else None, M=pc["M"], cls=pc["class"])
        return make_bump_potential(g, spec["center"], spec["widths"], spec["amplitude"],
                                   q0=q0 if pc["q0"] else None, cls=pc["class"], M=pc["M"],
                                   pad=pad)

    return one(pc["q1"]), one(pc["q2"])


def _basis_size(cfg):
    bs = cfg["dn"]["basis_size"]
    return None if bs is None else tuple(bs)


def run_forward(cfg, out: Path, seed: int):
    g = make_grid(cfg)
    _, q2 = make_pair(cfg, g)
    basis = TraceBasis.for_grid(g, (1, 1))
    f = np.real(basis.synthesize(np.ones(1)))
    u = solve_dirichlet(q2, TraceField(f, g.trace_weights(), 0.5))
    solver = ForwardSolver(g, q2.values)
    res = solver.residual(u, np.zeros(g.shape))
    write_array(out / "forward_u.bin", u, dict(shape=list(g.shape), kind=g.kind))
    summary = dict(residual=res, u_l2=l2_norm(g, u), trace_l2=float(np.linalg.norm(f)))
    write_json(out / "forward.json", summary)
    return summary


def run_dn(cfg, out: Path, seed: int):
    g = make_grid(cfg)
    q1, q2 = make_pair(cfg, g)
    bs = _basis_size(cfg)
    d = assemble_dn_difference(q1, q2, bs, g=g, scheme=cfg["dn"]["scheme"])
    lam = assemble_dn(q2, bs, g=g, scheme=cfg["dn"]["scheme"])
    gamma = operator_norm(d)
    meta = dict(n_ring=d.basis.n_ring, n_axial=d.basis.n_axial, m=d.basis.m.tolist(),
                k=d.basis.k.tolist(), scheme=d.scheme)
    write_array(out / "dn_difference.bin", d.matrix, meta)
    write_array(out / "dn_q2.bin", lam.matrix, meta)
    summary = dict(gamma=gamma, shape=list(d.matrix.shape))
    if not g.cross_section.gamma0_is_full:
        summary["gamma1"] = operator_norm(restrict_partial(d))
    write_json(out / "dn.json", summary)
    return summary


def run_cgo(cfg, out: Path, seed: int):
    g = make_grid(cfg)
    _, q2 = make_pair(cfg, g)
    rows = []
    slopes = {}
    for xi in cfg["cgo"]["xi"]:
        xi = np.asarray(xi, float)
        rs = []
        for rho in cfg["cgo"]["rho"]:
            p = make_params(theta_for(xi), xi, rho)
            sol = solve_remainder(p, q2, +1, cfg["cgo"]["method"], g=g)
            rep = sol.report
            rows.append(dict(xi1=xi[0], xi2=xi[1], xi3=xi[2], rho=float(rho),
                             r_l2=rep["r_l2"], r_h2=rep["r_h2"], E_norm=rep["E_norm"],
                             iterations=sol.iterations, contraction=sol.contraction))
            rs.append((rho, rep["r_l2"]))
        if len(rs) >= 2 and all(r > 0 for _, r in rs):
            x, y = np.log([a for a, _ in rs]), np.log([b for _, b in rs])
            slopes[str(xi.tolist())] = float(np.polyfit(x, y, 1)[0])
    cols = ["xi1", "xi2", "xi3", "rho", "r_l2", "r_h2", "E_norm", "iterations", "contraction"]
    write_csv(out / "cgo.csv", rows, cols)
    summary = dict(slopes=slopes, n_runs=len(rows))
    write_json(out / "cgo.json", summary)
    return summary


def run_reconstruct(cfg, out: Path, seed: int):
    g = make_grid(cfg)
    q1, q2 = make_pair(cfg, g)
    rc = cfg["reconstruct"]
    d = assemble_dn_difference(q1, q2, _basis_size(cfg), g=g, scheme=cfg["dn"]["scheme"])
    lat = xi_lattice(g, rc["R"])
    samples = fourier_sample(d, q1, q2, lat, rc["rho"], eps=rc["eps"],
                             method=cfg["cgo"]["method"])
    qrec = invert_lowpass(samples, rc["R"])
    q = q2.values - q1.values
    w = g.volume_weights
    err = float(np.sqrt(np.sum(w * (qrec - q) ** 2)))
    qn = float(np.sqrt(np.sum(w * q ** 2)))
    rows = [dict(xi1=x[0], xi2=x[1], xi3=x[2], re=v.real, im=v.imag, valid=ok,
                 oracle_re=o.real, oracle_im=o.imag)
            for x, v, ok, o in zip(samples.xi, samples.values, samples.valid,
                                   samples.diagnostics["volumetric"])]
    write_csv(out / "samples.csv", rows,
              ["xi1", "xi2", "xi3", "re", "im", "valid", "oracle_re", "oracle_im"])
    write_array(out / "q_rec.bin", qrec, dict(R=rc["R"], rho=rc["rho"]))
    summary = dict(error=err, rel_error=err / qn if qn else 0.0, n_samples=len(samples.xi),
                   n_invalid=int((~samples.valid).sum()), gamma=operator_norm(d))
    write_json(out / "reconstruct.json", summary)
    return summary


def _schedule_cfg(cfg):
    s = dict(cfg["schedule"])
    s["rho_max"] = math.inf if s["rho_max"] is None else s["rho_max"]
    s["M"] = cfg["potential"]["M"]
    s["method"] = cfg["cgo"]["method"]
    return s


def emit_plotdata(records, out: Path, stem: str = "plotdata"):
    """Write ``(x, y) = (log(3 + 1/gamma)^(-1/36), error)`` pairs and the fitted lines.

    Returns the least-squares line ``(slope, intercept)`` and the bound
    constant ``C``.
    """
    if not records:
        raise ValueError("emit_plotdata needs at least one record")
    pts = sorted((bound_value(r.gamma, 1.0), r.error) for r in records)
    write_csv(out / f"{stem}.csv", [dict(x=x, y=y) for x, y in pts], ["x", "y"])
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if len(pts) >= 2 and np.ptp(xs) > 0:
        slope, icpt = (float(v) for v in np.polyfit(xs, ys, 1))
    else:
        slope, icpt = 0.0, float(ys[0])
    pos = xs > 0
    C = float(np.max(ys[pos] / xs[pos])) if pos.any() else 0.0
    fit = dict(slope=slope, intercept=icpt, C=C)
    write_csv(out / f"{stem}_fit.csv", [fit], ["slope", "intercept", "C"])
    return fit


def _sweep(cfg, out: Path, seed: int, partial: bool):
    g = make_grid(cfg)
    q1, q2 = make_pair(cfg, g)
    d = assemble_dn_difference(q1, q2, _basis_size(cfg), g=g, scheme=cfg["dn"]["scheme"])
    restrict = (lambda op: restrict_partial(op)) if partial else None
    recs = stability_experiment(q1, q2, d, cfg["noise"]["deltas"], _schedule_cfg(cfg),
                                seed=seed, restrict=restrict)
    stem = "partial_stability" if partial else "stability"
    write_csv(out / f"{stem}.csv", [dict(zip(StabilityRecord.CSV_COLUMNS, r.row())) for r in recs],
              list(StabilityRecord.CSV_COLUMNS))
    fit = emit_plotdata(recs, out, stem=f"{stem}_plot")
    summary = dict(C_fit=recs[0].extra.get("C_fit", 0.0), plot_fit=fit,
                   fit_window=dict(delta_min=min(cfg["noise"]["deltas"]),
                                   delta_max=max(cfg["noise"]["deltas"])),
                   records=[dict(delta=r.delta, gamma=r.gamma,
                                 gamma_full=r.extra.get("gamma_full", r.gamma), R=r.R,
                                 rho=r.rho, error=r.error, rel_error=r.rel_error,
                                 literal_R=r.literal_R, literal_rho=r.literal_rho)
                            for r in recs])
    write_json(out / f"{stem}.json", summary)
    return summary


def run_stability(cfg, out: Path, seed: int):
    return _sweep(cfg, out, seed, partial=False)


def run_partial(cfg, out: Path, seed: int):
    g = make_grid(cfg)
    q1, q2 = make_pair(cfg, g)
    d = assemble_dn_difference(q1, q2, _basis_size(cfg), g=g, scheme=cfg["dn"]["scheme"])
    pc = cfg["partial"]
    ps = [make_params(theta_for(np.asarray(x, float)), np.asarray(x, float), pc["rho"])
          for x in pc["xi"]]
    summary = dict(gamma=operator_norm(d))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = partial_bound_chain(restrict_partial(d), q1, q2, ps, pc["tau"])
    except UnsupportedConfigurationError as exc:
        # the sweep only needs gamma1, so it still runs
        summary["chain_skipped"] = str(exc)
    else:
        cols = ["xi1", "xi2", "xi3", "rho", "link", "log_lhs", "log_rhs", "log_C", "slack"]
        write_csv(out / "partial_chain.csv", rep.csv_rows(), cols)
        summary.update(constants=rep.constants, fitted=rep.fitted, links_ok=rep.links_ok,
                       implied_ok=rep.implied_ok)
    sweep = _sweep(cfg, out, seed, partial=True)
    summary["gamma1_le_gamma"] = all(r["gamma"] <= r["gamma_full"] * (1 + 1e-12)
                                     for r in sweep["records"])
    write_json(out / "partial_chain.json", summary)
    return summary


def run_carleman(cfg, out: Path, seed: int):
    cc = cfg["carleman"]
    cs = CrossSection("annulus", r0=cc["r0"], offsets=tuple(cc["offsets"]))
    g = build_grid(cs, cc["n_prime"], cc["n3"], cc["L"])
    w, rep = verify_weight_properties(build_weight(g, cc["beta"]))
    fields = [random_test_field(w, seed * 1000 + k) for k in range(cc["n_fields"])]
    rows = carleman_sweep(w, cc["lambdas"], fields)
    ratios = [r["ratio"] for r in rows]
    C = float(np.nanmax(ratios))
    for r in rows:
        r.update(C_fit=C, C0=w.constants["C0"], C1=w.constants["C1"], C2=w.constants["C2"])
    write_csv(out / "carleman.csv", rows,
              ["lam", "field", "lhs", "rhs", "ratio", "C_fit", "C0", "C1", "C2"])
    summary = dict(beta=w.beta, constants=w.constants, kappa=w.kappa, alpha1=w.alpha1,
                   alpha2=w.alpha2, C_fit=C, fit_window=dict(lam_min=min(cc["lambdas"]),
                                                             lam_max=max(cc["lambdas"])),
                   weight_report=rep)
    write_json(out / "carleman.json", summary)
    return summary


RUNNERS = dict(forward=run_forward, dn=run_dn, cgo=run_cgo, reconstruct=run_reconstruct,
               stability=run_stability, partial=run_partial, carleman=run_carleman)
