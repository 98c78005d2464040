import warnings

import numpy as np
import pytest

from waveguide_ip.carleman import build_weight
from waveguide_ip.cgo import make_params, theta_for
from waveguide_ip.dnmap import assemble_dn_difference, restrict_partial
from waveguide_ip.fd import gradient
from waveguide_ip.grid import CrossSection, ParameterError, build_grid
from waveguide_ip.partial import (
    build_cutoff_theta, commutator_source, default_tau, partial_stability_experiment,
    verify_identity_45,
)
from waveguide_ip.potentials import PotentialField, make_bump_potential

CS = CrossSection("rectangle", 1.0, 1.0, offsets=(0.8, 0.7, 0.6, 0.05))
XI = np.array([1.0, 0.5, 1.0])


def _setup(n):
    g = build_grid(CS, n, 4 * n, 2.5)
    q1 = PotentialField.zero(g)
    q2 = make_bump_potential(g, [0, 0, 0], [0.09, 0.09, 0.5], 1.0, cls="Qprime")
    return g, q1, q2


def test_cutoff_values_and_regions():
    g = build_grid(CS, 32, 16, 1.0)
    th = build_cutoff_theta(g)
    X1, X2 = g.transverse
    lev = CS.level(X1, X2)
    assert np.all(th.values[lev <= 0.4] == 1.0)
    assert np.all(th.values[lev > 0.95] == 0.0)
    assert np.all((th.values >= 0) & (th.values <= 1))
    order = np.argsort(lev.ravel())
    assert np.all(np.diff(th.values.ravel()[order]) <= 1e-12)


def test_cutoff_gradient_matches_finite_differences():
    g = build_grid(CS, 48, 16, 1.0)
    th = build_cutoff_theta(g)
    a3 = np.broadcast_to(th.values[:, :, None], g.shape)
    fd = gradient(g, a3)
    inner = (slice(2, -2), slice(2, -2))
    scale = np.max(np.abs(th.grad[0]))
    assert np.max(np.abs(fd[0][:, :, 0][inner] - th.grad[0][inner])) < 0.1 * scale


def test_unresolved_cutoff_warns():
    g = build_grid(CrossSection(), 8, 16, 1.0)
    with pytest.warns(UserWarning, match="fewer than 4 cells"):
        build_cutoff_theta(g)


def test_commutator_vanishes_for_constant_cutoff(rng):
    g = build_grid(CS, 8, 16, 1.0)
    u = rng.standard_normal(g.shape)
    for c in (0.0, 1.0, 2.5):
        assert np.max(np.abs(commutator_source((g, np.full(g.shape[:2], c)), u))) < 1e-12


def test_commutator_of_affine_cutoff():
    g = build_grid(CS, 8, 16, 1.0)
    X1, X2, X3 = g.coords()
    u = np.broadcast_to(X1 ** 2 * (1 + X3), g.shape)
    out = commutator_source((g, g.transverse[0]), u)
    # -2 d1(Theta) d1(u) with Theta = x1
    assert np.allclose(out, -4 * X1 * (1 + X3))


def test_identity_is_trivial_for_equal_potentials():
    g, q1, _ = _setup(8)
    p = make_params(theta_for(XI), XI, 2.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = verify_identity_45(q1, q1, p)
    assert out == dict(lhs=0j, rhs=0j, gap=0.0)


def test_commutator_identity_on_a_resolved_grid():
    g, q1, q2 = _setup(32)
    p = make_params(theta_for(XI), XI, 2.0)
    out = verify_identity_45(q1, q2, p)
    assert out["gap"] < 1e-2
    assert abs(out["lhs"]) > 0


def test_default_tau_makes_alpha3_at_least_one():
    g = build_grid(CS, 16, 16, 1.0)
    w = build_weight(g)
    tau = default_tau(w, g.D)
    assert tau * w.alpha1 - 2 * (g.D + 1) == pytest.approx(1.0)


def test_partial_sweep_rejects_restricted_input():
    g = build_grid(CrossSection(gamma0=("y-",), offsets=CS.offsets), 8, 16, 1.0)
    q = PotentialField.zero(g)
    op = assemble_dn_difference(q, q)
    with pytest.raises(ParameterError):
        partial_stability_experiment(q, q, restrict_partial(op), [0.0])
