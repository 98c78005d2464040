import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waveguide_ip.cgo import (
    ConjugatedInverse, DegenerateFrequencyError, ResolutionError, chi, cgo_pair,
    conjugated_apply, conjugated_rhs, e_rho_norms, estimate_rho0, eta_of, make_params,
    solve_remainder, theta_for,
)
from waveguide_ip.fd import laplacian
from waveguide_ip.grid import CrossSection, ParameterError, build_grid
from waveguide_ip.potentials import PotentialField, make_bump_potential


@pytest.fixture(scope="module")
def g():
    return build_grid(CrossSection("rectangle", 0.4, 0.4), 16, 64, 3.0)


@pytest.fixture(scope="module")
def q(g):
    return make_bump_potential(g, [0, 0, 0], [0.12, 0.12, 0.5], 1.0)


XI = np.array([0.3, 0.0, 0.9])


def test_chi_plateau_and_support():
    t = np.array([-3, -2, -1, 0, 0.5, 1, 2, 2.5])
    assert np.array_equal(chi(t), [0, 0, 1, 1, 1, 1, 0, 0])
    with pytest.raises(ValueError):
        chi(t, 3)


@settings(max_examples=60, deadline=None)
@given(st.floats(1.0, 2.0))
def test_chi_transition_is_a_partition_of_unity(t):
    assert chi(np.array([t]))[0] + chi(np.array([3 - t]))[0] == pytest.approx(1.0, abs=1e-12)
    assert chi(np.array([-t]))[0] == chi(np.array([t]))[0]


def test_chi_derivatives_match_finite_differences():
    t = np.linspace(-2.2, 2.2, 301)
    e = 1e-6
    d1 = (chi(t + e) - chi(t - e)) / (2 * e)
    d2 = (chi(t + e, 1) - chi(t - e, 1)) / (2 * e)
    assert np.allclose(chi(t, 1), d1, atol=1e-5)
    assert np.allclose(chi(t, 2), d2, atol=1e-4)


@settings(max_examples=60, deadline=None)
@given(st.floats(-1, 1).filter(lambda v: abs(v) > 1e-3), st.floats(-1, 1).filter(lambda v: abs(v) > 1e-3),
       st.floats(-1, 1).filter(lambda v: abs(v) > 1e-3))
def test_frequency_triple_is_orthonormal(x1, x2, x3):
    xi = np.array([x1, x2, x3])
    th = theta_for(xi)
    eta = eta_of(xi)
    assert np.linalg.norm(eta) == pytest.approx(1.0)
    assert eta @ xi == pytest.approx(0.0, abs=1e-12)
    assert th @ eta[:2] == pytest.approx(0.0, abs=1e-12)
    assert th @ xi[:2] == pytest.approx(0.0, abs=1e-12)


def test_degenerate_and_invalid_parameters():
    with pytest.raises(DegenerateFrequencyError):
        eta_of([0.0, 0.0, 1.0])
    with pytest.raises(DegenerateFrequencyError):
        make_params([0, 1], [1.0, 0.0, 0.0], 2.0)
    with pytest.raises(ParameterError):
        make_params([1, 0], [1.0, 0.0, 0.5], 2.0)
    with pytest.raises(ParameterError):
        make_params(theta_for(XI), XI, 0.5)


def test_conjugated_stencil_is_conjugated_laplacian(g, rng):
    c = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
    a = np.array([1.3, -0.4])
    X1, X2, _ = g.coords()
    e = np.exp(a[0] * X1 + a[1] * X2)
    ref = -e * laplacian(g, c / e)
    got = conjugated_apply(g, c, a)
    assert np.allclose(got[1:-1, 1:-1, 1:-1], ref[1:-1, 1:-1, 1:-1])


def test_conjugated_inverse_inverts_and_has_exact_norm(g, rng):
    E = ConjugatedInverse(g, 4.0 * theta_for(XI))
    F = rng.standard_normal(g.shape) + 0j
    F[..., [0, -1]] = 0
    assert np.allclose(E.forward(E(F)), F)
    r = E(F)
    assert np.allclose(conjugated_apply(g, r, E.a)[1:-1, 1:-1, 1:-1], F[1:-1, 1:-1, 1:-1])
    m = e_rho_norms(g, theta_for(XI), 4.0, n_sources=3, power_steps=300)
    assert m["l2"] == pytest.approx(m["l2_exact"], rel=1e-4)
    assert m["h2"] <= m["h2_symbol"] * (1 + 1e-9)
    assert m["l2"] <= m["l2_exact"] * (1 + 1e-9)


def test_fixed_point_and_gmres_agree(g, q):
    p = make_params(theta_for(XI), XI, 4.0)
    s1 = solve_remainder(p, q, +1, "fixed_point", tol=1e-13)
    s2 = solve_remainder(p, q, +1, "direct")
    assert np.max(np.abs(s1.remainder - s2.remainder)) < 1e-10
    assert s1.residual(q) < 1e-9 and s2.residual(q) < 1e-9
    assert 0 <= s1.contraction < 1


def test_zero_potential_remainder_solves_free_equation(g):
    p = make_params(theta_for(XI), XI, 4.0)
    z = PotentialField.zero(g)
    s = solve_remainder(p, z, -1)
    assert s.iterations == 1
    assert s.residual(z) < 1e-10


def test_analytic_rhs_approaches_discrete_rhs():
    errs = []
    for n in (16, 32):
        gg = build_grid(CrossSection("rectangle", 0.4, 0.4), n, 4 * n, 3.0)
        qq = make_bump_potential(gg, [0, 0, 0], [0.12, 0.12, 0.5], 1.0)
        p = make_params(theta_for(XI), XI, 3.0)
        d = conjugated_rhs(p, qq)[1:-1, 1:-1, 1:-1]
        a = conjugated_rhs(p, qq, mode="analytic")[1:-1, 1:-1, 1:-1]
        errs.append(np.max(np.abs(d - a)) / np.max(np.abs(a)))
    assert errs[1] < 0.35 * errs[0]


def test_resolution_guard(g, q):
    p = make_params(theta_for(XI), XI, 30.0)
    with pytest.raises(ResolutionError):
        solve_remainder(p, q)


def test_pair_members_and_scaled_field(g, q):
    p = make_params(theta_for(XI), XI, 4.0)
    u1, u2 = cgo_pair(q, q, p)
    assert u1.sign == 1 and u2.sign == -1
    assert np.allclose(u1.a, -u2.a)
    full = u1.full_field()
    assert np.allclose(full, np.exp(u1.log_factor())[:, :, None] * u1.core)


def test_estimate_rho0_is_monotone_choice(g, q):
    r0 = estimate_rho0(g, q, XI, [1.0, 2.0, 4.0, 8.0], ratio_target=0.5)
    assert r0 in (1.0, 2.0, 4.0, 8.0)
    assert estimate_rho0(g, q, XI, [1.0], ratio_target=1e-9) is None


def test_guide_norm_bounds_truncated_norm_and_ignores_length():
    th = theta_for(XI)
    norms = []
    for k in (1, 2):
        gk = build_grid(CrossSection("rectangle", 0.4, 0.4), 8, 32 * k, 2.0 * k)
        E = ConjugatedInverse(gk, 3.0 * th)
        assert E.norm_guide >= E.norm_l2 * (1 - 1e-12)
        norms.append(E.norm_guide)
    assert norms[1] == pytest.approx(norms[0], rel=1e-12)
