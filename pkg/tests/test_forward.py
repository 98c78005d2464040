import numpy as np
import pytest

from waveguide_ip.forward import (
    ForwardSolver, green_pairing, normal_derivative, solve_dirichlet, solve_source,
)
from waveguide_ip.grid import CrossSection, ParameterError, build_grid
from waveguide_ip.potentials import PotentialField, make_bump_potential


def _eigvec(g, k=(1, 2, 1)):
    X1, X2, X3 = g.coords()
    a1, a2 = g.cross_section.a1, g.cross_section.a2
    u = (np.sin(k[0] * np.pi * (X1 / a1 + 0.5)) * np.sin(k[1] * np.pi * (X2 / a2 + 0.5))
         * np.sin(k[2] * np.pi * (X3 / (2 * g.L) + 0.5)))
    lam = sum(4 / h ** 2 * np.sin(kk * np.pi / (2 * n)) ** 2
              for kk, n, h in zip(k, (g.n1, g.n2, g.n3), (g.h_prime, g.h_prime, g.h3)))
    return np.broadcast_to(u, g.shape).copy(), lam


@pytest.mark.parametrize("method", ["direct", "pcg"])
def test_discrete_eigenfunction_recovered(small_rect, method):
    u, lam = _eigvec(small_rect)
    q = PotentialField.constant(small_rect, 0.7)
    got = solve_source(q, (lam + 0.7) * u, method=method)
    assert np.max(np.abs(got - u)) < 1e-8


def test_harmonic_quadratic_reproduced_exactly(small_rect):
    X1, X2, X3 = small_rect.coords()
    u = np.broadcast_to(X1 ** 2 - X2 ** 2 + X1 * X3 + 2 * X2, small_rect.shape).copy()
    q = PotentialField.zero(small_rect)
    got = solve_dirichlet(q, small_rect.trace_of(u), cap_data=u)
    assert np.max(np.abs(got - u)) < 1e-11


def test_batched_solve_matches_single(small_rect, rng):
    q = make_bump_potential(small_rect, [0, 0, 0], 0.3, 1.0)
    s = ForwardSolver(small_rect, q.values)
    F = rng.standard_normal((3,) + small_rect.shape)
    batch = s.solve(F=F)
    for b in range(3):
        assert np.allclose(batch[b], s.solve(F=F[b]))
    assert s.residual(batch[0], F[0]) < 1e-12


def test_normal_derivative_of_quadratic(small_rect):
    X1, X2, X3 = small_rect.coords()
    u = np.broadcast_to(X1 ** 2 + 0 * X2 + 0 * X3, small_rect.shape)
    dn = normal_derivative(small_rect, u)
    rg = small_rect.ring
    side = (rg["edge"] == "x+") & ~rg["corner"]
    assert np.allclose(dn[side], 1.0)
    along = (rg["edge"] == "y-") & ~rg["corner"]
    assert np.allclose(dn[along], 0.0)
    with pytest.raises(ParameterError):
        normal_derivative(small_rect, u, scheme="spectral")


def test_green_identity_gap_is_second_order():
    gaps = []
    for n in (8, 16, 32):
        g = build_grid(CrossSection(), n, 2 * n, 1.0)
        X1, X2, X3 = g.coords()
        u, _ = _eigvec(g)
        v = np.broadcast_to(np.exp(0.5 * X1 + 0.3 * X2) * np.cos(X3), g.shape)
        q = make_bump_potential(g, [0, 0, 0], [0.3, 0.3, 0.5], 1.0)
        gaps.append(green_pairing(u, v, q).gap)
    assert gaps[2] < 0.02
    assert 0.15 < gaps[2] / gaps[1] < 0.35


def test_green_pairing_needs_zero_trace(small_rect):
    u = np.ones(small_rect.shape)
    with pytest.raises(ParameterError):
        green_pairing(u, u, PotentialField.zero(small_rect))


def test_annulus_rejected_by_forward_solver(small_annulus):
    with pytest.raises(ParameterError):
        ForwardSolver(small_annulus, np.zeros(small_annulus.shape))
