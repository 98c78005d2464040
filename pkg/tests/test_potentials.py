import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waveguide_ip.grid import CrossSection, ParameterError, build_grid
from waveguide_ip.potentials import (
    PotentialField, SpectrumError, bump_profile, check_admissibility, decay_sum,
    make_bump_potential, spectrum_guard,
)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 3))
def test_bump_profile_range(s):
    v = float(bump_profile(np.array([s]))[0])
    assert 0 <= v <= 1
    if s >= 1:
        assert v == 0


def test_bump_profile_peak_and_monotone():
    s = np.linspace(0, 1, 50)
    v = bump_profile(s)
    assert v[0] == 1.0
    assert np.all(np.diff(v) <= 0)


def test_bump_support_and_admissibility(small_rect):
    q = make_bump_potential(small_rect, [0, 0, 0], [0.3, 0.3, 0.6], 1.0)
    X1, X2, X3 = small_rect.coords()
    s = np.sqrt((X1 / 0.3) ** 2 + (X2 / 0.3) ** 2 + (X3 / 0.6) ** 2)
    assert np.all(q.values[np.broadcast_to(s >= 1, q.values.shape)] == 0)
    rep = check_admissibility(q)
    assert rep.passed, rep.failures()
    assert rep.quantities["boundary_mismatch"] == 0


def test_bump_touching_boundary_rejected(small_rect):
    with pytest.raises(ParameterError):
        make_bump_potential(small_rect, [0.3, 0, 0], [0.3, 0.3, 0.6], 1.0)
    with pytest.raises(ParameterError):
        make_bump_potential(small_rect, [0, 0, 1.9], [0.3, 0.3, 0.6], 1.0)


def test_qprime_bump_must_avoid_collar(small_rect):
    # W0 = {level > 0.2}; a bump of half-width 0.3 reaches it
    with pytest.raises(ParameterError):
        make_bump_potential(small_rect, [0, 0, 0], [0.3, 0.3, 0.6], 1.0, cls="Qprime")
    q = make_bump_potential(small_rect, [0, 0, 0], [0.08, 0.08, 0.5], 1.0, cls="Qprime")
    rep = check_admissibility(q)
    assert rep.checks["o0_agreement"]


def test_admissibility_flags_large_potential(small_rect):
    q = make_bump_potential(small_rect, [0, 0, 0], [0.3, 0.3, 0.6], 50.0, M=10.0)
    rep = check_admissibility(q)
    assert not rep.passed and "bound" in rep.failures()


def test_decay_sum_of_indicator(small_rect):
    d = np.zeros(small_rect.shape)
    k = small_rect.n3 // 2 + 3
    d[4, 4, k] = 2.0
    w = small_rect.volume_weights[4, 4, k]
    assert decay_sum(small_rect, d) == pytest.approx(2 * w * (1 + abs(small_rect.x3[k])))


def test_spectrum_guard_matches_discrete_dirichlet_eigenvalue(small_rect):
    g = small_rect
    lam = (2 * 4 / g.h_prime ** 2 * np.sin(np.pi / (2 * g.n1)) ** 2
           + 4 / g.h3 ** 2 * np.sin(np.pi / (2 * g.n3)) ** 2)
    assert spectrum_guard(PotentialField.zero(g)) == pytest.approx(lam, rel=1e-8)
    with pytest.raises(SpectrumError):
        spectrum_guard(PotentialField.constant(g, -lam))


def test_potential_shape_checked(small_rect):
    with pytest.raises(ParameterError):
        PotentialField(small_rect, np.zeros((3, 3, 3)))
    q = PotentialField.zero(small_rect)
    with pytest.raises(ValueError):
        q.values[0, 0, 0] = 1.0
