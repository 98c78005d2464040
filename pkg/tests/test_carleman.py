import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waveguide_ip.carleman import (
    TraceViolationError, UnsupportedConfigurationError, build_weight, carleman_ratio,
    carleman_sweep, conjugate_decompose, estimate_lambda0, random_test_field, ucp_estimate,
    verify_weight_properties,
)
from waveguide_ip.grid import CrossSection, build_grid, subdomain_mask

ANN = CrossSection("annulus", r0=0.5, offsets=(0.5, 0.4, 0.3, 0.1))


def _annulus(n=16, n3=32):
    return build_grid(ANN, n, n3, 1.0)


@pytest.fixture(scope="module")
def weight():
    w, rep = verify_weight_properties(build_weight(_annulus(), beta=2.0))
    return w, rep


def test_radial_weight_constants_match_closed_form(weight):
    w, rep = weight
    assert rep["passed"]
    assert w.constants["C0"] == pytest.approx(2.0)
    assert w.constants["C1"] == pytest.approx(0.0, abs=1e-12)
    assert w.constants["C2"] == pytest.approx(1 + 1 / (w.beta * 0.5))
    r = w.grid.x1
    first = r[r > 0.7 + 1e-12].min()
    assert w.kappa == pytest.approx(0.5 * (first - 0.5))


def test_region_constants_follow_their_formulas(weight):
    w, _ = weight
    b, k = w.beta, w.kappa
    assert w.alpha1 == pytest.approx(math.exp(2 * b * k) - math.exp(b * k))
    assert w.alpha2 == pytest.approx(math.exp(2 * b * 0.5) - math.exp(2 * b * k))
    assert w.alpha1 > 0 and w.alpha2 > 0


def test_rectangle_weight_passes_with_auto_beta():
    g = build_grid(CrossSection(offsets=(0.8, 0.7, 0.6, 0.05)), 16, 16, 1.0)
    w0 = build_weight(g, beta=0.5)
    w, rep = verify_weight_properties(w0)
    assert rep["passed"], rep
    assert w.beta >= 0.5
    assert all(rep["items"].values())
    assert rep["geometry"]["psi_zero_on_sharp"] and rep["geometry"]["dnu_nonpositive"]


def test_partial_gamma0_weight_is_unsupported():
    g = build_grid(CrossSection(gamma0=("y-",), offsets=(0.8, 0.7, 0.6, 0.05)), 8, 16, 1.0)
    with pytest.raises(UnsupportedConfigurationError):
        build_weight(g)


def test_test_fields_respect_the_collar(weight):
    w, _ = weight
    u = random_test_field(w, seed=1)
    assert np.all(u[~w.o0_open] == 0) and np.any(u)
    bad = u.copy()
    bad[-1, 0, 5] = 1.0
    with pytest.raises(TraceViolationError):
        carleman_ratio(bad, 0.0, 1.0, w)


def test_conjugation_recomposes_to_second_order():
    gaps = []
    for n in (16, 32):
        w = build_weight(_annulus(n, 2 * n), beta=2.0)
        gaps.append(conjugate_decompose(random_test_field(w, seed=2), 1.0, w).recomposition_gap)
    assert gaps[0] < 0.05
    assert gaps[1] / gaps[0] < 0.4


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 50.0), st.floats(0.5, 6.0), st.integers(0, 5))
def test_ratio_is_scale_invariant(c, lam, seed):
    w = build_weight(_annulus(8, 16), beta=2.0)
    u = random_test_field(w, seed=seed)
    l1, r1, s1 = carleman_ratio(u, 0.0, lam, w)
    l2, r2, s2 = carleman_ratio(c * u, 0.0, lam, w)
    assert s1 == s2
    assert l1 / r1 == pytest.approx(l2 / r2, rel=1e-10)


def test_zero_field_and_sweep_layout(weight):
    w, _ = weight
    assert carleman_ratio(np.zeros(w.grid.shape), 0.0, 1.0, w)[:2] == (0.0, 0.0)
    fields = [random_test_field(w, seed=s) for s in range(2)]
    rows = carleman_sweep(w, [1.0, 2.0], fields)
    assert len(rows) == 4 and all(r["ratio"] > 0 for r in rows)


def test_ucp_tight_constant_has_zero_slack(weight):
    w, _ = weight
    u = random_test_field(w, seed=4)
    F = np.zeros_like(u)
    out = ucp_estimate(u, F, 1.0, w)
    assert out["holds"] and out["log_slack"] == pytest.approx(0.0, abs=1e-12)
    loose = ucp_estimate(u, F, 1.0, w, C=2 * out["C"])
    assert loose["log_slack"] == pytest.approx(math.log(2))
    m23 = subdomain_mask(w.grid, 2) & ~subdomain_mask(w.grid, 3)
    assert m23.any() and out["lhs"] > 0


def test_lambda0_marks_where_the_worst_ratio_stops_growing(weight):
    w, _ = weight
    fields = [random_test_field(w, seed=s) for s in range(3)]
    w0 = estimate_lambda0(w, fields, tol=0.02)
    assert 0.05 <= w0.lambda0 <= 200 and math.isnan(w.lambda0)

    def worst(lam):
        return max(r["ratio"] for r in carleman_sweep(w, [lam], fields))

    step = 2 ** 0.5
    assert worst(w0.lambda0 * step) <= worst(w0.lambda0) * 1.02
    if w0.lambda0 > 0.05:
        assert worst(w0.lambda0) > worst(w0.lambda0 / step) * 1.02
