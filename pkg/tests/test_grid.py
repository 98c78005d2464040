import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waveguide_ip.grid import (
    CAP, INNER, INTERIOR, LATERAL, CrossSection, ParameterError, TraceField,
    boundary_restriction, build_grid, subdomain_mask,
)


def test_rectangle_shape_and_spacing():
    g = build_grid(CrossSection("rectangle", 1.0, 0.5), 16, 32, 2.0)
    assert g.shape == (17, 9, 33)
    assert g.h_prime == pytest.approx(1 / 16)
    assert g.h3 == pytest.approx(4 / 32)
    assert g.n_ring == 2 * (16 + 8)
    assert g.n_axial == 31


def test_incommensurate_sides_rejected():
    with pytest.raises(ParameterError):
        build_grid(CrossSection("rectangle", 1.0, 0.77), 16, 32, 1.0)


@pytest.mark.parametrize("offsets", [(0.3, 0.3, 0.2, 0.1), (0.1, 0.2, 0.3, 0.4), (0.3, 0.2, 0.1)])
def test_bad_offsets_rejected(offsets):
    with pytest.raises(ParameterError):
        CrossSection(offsets=offsets)


def test_classification_counts(small_rect, small_annulus):
    c = small_rect.classification
    n1, n2, n3 = small_rect.n1, small_rect.n2, small_rect.n3
    assert np.sum(c == CAP) == 2 * (n1 + 1) * (n2 + 1)
    assert np.sum(c == LATERAL) == (2 * (n1 + n2)) * (n3 - 1)
    assert np.sum(c == INTERIOR) == (n1 - 1) * (n2 - 1) * (n3 - 1)
    ca = small_annulus.classification
    assert np.all(ca[0, :, 1:-1] == INNER)
    assert np.all(ca[-1, :, 1:-1] == LATERAL)


def test_ring_visits_each_boundary_node_once(small_rect):
    rg = small_rect.ring
    pairs = set(zip(rg["i"].tolist(), rg["j"].tolist()))
    assert len(pairs) == small_rect.n_ring
    c2 = small_rect.classification[:, :, 1]
    assert pairs == set(zip(*np.nonzero(c2 == LATERAL)))
    assert np.allclose(np.linalg.norm(rg["normal"], axis=1), 1.0)
    assert rg["corner"].sum() == 4


def test_volume_weights_integrate_volume(small_rect, small_annulus):
    # the rectangle rule uses full cells at every node, so it overcounts by the
    # boundary layer; the polar rule is exact for constants in r
    g = small_annulus
    assert g.volume_weights.sum() / (2 * g.L + g.h3) == pytest.approx(np.pi * (1 - 0.25), rel=1e-12)
    r = small_rect
    assert r.volume_weights.sum() == pytest.approx((1 + r.h_prime) ** 2 * (2 * r.L + r.h3))


def test_level_on_the_outer_boundary(small_rect, small_annulus):
    rg = small_annulus.ring
    X1, X2 = small_annulus.transverse
    assert np.allclose(small_annulus.cross_section.level(X1[rg["i"], rg["j"]], X2[rg["i"], rg["j"]]), 1)
    # the smoothed box norm is 1 at edge midpoints and at least 1 elsewhere on the edge
    cs = small_rect.cross_section
    assert cs.level(0.5, 0.0) == pytest.approx(1.0)
    assert cs.level(0.0, -0.5) == pytest.approx(1.0)
    rg = small_rect.ring
    X1, X2 = small_rect.transverse
    lev = cs.level(X1[rg["i"], rg["j"]], X2[rg["i"], rg["j"]])
    assert np.all(lev >= 1 - 1e-12) and lev.max() == pytest.approx(2 ** (1 / 8))


@pytest.mark.parametrize("kind", ["rectangle", "annulus"])
def test_level_derivatives_match_finite_differences(kind):
    cs = CrossSection(kind, 1.2, 0.8, r0=0.3)
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.35, 0.35, size=(2, 40))
    x = x[:, np.hypot(*x) > 0.05]
    lev, grad, hess = cs.level_derivatives(*x)
    e = 1e-5
    fd1 = (cs.level(x[0] + e, x[1]) - cs.level(x[0] - e, x[1])) / (2 * e)
    fd2 = (cs.level(x[0], x[1] + e) - cs.level(x[0], x[1] - e)) / (2 * e)
    assert np.allclose(grad[0], fd1, atol=1e-6)
    assert np.allclose(grad[1], fd2, atol=1e-6)
    g1p = cs.level_derivatives(x[0] + e, x[1])[1]
    g1m = cs.level_derivatives(x[0] - e, x[1])[1]
    assert np.allclose(hess[0], (g1p[0] - g1m[0]) / (2 * e), atol=1e-4)
    assert np.allclose(hess[1], (g1p[1] - g1m[1]) / (2 * e), atol=1e-4)


offsets_st = st.lists(st.floats(0.01, 0.99), min_size=4, max_size=4, unique=True).map(
    lambda v: tuple(sorted(v, reverse=True))
).filter(lambda d: min(a - b for a, b in zip(d, d[1:])) > 1e-3)


@settings(max_examples=40, deadline=None)
@given(offsets=offsets_st, kind=st.sampled_from(["rectangle", "annulus"]))
def test_subdomains_are_nested(offsets, kind):
    if kind == "annulus":
        offsets = tuple(0.9 * d for d in offsets)
    cs = CrossSection(kind, r0=0.05, offsets=offsets)
    g = build_grid(cs, 8, 16, 1.0)
    masks = [subdomain_mask(g, j) for j in range(4)]
    for outer, inner in zip(masks, masks[1:]):
        assert not np.any(inner & ~outer)
    assert np.all(masks[3][g.ring["i"], g.ring["j"]])


def test_gamma0_restriction_zeroes_inaccessible_edges():
    g = build_grid(CrossSection("rectangle", gamma0=("y-", "x+")), 8, 16, 1.0)
    f = g.trace_of(np.ones(g.shape))
    r = boundary_restriction(g, f, "gamma0")
    keep = g.ring_in_gamma0()
    assert keep.sum() == 16
    assert np.all(r.values[keep] == 1) and np.all(r.values[~keep] == 0)
    assert boundary_restriction(g, f, "full") is f


def test_trace_roundtrip_and_norm(small_rect, rng):
    v = rng.standard_normal((small_rect.n_ring, small_rect.n_axial))
    u = small_rect.extend_trace(v, dtype=float)
    f = small_rect.trace_of(u)
    assert np.array_equal(f.values, v)
    assert f.norm() == pytest.approx(np.sqrt(np.sum(v ** 2) * small_rect.h_prime * small_rect.h3))
    with pytest.raises(ParameterError):
        TraceField(v, v[:-1])
