import numpy as np
import pytest

from waveguide_ip.fd import gradient, hessian, l2_norm, laplacian, sobolev_norm
from waveguide_ip.grid import CrossSection, build_grid


def test_laplacian_exact_on_quadratics(small_rect):
    X1, X2, X3 = small_rect.coords()
    u = 3 * X1 ** 2 - X2 ** 2 + 0.5 * X3 ** 2 + X1 * X3
    lap = laplacian(small_rect, np.broadcast_to(u, small_rect.shape))
    assert np.allclose(lap[1:-1, 1:-1, 1:-1], 6 - 2 + 1, atol=1e-9)
    assert np.all(lap[0] == 0) and np.all(lap[..., -1] == 0)


def test_polar_laplacian_converges_on_radial_quadratic():
    errs = []
    for n in (8, 16, 32):
        g = build_grid(CrossSection("annulus", r0=0.5, offsets=(0.5, 0.4, 0.3, 0.1)), n, 16, 1.0)
        X1, X2, X3 = g.coords()
        u = np.broadcast_to(X1 ** 3 + X2 ** 2 * X1, g.shape)
        # Delta (x^3 + x y^2) = 6x + 2x = 8x
        lap = laplacian(g, u)
        errs.append(np.max(np.abs(lap - 8 * X1)[1:-1, :, 1:-1]))
    assert errs[1] / errs[0] < 0.3 and errs[2] / errs[1] < 0.3


def test_gradient_and_hessian_of_quadratic(small_rect):
    X1, X2, X3 = small_rect.coords()
    u = np.broadcast_to(X1 ** 2 + X1 * X2 + 2 * X3, small_rect.shape)
    g1, g2, g3 = gradient(small_rect, u)
    assert np.allclose(g1, 2 * X1 + X2) and np.allclose(g2, X1) and np.allclose(g3, 2)
    H = hessian(small_rect, u)
    assert np.allclose(H[0][0], 2) and np.allclose(H[0][1], 1) and np.allclose(H[2][2], 0, atol=1e-9)


def test_annulus_gradient_frame():
    g = build_grid(CrossSection("annulus", r0=0.5, offsets=(0.5, 0.4, 0.3, 0.1)), 32, 16, 1.0)
    X1, X2, _ = g.coords()
    dr, dt, _ = gradient(g, np.broadcast_to(X1, g.shape))
    t = g.x2[None, :, None]
    assert np.allclose(dr, np.cos(t), atol=1e-12)
    assert np.allclose(dt, -np.sin(t), atol=1e-2)


def test_norm_hierarchy(small_rect, rng):
    u = rng.standard_normal(small_rect.shape)
    n0, n1, n2 = (sobolev_norm(small_rect, u, s) for s in (0, 1, 2))
    assert n0 == pytest.approx(l2_norm(small_rect, u))
    assert n0 <= n1 <= n2
    with pytest.raises(ValueError):
        sobolev_norm(small_rect, u, 3)


def test_constant_l2_norm_is_sqrt_volume(small_rect):
    assert l2_norm(small_rect, np.ones(small_rect.shape)) ** 2 == pytest.approx(
        small_rect.volume_weights.sum())
