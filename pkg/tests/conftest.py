import numpy as np
import pytest

from waveguide_ip.grid import CrossSection, build_grid


@pytest.fixture
def small_rect():
    cs = CrossSection("rectangle", 1.0, 1.0, offsets=(0.8, 0.7, 0.6, 0.05))
    return build_grid(cs, 8, 24, 2.0)


@pytest.fixture
def small_annulus():
    cs = CrossSection("annulus", r0=0.5, offsets=(0.5, 0.4, 0.3, 0.1))
    return build_grid(cs, 8, 16, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
