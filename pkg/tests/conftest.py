import numpy as np
import pytest

from nuentropy import models


@pytest.fixture(scope="session")
def sphere():
    return models.round_sphere2(1.0, 16, 32, "analytic")


@pytest.fixture(scope="session")
def sphere_spectral():
    return models.round_sphere2(1.0, 16, 32, "spectral")


@pytest.fixture(scope="session")
def torus():
    return models.flat_torus(24, 24)


@pytest.fixture(scope="session")
def s2xs2():
    return models.parse_descriptor("product:sphere2(r=1)xsphere2(r=1):grid=8x16x8x16")


def rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = getattr(request.config, "_acceptance_lines", None)
    if lines is None:
        lines = request.config._acceptance_lines = []
    return lines


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
