import numpy as np
import pytest

from nuentropy import derivatives as D
from nuentropy import grids as G


def test_spectral_exact_on_torus():
    grid = G.torus_grid(16, 12)
    x, y = grid.mesh()
    u = np.sin(3 * x) * np.cos(2 * y)
    assert np.allclose(D.derivative(u, 0, grid, "spectral"), 3 * np.cos(3 * x) * np.cos(2 * y),
                       atol=1e-13)


def test_spectral_through_pole():
    grid = G.sphere_grid(16, 32)
    th, ph = grid.mesh()
    u = np.sin(th) * np.cos(ph)  # smooth: x-coordinate of the embedding
    assert np.allclose(D.derivative(u, 0, grid, "spectral"), np.cos(th) * np.cos(ph), atol=1e-13)


@pytest.mark.parametrize("scheme,order", [("fd2", 2), ("fd4", 4)])
def test_fd_order(scheme, order):
    errs = []
    for n in (16, 32):
        grid = G.sphere_grid(n, 2 * n)
        th, ph = grid.mesh()
        u = np.exp(np.cos(th))
        d = D.derivative(u, 0, grid, scheme)
        errs.append(np.abs(d + np.sin(th) * u).max())
    assert errs[0] / errs[1] == pytest.approx(2**order, rel=0.15)


@pytest.mark.parametrize("scheme", D.SCHEMES)
@pytest.mark.parametrize("axis", [0, 1])
def test_transpose(scheme, axis):
    grid = G.sphere_grid(8, 16)
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal(grid.shape), rng.standard_normal(grid.shape)
    lhs = np.sum(D.derivative(a, axis, grid, scheme) * b)
    rhs = np.sum(a * D.derivative_T(b, axis, grid, scheme))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_mode_axis_symbol():
    grid = G.torus_grid(8, 8).sector({1: 3})
    u = np.ones((1, 1))
    assert np.allclose(D.derivative(u, 1, grid, "spectral"), 3j)
    assert np.allclose(D.derivative(u, 1, grid, "fd2"), 1j * np.sin(3 * 2 * np.pi / 8) / (2 * np.pi / 8))
