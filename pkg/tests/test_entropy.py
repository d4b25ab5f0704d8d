import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.spatial.transform import Rotation

from nuentropy import curvature as cv
from nuentropy import entropy as E
from nuentropy import grids as G
from nuentropy import models

NU_S2 = np.log(2) - 1


def test_w_constant_potential_sphere(sphere):
    geom, f, tau = sphere
    assert E.w_functional(geom, f, tau) == pytest.approx(NU_S2, abs=1e-14)


def test_w_rejects_nonpositive_tau(sphere):
    with pytest.raises(ValueError):
        E.w_functional(sphere.geom, sphere.f, 0.0)


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 1000), st.floats(0.2, 2.0))
def test_w_scale_invariant(seed, tau):
    m = models.round_sphere2(1.0, 16, 32, "spectral")
    f = m.random_field(seed, 0).full()
    scaled = cv.build_geometry(2.0 * m.geom.g, "spectral", grid=m.grid)
    assert E.w_functional(scaled, f, 2 * tau) == pytest.approx(
        E.w_functional(m.geom, f, tau), rel=1e-12)


def test_w_torus_hand_quadrature(torus):
    # unnormalized f is accepted; compare with adaptive quadrature of the integrand
    geom = torus.geom
    x = np.broadcast_to(torus.grid.coords()[0], torus.grid.shape)
    tau = 0.7
    f = 0.3 * np.sin(x)

    def integrand(t):
        ff, df = 0.3 * np.sin(t), 0.3 * np.cos(t)
        return (tau * df**2 + ff - 2) * np.exp(-ff)

    ref = 2 * np.pi * integrate.quad(integrand, 0, 2 * np.pi, epsabs=1e-14)[0] / (4 * np.pi * tau)
    assert E.w_functional(geom, f, tau) == pytest.approx(ref, rel=1e-12)


def test_delta_w_zero_direction(sphere):
    geom, f, tau = sphere
    zero = np.zeros_like(geom.g)
    assert E.delta_w(geom, f, tau, zero, np.zeros(geom.grid.shape), 0.0) == 0.0


@pytest.mark.parametrize("seed", [0, 1])
def test_delta_w_matches_finite_difference(seed):
    m = models.round_sphere2(1.0, 16, 32, "spectral")
    f = m.random_field(seed, 0, amplitude=0.3).full()
    h = m.random_field(seed + 10, 2, amplitude=0.2).full()
    phi = m.random_field(seed + 20, 0).full()
    tau, eta = 0.6, 0.3

    def W(s):
        geom = cv.build_geometry(m.geom.g + s * h, "spectral", grid=m.grid)
        return E.w_functional(geom, f + s * phi, tau + s * eta)

    def D(s):
        return (W(s) - W(-s)) / (2 * s)

    s = 1e-2
    fd = (4 * D(s / 2) - D(s)) / 3
    an = E.delta_w(m.geom, f, tau, h, phi, eta)
    assert an == pytest.approx(fd, rel=1e-6)


def test_nu_sphere_analytic(sphere):
    res = E.nu_entropy(sphere.geom)
    assert res.converged, res.flags
    assert res.nu == pytest.approx(NU_S2, abs=1e-6)
    assert res.tau_star == pytest.approx(0.5, abs=1e-6)
    assert np.abs(res.f_star.full() - np.log(2)).max() < 1e-6
    assert res.residual_EL <= 1e-6 and res.residual_norm_constraint <= 1e-10
    assert res.qualifier == "local"
    assert len(res.local_minima) == 3


def test_nu_sphere_finite_difference():
    m = models.round_sphere2(1.0, 24, 48, "finite_difference")
    res = E.nu_entropy(m.geom)
    assert res.converged, res.flags
    assert abs(res.nu - NU_S2) < 2e-3
    assert abs(res.tau_star - 0.5) < 1e-3
    assert np.abs(res.f_star.full() - np.log(2)).max() < 5e-3


def test_nu_product(s2xs2):
    res = E.nu_entropy(s2xs2.geom)
    assert res.converged, res.flags
    assert res.nu == pytest.approx(2 * np.log(2) - 2, abs=1e-6)
    assert res.tau_star == pytest.approx(0.5, abs=1e-6)
    assert np.abs(res.f_star.full() - np.log(4)).max() < 1e-6


def test_nu_scale_invariant():
    m = models.round_sphere2(1.0, 32, 64, "spectral")
    g = m.geom.g + m.random_field(3, 2, amplitude=0.05).full()
    a = cv.build_geometry(g, "spectral", grid=m.grid)
    b = cv.build_geometry(1.7 * g, "spectral", grid=m.grid)
    ra, rb = E.nu_entropy(a), E.nu_entropy(b)
    assert ra.converged and rb.converged
    assert rb.nu == pytest.approx(ra.nu, abs=1e-9)
    assert rb.tau_star == pytest.approx(1.7 * ra.tau_star, rel=1e-8)


def _rotated(emb, Q):
    def rot(grid, first=0):
        X, J = emb(grid, first)
        return np.einsum("ab,b...->a...", Q, X), np.einsum("ab,bi...->ai...", Q, J)
    return rot


@settings(max_examples=2, deadline=None)
@given(st.integers(0, 1000))
def test_nu_rotation_invariant(seed):
    # pulling a perturbation back by an ambient rotation gives an isometric metric
    m = models.round_sphere2(1.0, 32, 64, "spectral")
    Q = Rotation.random(random_state=seed).as_matrix()
    h = G.random_smooth_field(seed, 2, m.grid, m.embedding, amplitude=0.05).full()
    hr = G.random_smooth_field(seed, 2, m.grid, _rotated(m.embedding, Q), amplitude=0.05).full()
    nus = [E.nu_entropy(cv.build_geometry(m.geom.g + x, "spectral", grid=m.grid)).nu
           for x in (h, hr)]
    assert nus[1] == pytest.approx(nus[0], abs=1e-8)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.floats(0.3, 0.8))
def test_nu_below_admissible_pairs(seed, tau):
    m = models.round_sphere2(1.0, 16, 32)
    nu = E.nu_entropy(m.geom).nu
    f = m.random_field(seed, 0, amplitude=0.5).full()
    # shift f so that the normalization constraint holds
    mass = (4 * np.pi * tau) ** -1 * np.sum(np.exp(-f) * m.geom.dV)
    f = f + np.log(mass)
    assert E.w_functional(m.geom, f, tau) >= nu - 1e-12


def test_bracket_exhaustion_flagged(sphere):
    res = E.nu_entropy(sphere.geom, E.SolverConfig(tau_bracket=(0.6, 1.0)))
    assert not res.converged
    assert any("bracket" in fl for fl in res.flags)


def test_result_json(sphere):
    import json
    d = json.loads(E.nu_entropy(sphere.geom).to_json())
    assert d["schema_version"] == 1 and d["qualifier"] == "local"
    assert set(d) >= {"nu", "tau", "residual_EL", "iterations", "backend", "grid"}


def test_config_from_mapping():
    cfg = E.SolverConfig.from_mapping({"tau_bracket": "0.1, 2", "initializers": "constant",
                                       "max_inner": "10", "tol_el": "1e-5"})
    assert cfg.tau_bracket == (0.1, 2.0) and cfg.initializers == ("constant",)
    assert cfg.max_inner == 10 and cfg.tol_el == 1e-5
    with pytest.raises(ValueError):
        E.SolverConfig(tau_bracket=(2.0, 1.0))
    with pytest.raises(ValueError):
        E.nu_entropy(models.round_sphere2(1.0, 8, 16).geom, E.SolverConfig(initializers=("bogus",)))
