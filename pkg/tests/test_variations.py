import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nuentropy import curvature as cv
from nuentropy import identities as I
from nuentropy import models
from nuentropy import variations as V
from nuentropy.entropy import SolverConfig

coef = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(coef, coef, coef, coef)
def test_richardson_exact_on_cubics(a, b, c, d):
    est = V.richardson(lambda s: a + b * s + c * s * s + d * s ** 3)
    assert est.value == pytest.approx(b, abs=1e-9 * (1 + abs(b) + abs(d)))


@settings(max_examples=40, deadline=None)
@given(coef, coef, coef, coef)
def test_richardson_second_derivative_on_quartics(a, b, c, e):
    est = V.richardson(lambda s: a + b * s + c * s * s + e * s ** 4, order=2)
    assert est.value == pytest.approx(2 * c, abs=1e-6 * (1 + abs(c) + abs(e)))


def test_richardson_flags_noise():
    rng = np.random.default_rng(0)
    assert V.richardson(lambda s: rng.standard_normal()).flagged


def test_richardson_validates():
    with pytest.raises(ValueError):
        V.richardson(lambda s: s, steps=(1e-2, 5e-3))
    with pytest.raises(ValueError):
        V.richardson(lambda s: s, order=3)


def test_constant_potential_reductions(sphere):
    geom = sphere.geom
    h = sphere.random_field(0, 2).full()
    phi = sphere.random_field(1, 0).full()
    f = np.full(geom.grid.shape, 0.3)
    assert np.allclose(V.delta_hessian_f(geom, f, h, phi).full(), cv.hessian(geom, phi), atol=1e-12)
    assert np.allclose(V.delta_laplacian_f(geom, f, h, phi).full(), cv.laplacian(geom, phi), atol=1e-12)
    assert np.abs(V.delta_gradsq(geom, f, h, np.zeros_like(phi)).full()).max() < 1e-14


def test_metric_direction(sphere):
    geom = sphere.geom
    t = I.from_model(sphere)
    assert cv.sup_norm(geom, V.delta_ricci(geom, geom.g)) < 1e-10
    assert np.abs(V.delta_scalar_generic(geom, geom.g).full() + geom.scalar).max() < 1e-10
    assert V.delta_tau(t, geom.g) == pytest.approx(t.tau, abs=1e-10)


def test_ricci_scale_invariant_off_shrinker(sphere_spectral):
    k = sphere_spectral.random_field(4, 2, amplitude=0.1).full()
    geom = cv.build_geometry(sphere_spectral.geom.g + k, "spectral", grid=sphere_spectral.grid)
    assert cv.sup_norm(geom, V.delta_ricci(geom, geom.g)) < 1e-9


def test_gauge_direction_sphere(sphere):
    # h = L_X g: delta Rc = L_X Rc = h on the unit sphere, delta R = X(R) = 0
    geom = sphere.geom
    h = models.perturbation("lie_derivative", sphere, seed=2).full()
    assert cv.weighted_l2(geom, V.delta_ricci(geom, h).full() - h) < 1e-10 * cv.weighted_l2(geom, h)
    assert np.abs(V.delta_scalar_generic(geom, h).full()).max() < 1e-9


def test_factor_difference_keeps_tau(s2xs2):
    t = I.from_model(s2xs2)
    h = models.perturbation("factor_difference", s2xs2)
    assert abs(V.delta_tau(t, h)) < 1e-12


def test_delta_tau_needs_shrinker(torus):
    t = I.certify(torus.geom, np.zeros(torus.grid.shape), 1.0)
    with pytest.raises(ValueError):
        V.delta_tau(t, torus.geom.g)


def test_shrinker_scalar_form(sphere):
    t = I.from_model(sphere)
    h = sphere.random_field(3, 2).full()
    a = V.delta_scalar_curvature(t, h).full()
    b = V.delta_scalar_generic(sphere.geom, h).full()
    assert np.abs(a - b).max() < 1e-10
    with pytest.warns(V.AdvisoryWarning):
        V.delta_scalar_curvature(I.certify(sphere.geom, sphere.f, 1.0), h)


def test_composition_identity(sphere):
    t = I.from_model(sphere)
    for seed in range(3):
        h = sphere.random_field(seed, 2).full()
        phi = sphere.random_field(seed + 5, 0).full()
        assert V.composition_residual(t, h, phi) < 1e-10


def test_first_variation_vanishes_at_shrinker(sphere):
    h = sphere.random_field(0, 2)
    entropy_free = V.first_variation_from_pair(sphere.geom, sphere.f, sphere.tau, h)
    assert abs(entropy_free) < 1e-12


def test_first_variation_requires_convergence(sphere):
    with pytest.raises(V.SolverError):
        V.first_variation_nu(sphere.geom, sphere.geom.g,
                             config=SolverConfig(max_inner=1, max_outer=1, tol_el=1e-30))


def test_delta_tau_against_tau_star(sphere):
    t = I.from_model(sphere)
    h = sphere.random_field(1, 2).full()
    est = V.fd_functional_derivative("tau", sphere.geom, h)
    assert V.delta_tau(t, h) == pytest.approx(est.value, rel=1e-3)


def test_oracle_matrix_subset():
    m = V.oracle_matrix(seeds=[0], include_nu=False)
    formulas = {r.formula for r in m.rows}
    assert {"delta Rc", "delta R", "delta Hess f", "delta Lap f", "delta |df|^2",
            "composition identity"} <= formulas
    assert m.passed, m.to_csv()
    assert m.to_csv().splitlines()[0].startswith("formula,background")
    assert m.notes


def test_fd_named_validates(sphere):
    with pytest.raises(ValueError):
        V.fd_functional_derivative("bogus", sphere.geom, sphere.geom.g)


def test_pointwise_formula_off_sphere_warns_nothing(torus):
    h = torus.random_field(0, 2).full()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        V.delta_ricci(torus.geom, h)


def test_shrinker_scalar_form_positional(sphere):
    h = sphere.random_field(3, 2).full()
    a = V.delta_scalar_curvature(sphere.geom, sphere.f, sphere.tau, h).full()
    b = V.delta_scalar_curvature(I.from_model(sphere), h).full()
    assert np.array_equal(a, b)
