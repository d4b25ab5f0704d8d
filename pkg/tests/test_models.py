import numpy as np
import pytest

from nuentropy import curvature as cv
from nuentropy import models


def test_unit_sphere_data(sphere):
    assert sphere.tau == 0.5
    assert float(sphere.f.full()[0, 0]) == pytest.approx(np.log(2), abs=1e-15)
    assert sphere.nu == pytest.approx(np.log(2) - 1, abs=1e-15)
    geom, f, tau = sphere
    assert geom.volume() == pytest.approx(4 * np.pi, rel=1e-14)


def test_radius_scaling():
    m = models.round_sphere2(np.sqrt(2), 12, 24)
    assert m.tau == pytest.approx(1.0)
    assert np.abs(m.geom.scalar - 1).max() < 1e-13


def test_product_data(s2xs2):
    assert s2xs2.tau == 0.5 and s2xs2.n == 4
    assert s2xs2.geom.volume() == pytest.approx(16 * np.pi**2, rel=1e-13)
    assert float(s2xs2.f.full().flat[0]) == pytest.approx(np.log(4), abs=1e-14)
    assert s2xs2.nu == pytest.approx(2 * np.log(2) - 2, abs=1e-14)


def test_product_tau_mismatch():
    a = models.round_sphere2(1.0, 8, 16)
    b = models.round_sphere2(np.sqrt(2), 8, 16)
    with pytest.raises(models.ModelError, match="0.5 vs 1"):
        models.product(a, b)


def test_factor_difference(s2xs2):
    h = models.perturbation("factor_difference", s2xs2)
    geom = s2xs2.geom
    assert np.abs(cv.trace(geom, h)).max() < 1e-14
    assert np.abs(cv.divergence(geom, h).full()).max() < 1e-12
    with pytest.raises(models.ModelError):
        models.perturbation("factor_difference", models.round_sphere2(1.0, 8, 16))


def test_perturbation_catalog(sphere):
    geom = sphere.geom
    assert np.array_equal(models.perturbation("metric_itself", sphere).full(), geom.g)
    assert np.allclose(models.perturbation("ricci_tensor", sphere).full(), geom.ricci)
    killing = models.perturbation("lie_derivative", sphere, X="killing")
    assert np.abs(killing.full()).max() < 1e-12
    w = sphere.random_field(2, 1)
    lie = models.perturbation("lie_derivative", sphere, X=w)
    assert np.allclose(lie.full(), -2 * cv.div_f_dagger(geom, w).full())
    u = sphere.random_field(3, 0)
    conf = models.perturbation("conformal", sphere, u=u)
    assert np.allclose(conf.full(), u.full() * geom.g)
    r = models.perturbation("random_smooth", sphere, seed=4)
    assert np.array_equal(r.components, sphere.random_field(4, 2).components)
    with pytest.raises(models.ModelError):
        models.perturbation("bogus", sphere)


@pytest.mark.parametrize("desc,shape", [
    ("sphere2:r=1:grid=12x24", (12, 24)),
    ("torus2:grid=16x16", (16, 16)),
    ("product:sphere2(r=1)xsphere2(r=1):grid=8x16x6x12", (8, 16, 6, 12)),
])
def test_descriptors(desc, shape):
    assert models.parse_descriptor(desc).grid.shape == shape


@pytest.mark.parametrize("desc", ["cp2:grid=8x8", "sphere2:grid=8x8x8", "sphere2:r=x",
                                  "product:sphere2(r=1)xsphere2(r=2):grid=8x16x8x16"])
def test_bad_descriptors(desc):
    with pytest.raises(models.ModelError):
        models.parse_descriptor(desc)


def test_torus_is_not_shrinker(torus):
    assert not torus.is_shrinker and torus.nu is None


def test_scaling_keeps_shrinker_property():
    a = models.round_sphere2(1.0, 12, 24)
    b = models.round_sphere2(np.sqrt(1.7), 12, 24)
    assert b.tau / a.tau == pytest.approx(1.7)
    res = b.geom.ricci + cv.hessian(b.geom, b.f).full() - b.geom.g / (2 * b.tau)
    assert np.abs(res).max() < 1e-12
