import json

import numpy as np
import pytest

from nuentropy import curvature as cv
from nuentropy import identities as I
from nuentropy import models


def test_sphere_residual_zero(sphere):
    t = I.from_model(sphere)
    assert t.certified and t.residual_soliton < 1e-14


def test_wrong_tau_residual_is_half_metric(sphere):
    geom, f, _ = sphere
    res = I.soliton_residual(geom, f, 1.0).full()
    assert np.abs(res - 0.5 * geom.g).max() < 1e-14
    t = I.certify(geom, f, 1.0)
    assert not t.certified
    assert t.residual_soliton == pytest.approx(0.5 * np.sqrt(2), rel=1e-12)


def test_product_certified(s2xs2):
    assert I.from_model(s2xs2).certified


def test_certification_scale_covariant():
    m = models.round_sphere2(1.0, 12, 24, "spectral")
    big = models.round_sphere2(np.sqrt(3.0), 12, 24, "spectral")
    assert I.certify(big.geom, m.f, 3 * m.tau).certified
    assert not I.certify(big.geom, m.f, m.tau).certified


@pytest.mark.parametrize("name", ["sphere", "s2xs2"])
def test_suite_passes_analytic(name, request):
    model = request.getfixturevalue(name)
    rep = I.identity_suite(I.from_model(model))
    assert rep.passed and not rep.advisory
    assert len(rep.identities) == 8
    assert all(r.sup >= 0 and r.l2 >= 0 for r in rep.identities)
    assert rep.consistency_6_7 < 1e-12


def test_suite_spectral_sphere(sphere_spectral):
    rep = I.identity_suite(I.from_model(sphere_spectral))
    assert rep.passed, rep.table()


def test_nu_shift_moves_identity_two(sphere):
    t = I.from_model(sphere)
    t.nu += 1e-3
    rep = I.identity_suite(t)
    assert rep["2"].sup == pytest.approx(1e-3 / t.tau, rel=1e-9)
    assert not rep["2"].passed and rep["1"].passed


def test_uncertified_triple_is_advisory(sphere):
    rep = I.identity_suite(I.certify(sphere.geom, sphere.f, 1.0))
    assert rep.advisory and "advisory" in rep.table()


def test_fd_identities_second_order():
    reps = []
    for n in (24, 48):
        m = models.round_sphere2(1.0, n, 2 * n, "finite_difference", fd_order=2)
        reps.append(I.identity_suite(I.from_model(m)))
    for a, b in zip(*[r.identities for r in reps]):
        if a.sup < 1e-8:
            # vanishes by symmetry on the round sphere; only roundoff remains
            assert b.sup < 1e-8
        else:
            assert 3.5 <= a.sup / b.sup <= 4.5, a.name
    assert reps[1].passed


def test_report_json(sphere):
    d = json.loads(I.identity_suite(I.from_model(sphere)).to_json())
    assert d["schema_version"] == 1 and len(d["identities"]) == 8
    assert [r["tag"] for r in d["identities"]] == [str(k) for k in range(1, 9)]


def test_lambda1_sphere(sphere):
    r = I.lambda1_check(I.from_model(sphere))
    assert r.lambda1 == pytest.approx(2.0, rel=1e-2)
    assert r.multiplicity == 3 and r.margin == pytest.approx(1.0, rel=1e-2)
    assert not r.flags
    assert r.values[:4] == pytest.approx([2, 2, 2, 6], rel=1e-8)


def test_lambda1_two_resolutions():
    vals = [I.lambda1_check(I.from_model(models.round_sphere2(1.0, n, 2 * n))).lambda1
            for n in (12, 24)]
    assert vals[0] == pytest.approx(vals[1], rel=1e-10)


def test_lambda1_product(s2xs2):
    r = I.lambda1_check(I.from_model(s2xs2))
    assert r.lambda1 == pytest.approx(2.0, rel=1e-2)
    assert r.multiplicity == 6 and r.margin == pytest.approx(1.0, rel=1e-2)


def test_lambda1_scaled_sphere():
    r = I.lambda1_check(I.from_model(models.round_sphere2(np.sqrt(2), 16, 32)))
    assert r.lambda1 == pytest.approx(1.0, rel=1e-2)
    assert r.margin == pytest.approx(0.5, rel=1e-2)


def test_lambda1_fd_backend():
    m = models.round_sphere2(1.0, 24, 48, "finite_difference")
    r = I.lambda1_check(I.from_model(m))
    assert r.lambda1 == pytest.approx(2.0, rel=1e-2) and r.multiplicity == 3
