import csv
import io
import json

import numpy as np
import pytest

from nuentropy import curvature as cv
from nuentropy import identities as I
from nuentropy import models
from nuentropy import stability as S


@pytest.fixture(scope="module")
def sph(sphere):
    return I.from_model(sphere)


def test_vhat_of_metric_vanishes(sph):
    v = S.solve_vhat(sph, sph.geom.g)
    assert np.abs(v.vhat.full()).max() < 1e-12
    assert v.converged and v.residual_pde < 1e-10


def test_vhat_random(sphere, sph):
    h = sphere.random_field(0, 2)
    v = S.solve_vhat(sph, h)
    assert v.converged and v.residual_pde < 1e-10 and v.mean_constraint < 1e-12


def test_uncertified_rejected(sphere):
    t = I.certify(sphere.geom, sphere.f, 1.0)
    with pytest.raises(S.StabilityError):
        S.stability_operator(t, sphere.geom.g)
    with pytest.raises(S.StabilityError):
        S.spectrum_ker_divf(t)


@pytest.mark.parametrize("name", ["sphere", "s2xs2"])
def test_null_directions(name, request):
    model = request.getfixturevalue(name)
    t = I.from_model(model)
    for h in (model.geom.g, model.geom.ricci):
        assert cv.sup_norm(model.geom, S.stability_operator(t, h)) < 1e-8


def test_ricci_eigen_relation(sph):
    Lrc = S.lichnerowicz_f(sph, sph.geom.ricci).full()
    assert cv.sup_norm(sph.geom, Lrc - sph.geom.ricci / (2 * sph.tau)) < 1e-8


def test_einstein_operator_matches(sphere, sph):
    for seed in range(2):
        h = sphere.random_field(seed, 2)
        a = S.einstein_operator(sphere.geom, sph.tau, h).full()
        b = S.stability_operator(sph, h).full()
        assert cv.sup_norm(sphere.geom, a - b) < 1e-9


def test_einstein_operator_rejects(torus):
    with pytest.raises(S.StabilityError):
        S.einstein_operator(torus.geom, 1.0, torus.geom.g)


def test_projection(sphere, sph):
    h = sphere.random_field(2, 2).full()
    P = S.project_ker_divf(sph, h)
    assert P.converged and P.divergence_residual < 1e-10
    P2 = S.project_ker_divf(sph, P.field)
    n = cv.weighted_l2(sphere.geom, P.field.full())
    assert cv.weighted_l2(sphere.geom, P2.field.full() - P.field.full()) < 1e-10 * n
    Pr = S.project_ker_divf(sph, sphere.geom.ricci)
    assert cv.sup_norm(sphere.geom, Pr.field.full() - sphere.geom.ricci) < 1e-10
    g = models.perturbation("lie_derivative", sphere, seed=3).full()
    Pg = S.project_ker_divf(sph, g)
    assert cv.weighted_l2(sphere.geom, Pg.field.full()) < 1e-10 * cv.weighted_l2(sphere.geom, g)


def test_gauge_is_null_for_second_variation(sphere, sph):
    h = models.perturbation("lie_derivative", sphere, seed=1)
    assert abs(S.second_variation(sph, h)) < 1e-10


def test_conformal_second_variation_sign(sphere, sph):
    # conformal directions are not in ker div_f but the form must stay non-positive on S^2
    for seed in range(3):
        h = models.perturbation("conformal", sphere, seed=seed)
        assert S.second_variation(sph, h) <= 1e-12


def test_sphere_spectrum(sph):
    r = S.spectrum_ker_divf(sph, k=8)
    assert r.multiplicities[0] == (pytest.approx(1.0, abs=1e-10), 1)
    assert r.multiplicities[1] == (pytest.approx(-2.0, abs=1e-10), 5)
    assert r.contains_ricci_direction and r.ricci_mu == pytest.approx(1.0)
    assert r.verdict == "stable-necessary-condition-pass"
    assert max(p.residual for p in r.pairs) < 1e-10
    assert max(p.divergence_residual for p in r.pairs) < 1e-10
    assert all(p.lambda_geom == -p.mu for p in r.pairs)
    assert len(r.values) >= 8


def test_spectrum_scaled_sphere():
    m = models.round_sphere2(np.sqrt(2), 12, 24)
    r = S.spectrum_ker_divf(I.from_model(m), k=4)
    assert r.multiplicities[0][0] == pytest.approx(0.5, abs=1e-10)
    assert r.verdict == "stable-necessary-condition-pass"


def test_spectrum_outputs(sph):
    r = S.spectrum_ker_divf(sph, k=4)
    d = json.loads(r.to_json())
    assert d["schema_version"] == 1 and "lambda_geom" in d["convention"]
    rows = list(csv.DictReader(io.StringIO(r.to_csv())))
    assert len(rows) == len(r.pairs)
    assert float(rows[0]["mu"]) == pytest.approx(1.0)


def _synthetic(mults, ricci=True):
    pairs = [S.SpectrumPair(m, k, {}, np.zeros(1), 0.0, 0.0, 1.0 if (i == 0 and ricci) else 0.0)
             for i, (m, k) in enumerate(mults)]
    return S.SpectrumReport(pairs, mults, ricci, mults[0][0] if ricci else None, 1.0, 1e-3 / 2, 0.0)


def test_verdict_rules():
    assert S.theorem13_verdict(_synthetic([(0.5, 1), (-1.0, 5)])).verdict == \
        "stable-necessary-condition-pass"
    v = S.theorem13_verdict(_synthetic([(0.4, 1), (-1.0, 5)]))
    assert v.verdict == "inconclusive" and not v.necessary_condition_holds
    assert any("Ricci eigenvalue mismatch" in r for r in v.reasons)
    assert S.theorem13_verdict(_synthetic([(0.5, 2), (-1.0, 5)])).verdict == "unstable"
    assert S.theorem13_verdict(_synthetic([(0.7, 1), (0.5, 1)])).verdict == "unstable"
    assert S.theorem13_verdict(_synthetic([(0.5, 1), (0.2, 3)])).verdict == "unstable"
    assert S.theorem13_verdict(_synthetic([(0.5, 1), (-1.0, 5)], ricci=False)).verdict == \
        "inconclusive"
    v = S.theorem13_verdict(_synthetic([(0.5, 1)]))
    assert v.verdict == "inconclusive" and any("k too small" in r for r in v.reasons)


def test_product_instability(s2xs2):
    t = I.from_model(s2xs2)
    h = models.perturbation("factor_difference", s2xs2)
    Nh = S.stability_operator(t, h).full()
    assert cv.sup_norm(s2xs2.geom, Nh - h.full()) < 1e-10
    assert S.rayleigh_quotient(t, h) == pytest.approx(1 / (2 * t.tau), abs=1e-6)
    r = S.spectrum_ker_divf(t, k=4)
    assert r.multiplicities[0] == (pytest.approx(1.0, abs=1e-10), 2)
    assert r.contains_ricci_direction
    v = S.theorem13_verdict(r, t, s2xs2)
    assert v.verdict == "unstable" and v.witness == "factor_difference"
    assert v.witness_quotient == pytest.approx(1.0, abs=1e-6)


def test_projection_acts_as_field(sphere, sph):
    P = S.project_ker_divf(sph, sphere.random_field(1, 2))
    assert P.full().shape == sphere.geom.g.shape
    assert P.rank == 2
