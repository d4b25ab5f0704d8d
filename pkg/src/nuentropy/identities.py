"""Shrinking-soliton certification and the pointwise/integral identity suite.

Every identity is written for general tau (the textbook forms take tau = 1).
The curvature term of the Ricci evolution identity is expressed through the
action ``Rm(h)_ik = R_ijkl h^{jl}`` of :mod:`nuentropy.curvature`, so that on a
shrinker

    Delta_f Rc + 2 Rm(Rc) = Rc / tau.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import curvature as cv
from . import galerkin as GL
from .grids import ScalarField, SymTensorField


def _arr(x):
    return x.full() if hasattr(x, "full") else np.asarray(x)


def default_tolerance(geom: cv.GeometryState) -> float:
    """Certification and identity tolerance for a backend.

    Closed-form curvature: 1e-10.  Curvature differentiated spectrally from g:
    1e-9 (fourth derivatives of the metric enter the Ricci identities).
    Finite differences: a multiple of h^2.
    """
    if geom.backend == "analytic":
        return 1e-10
    if geom.quadrature == "spectral":
        return 1e-9
    h = max(ax.spacing for ax in geom.grid.axes)
    return 10 * h * h * max(1.0, float(np.max(np.abs(geom.scalar))))


@dataclass
class SolitonTriple:
    geom: cv.GeometryState
    f: ScalarField
    tau: float
    nu: float
    residual_soliton: float
    certified: bool
    tolerance: float

    def __iter__(self):
        yield from (self.geom, self.f, self.tau)

    @property
    def normalization(self) -> float:
        return (4 * np.pi * self.tau) ** (-self.geom.n / 2)


def soliton_residual(geom, f=None, tau=None) -> SymTensorField:
    """Rc + Hess f - g / (2 tau); accepts ``(geom, f, tau)`` or a triple."""
    if f is None:
        geom, f, tau = geom
    if tau <= 0:
        raise ValueError("tau must be positive")
    f = _arr(f)
    res = geom.ricci + cv.hessian(geom, f) - geom.g / (2 * tau)
    return SymTensorField.from_full(geom.grid, res)


def certify(geom, f, tau: float, nu: float | None = None,
            tol: float | None = None) -> SolitonTriple:
    """Build a :class:`SolitonTriple`.

    ``nu`` defaults to W(g, f, tau), which equals nu for a normalized shrinker
    potential.
    """
    from .entropy import w_functional

    f = _arr(f)
    tol = default_tolerance(geom) if tol is None else tol
    res = cv.sup_norm(geom, soliton_residual(geom, f, tau))
    if nu is None:
        nu = w_functional(geom, f, tau)
    return SolitonTriple(geom, ScalarField(geom.grid, f[None]), float(tau), float(nu),
                         float(res), bool(res <= tol), float(tol))


def from_model(model, tol: float | None = None) -> SolitonTriple:
    """Certify a library model with its closed-form potential and nu."""
    return certify(model.geom, model.f, model.tau, model.nu, tol)


@dataclass
class IdentityResult:
    name: str
    tag: str
    sup: float
    l2: float
    passed: bool

    def to_dict(self):
        return {"name": self.name, "tag": self.tag, "sup": self.sup, "l2": self.l2,
                "pass": self.passed}


@dataclass
class IdentityReport:
    identities: list[IdentityResult]
    tolerance: float
    advisory: bool
    consistency_6_7: float
    backend: str = ""
    grid: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.identities)

    def __getitem__(self, key):
        for r in self.identities:
            if r.tag == key or r.name == key:
                return r
        raise KeyError(key)

    def to_dict(self) -> dict:
        return {"schema_version": 1, "tolerance": self.tolerance, "advisory": self.advisory,
                "passed": self.passed, "consistency_6_7": self.consistency_6_7,
                "backend": self.backend, "grid": self.grid,
                "identities": [r.to_dict() for r in self.identities]}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def table(self) -> str:
        lines = [f"{'#':<4}{'identity':<40}{'sup':>12}{'weighted L2':>14}  pass"]
        for r in self.identities:
            lines.append(f"{r.tag:<4}{r.name:<40}{r.sup:12.3e}{r.l2:14.3e}  "
                         f"{'yes' if r.passed else 'NO'}")
        if self.advisory:
            lines.append("advisory: triple not certified as a shrinker")
        return "\n".join(lines)


IDENTITY_NAMES = (
    "trace: R + Lap f = n/(2 tau)",
    "R + |df|^2 = (f - nu)/tau",
    "weighted integral of tau(|df|^2 + R)",
    "dR = 2 Rc(grad f)",
    "Lap_f Rc + 2 Rm(Rc) = Rc/tau",
    "Lap_f R = R/tau - 2|Rc|^2",
    "2 int |Rc|^2 = (1/tau) int R",
    "div_f Rc = 0",
)


def identity_residuals(geom, f, tau, nu):
    """The eight residuals: fields (pointwise identities) or scalars (integral ones)."""
    f = _arr(f)
    n = geom.n
    R, Rc = geom.scalar, geom.ricci
    norm = (4 * np.pi * tau) ** (-n / 2)
    w = norm * np.exp(-f) * geom.dV
    gradsq = cv.grad_norm_sq(geom, f)
    df = cv.gradient(geom, f)
    rc_sq = np.einsum("ij...,ij...->...", cv.raise_both(geom, Rc), Rc)
    out = [
        R + cv.laplacian(geom, f) - n / (2 * tau),
        R + gradsq - (f - nu) / tau,
        float(np.sum(tau * (gradsq + R) * w) - n / 2),
        cv.gradient(geom, R) - 2 * np.einsum("ij...,jk...,k...->i...", Rc, geom.g_inv, df),
        cv.tensor_laplacian_f(geom, f, Rc) + 2 * cv.rm_action(geom, Rc) - Rc / tau,
        cv.laplacian_f(geom, f, R) - R / tau + 2 * rc_sq,
        float(np.sum((2 * rc_sq - R / tau) * w)),
        cv.div_f(geom, f, Rc),
    ]
    return out


def identity_suite(triple: SolitonTriple, tol: float | None = None) -> IdentityReport:
    geom, f, tau = triple
    f = _arr(f)
    tol = triple.tolerance if tol is None else tol
    res = identity_residuals(geom, f, tau, triple.nu)
    norm = triple.normalization
    results = []
    for k, (name, r) in enumerate(zip(IDENTITY_NAMES, res), start=1):
        if np.isscalar(r):
            sup = l2 = abs(float(r))
        else:
            sup = cv.sup_norm(geom, r)
            l2 = cv.weighted_l2(geom, r, f) * np.sqrt(norm)
        results.append(IdentityResult(name, str(k), sup, l2, bool(sup <= tol)))
    # integrating identity 6 against the weighted measure must reproduce identity 7
    integrated6 = float(np.sum(res[5] * norm * np.exp(-f) * geom.dV))
    consistency = abs(integrated6 - res[6])
    return IdentityReport(results, tol, not triple.certified, consistency, geom.backend,
                          geom.grid.describe())


@dataclass
class Lambda1Result:
    lambda1: float
    margin: float
    multiplicity: int
    values: list
    residual: float
    flags: list

    def __iter__(self):
        yield from (self.lambda1, self.margin)

    def to_dict(self):
        return {"schema_version": 1, "lambda1": self.lambda1, "margin": self.margin,
                "multiplicity": self.multiplicity, "values": self.values,
                "residual": self.residual, "flags": self.flags}


def lambda1_check(triple: SolitonTriple, k: int = 6, cluster_tol: float = 1e-2,
                  degree: int | None = None, residual_tol: float = 1e-8) -> Lambda1Result:
    """Smallest nonzero eigenvalue of -Delta_f on weighted mean-zero functions.

    The ``k`` lowest eigenvalues (with multiplicity) are reported; the
    multiplicity of lambda_1 counts eigenvalues within ``cluster_tol``
    (relative).
    """
    geom, f, tau = triple
    flags = [] if triple.certified else ["triple not certified"]
    pairs, asym = GL.sector_spectrum(geom, _arr(f), 0,
                                     lambda sg, fa, u: -cv.laplacian_f(sg, fa, u),
                                     degree=degree, mean_zero=True)
    if not pairs:
        raise ValueError("empty trial space")
    pairs = pairs[::-1]
    lam1 = pairs[0].value
    mult = sum(p.weight for p in pairs if abs(p.value - lam1) <= cluster_tol * abs(lam1))
    values = []
    for p in pairs:
        values += [p.value] * p.weight
        if len(values) >= k:
            break
    res = max(p.residual for p in pairs
              if abs(p.value - lam1) <= cluster_tol * abs(lam1))
    if res > residual_tol:
        flags.append(f"eigenpair residual {res:.2e} above {residual_tol:.0e}")
    if asym > 1e-8:
        flags.append(f"projected operator asymmetry {asym:.2e}")
    margin = lam1 - 1 / (2 * tau)
    if margin <= 0:
        flags.append("lambda_1 does not exceed 1/(2 tau)")
    return Lambda1Result(float(lam1), float(margin), int(mult), values[:k], float(res), flags)
