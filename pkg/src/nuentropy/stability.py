"""Second variation of nu at a shrinker: the stability operator, the Einstein
specialization, the weighted Lichnerowicz-type operator L_f = 1/2 Delta_f + Rm,
the projection onto ker div_f, its spectrum there, and the spectral necessary
condition for linear stability.

Sign convention: eigenvalues are stored directly, L_f h = mu h.  Reports also
carry lambda_geom = -mu, the convention in which the Ricci direction has
eigenvalue -1/(2 tau).
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import curvature as cv
from . import galerkin as GL
from .grids import ScalarField, SymTensorField, VectorField
from .identities import SolitonTriple, lambda1_check
from .solvers import KrylovConfig, LinearOperatorHandle, cluster, krylov_solve

log = logging.getLogger(__name__)

VERDICTS = ("stable-necessary-condition-pass", "unstable", "inconclusive")
CONVENTION_NOTE = ("mu: direct convention L_f h = mu h (Ricci direction mu = 1/(2 tau)); "
                   "lambda_geom = -mu: geometric convention L_f h = -lambda h "
                   "(Ricci direction lambda = -1/(2 tau))")


class StabilityError(ValueError):
    """Input outside the hypotheses of an operator (uncertified, non-Einstein, ...)."""


def _arr(x):
    return x.full() if hasattr(x, "full") else np.asarray(x)


def _weighted(geom, f):
    return np.exp(-_arr(f)) * geom.dV


def _inner_f(geom, f, a, b, rank):
    """(a, b)_f on the grid (conjugate-linear in a)."""
    w = _weighted(geom, f)
    if rank == 0:
        return complex(np.sum(np.conj(a) * b * w))
    if rank == 1:
        return complex(np.sum(np.conj(a) * np.einsum("ij...,j...->i...", geom.g_inv, b) * w))
    return complex(np.sum(np.conj(a) * cv.raise_both(geom, b) * w))


def _require_certified(triple: SolitonTriple, what: str):
    if not triple.certified:
        raise StabilityError(f"{what} needs a certified shrinker "
                             f"(soliton residual {triple.residual_soliton:.2e})")


# ---------------------------------------------------------------------------
# the scalar constraint equation

@dataclass
class VhatSolution:
    vhat: ScalarField
    residual_pde: float
    mean_constraint: float
    iterations: int = 0
    converged: bool = True
    flags: list = field(default_factory=list)


class _ScalarSystem:
    """-(Delta_f + 1/(2 tau)) in a weighted-orthonormal band-limited basis."""

    def __init__(self, geom, f, tau, degree=None):
        w = _weighted(geom, f)
        cands = GL.candidates(geom.grid, 0, degree)[:, 0]
        real = np.concatenate([cands.real, cands.imag])
        real = real[np.linalg.norm(real.reshape(len(real), -1), axis=1) > 0]
        B, _ = GL.orthonormal_basis(real, None, w, 0)
        self.B = B.real
        nb = len(self.B)
        flat = self.B.reshape(nb, -1)
        LB = np.stack([cv.laplacian_f(geom, f, b) for b in self.B]).reshape(nb, -1)
        A = -(flat * w.reshape(-1)) @ LB.T - np.eye(nb) / (2 * tau)
        self.A = 0.5 * (A + A.T)
        self.flat = flat
        self.w = w.reshape(-1)
        ones = flat @ self.w
        self.const = ones / np.linalg.norm(ones)

    def project(self, c):
        return c - (self.const @ c) * self.const


def _system(geom, f, tau, degree=None):
    key = ("vhat", float(tau), degree, float(np.sum(_arr(f) * geom.dV)))
    if key not in geom._cache:
        geom._cache[key] = _ScalarSystem(geom, _arr(f), tau, degree)
    return geom._cache[key]


def _solve_constraint(geom, f, tau, source, tol=1e-12, degree=None):
    """(Delta_f + 1/(2 tau)) v = source with weighted mean zero."""
    sys_ = _system(geom, f, tau, degree)
    b = -sys_.flat @ (source.reshape(-1) * sys_.w)
    op = LinearOperatorHandle(lambda c: sys_.A @ c, b.shape, project=sys_.project,
                              description="-(Delta_f + 1/(2 tau)) on trial space")
    res = krylov_solve(op, b, config=KrylovConfig(tol=tol, max_iter=10 * len(b) + 50))
    v = (sys_.flat.T @ res.x).reshape(geom.grid.shape)
    pde = cv.laplacian_f(geom, f, v) + v / (2 * tau) - source
    # relative to the size of the terms, floored at 1 so that a vanishing source reports absolutely
    lap = cv.laplacian_f(geom, f, v)
    scale = max(float(np.max(np.abs(source)) + np.max(np.abs(lap)) + np.max(np.abs(v)) / (2 * tau)), 1.0)
    mean = abs(float(np.sum(v * sys_.w.reshape(geom.grid.shape))))
    flags = [] if res.converged else [f"Krylov: {res.flag or 'not converged'} ({res.residual:.1e})"]
    return VhatSolution(ScalarField(geom.grid, v[None]), float(np.max(np.abs(pde)) / scale),
                        mean, res.iterations, res.converged, flags)


def solve_vhat(triple: SolitonTriple, h, tol: float = 1e-12, degree: int | None = None,
               check_margin: bool = True) -> VhatSolution:
    """Weighted-mean-zero solution of Delta_f v + v/(2 tau) = div_f div_f h.

    Solved by CG in a weighted-orthonormal band-limited scalar basis, in which
    the operator is positive definite once lambda_1(-Delta_f) > 1/(2 tau).
    ``residual_pde`` is the grid residual relative to the source.
    """
    geom, f, tau = triple
    _require_certified(triple, "solve_vhat")
    if check_margin:
        key = ("lambda1", degree)
        if key not in geom._cache:
            geom._cache[key] = lambda1_check(triple, degree=degree)
        lam = geom._cache[key]
        if lam.margin <= 0:
            raise StabilityError(f"lambda_1 = {lam.lambda1:.6g} does not exceed 1/(2 tau)")
    f = _arr(f)
    source = cv.div_f(geom, f, cv.div_f(geom, f, _arr(h)))
    return _solve_constraint(geom, f, tau, source, tol, degree)


# ---------------------------------------------------------------------------
# operators

def lichnerowicz_f(triple, h) -> SymTensorField:
    """L_f h = 1/2 Delta_f h + Rm(h, .)."""
    geom, f, _ = triple
    h = _arr(h)
    out = 0.5 * cv.tensor_laplacian_f(geom, _arr(f), h) + cv.rm_action(geom, h)
    return SymTensorField.from_full(geom.grid, out)


def tau_coefficient(triple, h) -> float:
    """int <Rc, h> e^{-f} / int R e^{-f}  (= delta tau / tau)."""
    geom, f, _ = triple
    w = _weighted(geom, f)
    pair = np.einsum("ij...,ij...->...", cv.raise_both(geom, geom.ricci), _arr(h))
    return float(np.sum(pair * w) / np.sum(geom.scalar * w))


def stability_operator(triple: SolitonTriple, h, vhat: VhatSolution | None = None) -> SymTensorField:
    geom, f, tau = triple
    _require_certified(triple, "stability_operator")
    f, h = _arr(f), _arr(h)
    vhat = vhat or solve_vhat(triple, h)
    out = (0.5 * cv.tensor_laplacian_f(geom, f, h) + cv.rm_action(geom, h)
           + cv.div_f_dagger(geom, cv.div_f(geom, f, h))
           + 0.5 * cv.hessian(geom, vhat.vhat.full())
           - geom.ricci * tau_coefficient(triple, h))
    return SymTensorField.from_full(geom.grid, out)


def second_variation(triple: SolitonTriple, h) -> float:
    """d^2/ds^2 nu(g + s h) at s = 0."""
    geom, f, tau = triple
    Nh = stability_operator(triple, h).full()
    pre = tau * (4 * np.pi * tau) ** (-geom.n / 2)
    return float(pre * _inner_f(geom, f, _arr(h), Nh, 2).real)


def einstein_operator(geom, tau: float, h, tol: float | None = None) -> SymTensorField:
    """Unweighted specialization for Einstein metrics Rc = g/(2 tau)."""
    from .identities import default_tolerance

    tol = default_tolerance(geom) if tol is None else tol
    dev = cv.sup_norm(geom, geom.ricci - geom.g / (2 * tau))
    if dev > tol:
        raise StabilityError(f"metric is not Einstein with Rc = g/(2 tau) (deviation {dev:.2e})")
    h = _arr(h)
    zero = np.zeros(geom.grid.shape)
    source = cv.divergence_form(geom, cv.divergence_tensor(geom, h))
    v = _solve_constraint(geom, zero, tau, source).vhat.full()
    vol = geom.volume()
    out = (0.5 * cv.tensor_laplacian(geom, h) + cv.rm_action(geom, h)
           + cv.div_f_dagger(geom, cv.divergence_tensor(geom, h)) + 0.5 * cv.hessian(geom, v)
           - geom.g * float(np.sum(cv.trace(geom, h) * geom.dV)) / (2 * geom.n * tau * vol))
    return SymTensorField.from_full(geom.grid, out)


# ---------------------------------------------------------------------------
# projection onto ker div_f

@dataclass
class Projection:
    field: SymTensorField
    omega: VectorField
    divergence_residual: float     # ||div_f P h||_f / ||div_f h||_f
    iterations: int
    converged: bool
    flags: list = field(default_factory=list)

    def full(self):
        return self.field.full()

    def __getattr__(self, name):
        # behave as the projected tensor field where a field is expected
        if name.startswith("__") or name == "field":
            raise AttributeError(name)
        return getattr(self.field, name)


MAX_BASIS_ENTRIES = 2e8


class _GaugeSystem:
    """div_f^dagger on a weighted-orthonormal band-limited 1-form basis."""

    def __init__(self, geom, f, degree=None):
        n = geom.n
        w = _weighted(geom, f)
        cands = GL.candidates(geom.grid, 1, degree)
        size = 2 * len(cands) * n * n * int(np.prod(geom.grid.shape))
        if size > MAX_BASIS_ENTRIES:
            raise StabilityError(f"1-form trial space too large ({size:.1e} entries); "
                                 "pass a smaller degree")
        real = np.concatenate([cands.real, cands.imag])
        real = real[np.linalg.norm(real.reshape(len(real), -1), axis=1) > 0]
        E, _ = GL.orthonormal_basis(real, geom.g_inv, w, 1)
        self.E = E.real
        self.D = np.stack([cv.div_f_dagger(geom, e) for e in self.E])
        nb = len(self.E)
        self.DW = (GL.raise_all(self.D, geom.g_inv, 2) * w).reshape(nb, -1)

    def apply(self, c):
        return np.tensordot(c, self.D, axes=1)

    def adjoint(self, T):
        return self.DW @ np.asarray(T).reshape(-1)


def project_ker_divf(triple, h, tol: float = 1e-12, degree: int | None = None,
                     max_iter: int = 5000) -> Projection:
    """h - div_f^dagger omega with omega the least-squares solution of div_f^dagger omega = h.

    omega ranges over smooth band-limited 1-forms, so the discrete adjoint used
    by CGLS is exact; the normal equations div_f div_f^dagger omega = div_f h
    then hold against every trial 1-form.  ``divergence_residual`` is the
    grid-level ||div_f P h||_f / ||div_f h||_f, which also measures how much of
    h lies outside the resolved band.
    """
    geom, f, _ = triple
    f, h = _arr(f), _arr(h)
    key = ("gauge", degree, float(np.sum(f * geom.dV)))
    if key not in geom._cache:
        geom._cache[key] = _GaugeSystem(geom, f, degree)
    sys_ = geom._cache[key]
    op = LinearOperatorHandle(sys_.apply, (len(sys_.E),), symmetric=False,
                              adjoint=sys_.adjoint, description="div_f^dagger on trial 1-forms")
    res = krylov_solve(op, h, config=KrylovConfig(tol=tol, max_iter=max_iter, method="cgls"),
                       inner_range=lambda a, b: _inner_f(geom, f, a, b, 2))
    omega = np.tensordot(res.x, sys_.E, axes=1)
    out = h - sys_.apply(res.x)
    d0 = np.sqrt(abs(_inner_f(geom, f, *(2 * [cv.div_f(geom, f, h)]), 1)))
    d1 = np.sqrt(abs(_inner_f(geom, f, *(2 * [cv.div_f(geom, f, out)]), 1)))
    rel = float(d1 / d0) if d0 > 1e-14 * max(1.0, cv.weighted_l2(geom, h, f)) else float(d1)
    flags = [] if res.converged else [f"CGLS: {res.flag or 'not converged'} ({res.residual:.1e})"]
    return Projection(SymTensorField.from_full(geom.grid, out), VectorField(geom.grid, omega),
                      rel, res.iterations, res.converged, flags)


# ---------------------------------------------------------------------------
# spectrum on ker div_f

@dataclass
class SpectrumPair:
    mu: float
    multiplicity_weight: int       # 2 for a conjugate pair of sectors
    sector: dict
    field: np.ndarray              # components on the sector grid (complex)
    residual: float                # ||L_f h - mu h||_f / ||h||_f
    divergence_residual: float     # ||div_f h||_f / ||h||_f
    ricci_overlap: float

    @property
    def lambda_geom(self) -> float:
        return -self.mu


@dataclass
class SpectrumReport:
    pairs: list[SpectrumPair]
    multiplicities: list[tuple[float, int]]
    contains_ricci_direction: bool
    ricci_mu: float | None
    tau: float
    cluster_tol: float
    asymmetry: float
    verdict: str = "inconclusive"
    reasons: list = field(default_factory=list)
    backend: str = ""
    grid: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        out = []
        for p in self.pairs:
            out += [p.mu] * p.multiplicity_weight
        return np.array(out)

    def to_dict(self) -> dict:
        return {"schema_version": 1, "convention": CONVENTION_NOTE, "tau": self.tau,
                "cluster_tol": self.cluster_tol, "verdict": self.verdict,
                "reasons": self.reasons,
                "contains_ricci_direction": self.contains_ricci_direction,
                "ricci_mu": self.ricci_mu, "asymmetry": self.asymmetry,
                "multiplicities": [{"mu": m, "lambda_geom": -m, "multiplicity": k}
                                   for m, k in self.multiplicities],
                "eigenpairs": [{"mu": p.mu, "lambda_geom": p.lambda_geom,
                                "multiplicity_weight": p.multiplicity_weight,
                                "sector": {str(a): m for a, m in p.sector.items()},
                                "residual": p.residual,
                                "divergence_residual": p.divergence_residual,
                                "ricci_overlap": p.ricci_overlap} for p in self.pairs],
                "backend": self.backend, "grid": self.grid}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "mu", "lambda_geom", "multiplicity_weight", "sector",
                    "residual", "divergence_residual", "ricci_overlap"])
        for i, p in enumerate(self.pairs):
            sec = ";".join(f"{a}:{m}" for a, m in p.sector.items())
            w.writerow([i, repr(p.mu), repr(p.lambda_geom), p.multiplicity_weight, sec,
                        f"{p.residual:.3e}", f"{p.divergence_residual:.3e}",
                        f"{p.ricci_overlap:.6f}"])
        return buf.getvalue()


def _rebase_on_ricci(group, sg, fa, rc):
    """Rotate a degenerate cluster of one sector so its first member is the
    projection of Rc onto the cluster span."""
    H = [p.field for p in group]
    G = np.array([[_inner_f(sg, fa, a, b, 2) for b in H] for a in H])
    r = np.array([_inner_f(sg, fa, a, rc, 2) for a in H])
    if np.linalg.norm(r) == 0:
        return
    # orthonormal basis of the span with the Rc projection first
    L = np.linalg.cholesky(0.5 * (G + G.conj().T))
    Linv = np.linalg.inv(L)
    E = Linv @ np.array(H).reshape(len(H), -1)        # orthonormal rows
    c = np.conj(Linv @ np.conj(r))                     # coordinates of Rc projection
    Q, _ = np.linalg.qr(np.column_stack([c] + [np.eye(len(H))[:, k] for k in range(len(H))]))
    Q = Q[:, :len(H)]
    new = (Q.T @ E).reshape((len(H),) + H[0].shape)
    for p, h in zip(group, new):
        p.field = h


def spectrum_ker_divf(triple: SolitonTriple, k: int = 8, cluster_tol: float | None = None,
                      degree: int | None = None) -> SpectrumReport:
    """Top of the spectrum of L_f restricted to ker div_f.

    The Galerkin problem is solved sector by sector along the rotation axes of
    the geometry, with ker div_f imposed against smooth 1-form test fields.
    The ``k`` largest eigenvalues (counted with multiplicity) are returned,
    extended to complete their clusters.
    """
    geom, f, tau = triple
    _require_certified(triple, "spectrum_ker_divf")
    f = _arr(f)
    cluster_tol = 1e-3 / (2 * tau) if cluster_tol is None else cluster_tol

    def L(sg, fa, h):
        return 0.5 * cv.tensor_laplacian_f(sg, fa, h) + cv.rm_action(sg, h)

    raw, asym = GL.sector_spectrum(geom, f, 2, L, constraint=lambda sg, fa, h: cv.div_f(sg, fa, h),
                                   constraint_rank=1, degree=degree)
    # keep the k largest (with multiplicity), completing the last cluster
    kept, count = [], 0
    for p in raw:
        if count >= k and p.value < kept[-1].value - cluster_tol:
            break
        kept.append(p)
        count += p.weight
    inv = geom.invariant_axes()
    pairs = []
    for p in kept:
        sg = geom.sector(p.modes)
        fa = GL.restrict(f, geom.grid, p.modes)
        pairs.append((p, sg, fa))
    # re-base degenerate clusters that contain the Ricci direction
    for grp in cluster(np.array([p.value for p, _, _ in pairs]), cluster_tol):
        zero = [i for i in grp if all(m == 0 for m in pairs[i][0].modes.values())]
        if len(zero) > 1:
            _, sg, fa = pairs[zero[0]]
            rc = GL.restrict(geom.ricci, geom.grid, pairs[zero[0]][0].modes)
            _rebase_on_ricci([pairs[i][0] for i in zero], sg, fa, rc)
    out = []
    for p, sg, fa in pairs:
        h = p.field
        hn = np.sqrt(abs(_inner_f(sg, fa, h, h, 2)))
        div = cv.div_f(sg, fa, h)
        dres = float(np.sqrt(abs(_inner_f(sg, fa, div, div, 1))) / hn)
        res = L(sg, fa, h) - p.value * h
        rres = float(np.sqrt(abs(_inner_f(sg, fa, res, res, 2))) / hn)
        overlap = 0.0
        if all(m == 0 for m in p.modes.values()):
            rc = GL.restrict(geom.ricci, geom.grid, p.modes)
            rn = np.sqrt(abs(_inner_f(sg, fa, rc, rc, 2)))
            overlap = float(abs(_inner_f(sg, fa, h, rc, 2)) / (hn * rn)) if rn > 0 else 0.0
        out.append(SpectrumPair(p.value, p.weight, dict(p.modes), h, rres, dres, overlap))
    groups = cluster(np.array([p.mu for p in out]), cluster_tol)
    mults = [(float(np.mean([out[i].mu for i in g])), int(sum(out[i].multiplicity_weight for i in g)))
             for g in groups]
    mults.sort(key=lambda t: -t[0])
    ricci = [p for p in out if p.ricci_overlap > 1 - 1e-6]
    report = SpectrumReport(out, mults, bool(ricci), ricci[0].mu if ricci else None, float(tau),
                            cluster_tol, asym, backend=geom.backend, grid=geom.grid.describe())
    if not inv:
        report.reasons.append("no rotation axes: single sector")
    verdict = theorem13_verdict(report, triple)
    report.verdict, report.reasons = verdict.verdict, report.reasons + verdict.reasons
    return report


# ---------------------------------------------------------------------------
# verdict

@dataclass
class Verdict:
    verdict: str
    necessary_condition_holds: bool
    reasons: list
    witness: str | None = None
    witness_quotient: float | None = None   # <N h, h>_f / ||h||_f^2

    def to_dict(self):
        return {"schema_version": 1, "verdict": self.verdict,
                "necessary_condition_holds": self.necessary_condition_holds,
                "reasons": self.reasons, "witness": self.witness,
                "witness_quotient": self.witness_quotient}


def rayleigh_quotient(triple, h) -> float:
    """<N h, h>_f / ||h||_f^2."""
    geom, f, _ = triple
    h = _arr(h)
    Nh = stability_operator(triple, h).full()
    return float(_inner_f(geom, f, h, Nh, 2).real / _inner_f(geom, f, h, h, 2).real)


def theorem13_verdict(report: SpectrumReport, triple: SolitonTriple | None = None,
                      model=None) -> Verdict:
    """Decide the spectral necessary condition for linear stability.

    Pass iff the top eigenvalue equals 1/(2 tau) within the cluster tolerance,
    with multiplicity one, attained by the Ricci direction.  A second
    eigentensor in the top cluster, or any non-Ricci eigentensor with mu > 0,
    is an instability witness.  When ``model`` is a two-factor product the
    factor difference is evaluated as an explicit witness.
    """
    target = 1 / (2 * report.tau)
    tol = report.cluster_tol
    reasons = []
    if not report.multiplicities:
        return Verdict("inconclusive", False, ["empty spectrum"])
    top, mult = report.multiplicities[0]
    witness, quotient = None, None
    if model is not None and triple is not None and len(getattr(model, "blocks", ())) == 2:
        from .models import perturbation
        witness = "factor_difference"
        quotient = rayleigh_quotient(triple, perturbation("factor_difference", model))
    non_ricci_positive = [p for p in report.pairs if p.mu > tol and p.ricci_overlap <= 1 - 1e-6]
    if top > target + tol:
        reasons.append(f"eigenvalue {top:.6g} above 1/(2 tau) = {target:.6g}")
        return Verdict("unstable", False, reasons, witness, quotient)
    if abs(top - target) > tol:
        reasons.append(f"Ricci eigenvalue mismatch: top eigenvalue {top:.6g} "
                       f"vs 1/(2 tau) = {target:.6g}")
        return Verdict("inconclusive", False, reasons, witness, quotient)
    if mult > 1:
        reasons.append(f"top eigenvalue {top:.6g} has multiplicity {mult}")
    if not report.contains_ricci_direction:
        reasons.append("Ricci direction not found among the computed eigentensors")
        if mult == 1:
            return Verdict("inconclusive", False, reasons, witness, quotient)
    if non_ricci_positive:
        reasons.append(f"{sum(p.multiplicity_weight for p in non_ricci_positive)} non-Ricci "
                       f"eigentensor(s) with mu > 0 (largest {non_ricci_positive[0].mu:.6g})")
    if mult > 1 or non_ricci_positive:
        return Verdict("unstable", False, reasons, witness, quotient)
    if quotient is not None and quotient > tol:
        reasons.append(f"factor_difference has <N h, h>_f / |h|^2 = {quotient:.6g} > 0")
        return Verdict("unstable", False, reasons, witness, quotient)
    if len(report.multiplicities) < 2:
        reasons.append("k too small: no eigenvalue below the top cluster, gap unresolved")
        return Verdict("inconclusive", False, reasons, witness, quotient)
    gap = top - report.multiplicities[1][0]
    reasons.append(f"top eigenvalue 1/(2 tau) simple, Ricci direction; gap to next {gap:.6g}")
    return Verdict("stable-necessary-condition-pass", True, reasons, witness, quotient)


# ---------------------------------------------------------------------------
# finite-difference cross-checks of the second variation and of delta tau

SECOND_VARIATION_KINDS = ("conformal", "random_smooth", "pure_gauge")


def variation_oracle_rows(model, seed: int = 1, kinds=SECOND_VARIATION_KINDS,
                          steps=(2e-2, 1e-2, 5e-3), rtol: float = 1e-2,
                          gauge_atol: float = 1e-4, tau_rtol: float = 1e-3,
                          progress=None) -> list:
    """Second variation of nu against the second difference of nu(g + s h),
    and delta tau against the first difference of tau*(g + s h).

    Pure-gauge directions pass when both values are below ``gauge_atol``.
    """
    from .identities import from_model
    from .models import perturbation
    from .variations import OracleRow, delta_tau, fd_functional_derivative

    t = from_model(model)
    rows = []
    for kind in kinds:
        if kind == "pure_gauge":
            h = perturbation("lie_derivative", model, seed=seed, X="random")
        else:
            h = perturbation(kind, model, seed=seed)
        an = second_variation(t, h)
        est = fd_functional_derivative("nu", model.geom, h, order=2, steps=steps)
        fd = float(est.value)
        err = abs(an - fd)
        if kind == "pure_gauge":
            ok = abs(an) <= gauge_atol and abs(fd) <= gauge_atol
        else:
            ok = err <= rtol * abs(fd)
        rows.append(OracleRow("second variation of nu", model.name, kind, seed, an, fd,
                              err / max(abs(fd), 1e-300), est.error / max(abs(fd), 1e-300),
                              bool(ok), est.flagged))
        if progress:
            progress(rows[-1])
    h = model.random_field(seed, 2)
    an = delta_tau(t, h)
    est = fd_functional_derivative("tau", model.geom, h)
    err = abs(an - est.value)
    rows.append(OracleRow("delta tau", model.name, "random_smooth", seed, an, float(est.value),
                          err / abs(est.value), est.error / abs(est.value),
                          bool(err <= tau_rtol * abs(est.value)), est.flagged))
    if progress:
        progress(rows[-1])
    return rows
