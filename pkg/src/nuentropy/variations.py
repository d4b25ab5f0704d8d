"""First-order variation formulas under g -> g + s h, f -> f + s phi, tau -> tau + s eta,
and a Richardson-extrapolated finite-difference harness that re-evaluates the
underlying quantities directly.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import curvature as cv
from .entropy import EntropyResult, SolverConfig, nu_entropy, w_functional
from .grids import ScalarField, SymTensorField

log = logging.getLogger(__name__)

DEFAULT_STEPS = (1e-2, 5e-3, 2.5e-3)


class AdvisoryWarning(UserWarning):
    """A formula was applied outside the setting it was derived for."""


class SolverError(RuntimeError):
    """The entropy solver did not converge where a converged minimizer is required."""


def _arr(x):
    return x.full() if hasattr(x, "full") else np.asarray(x)


def _sym(geom, T):
    return SymTensorField.from_full(geom.grid, 0.5 * (T + np.swapaxes(T, 0, 1)))


def _scalar(geom, u):
    return ScalarField(geom.grid, np.asarray(u)[None])


def _compose(A, g_inv, B):
    """(A g^{-1} B)_ij = A_ik g^{kl} B_lj."""
    return np.einsum("ik...,kl...,lj...->ij...", A, g_inv, B)


def _pair(geom, a, b):
    return np.einsum("ij...,ij...->...", cv.raise_both(geom, a), b)


# ---------------------------------------------------------------------------
# pointwise variation formulas

def delta_ricci(geom, h) -> SymTensorField:
    h = _arr(h)
    div_h = cv.divergence_tensor(geom, h)
    ndiv = cv.cov_deriv(geom, div_h, 1)             # [i, j] = nabla_i (div h)_j
    rh = _compose(geom.ricci, geom.g_inv, h)         # R_ik h_kj
    out = (-cv.rm_action(geom, h)
           + 0.5 * (ndiv + np.swapaxes(ndiv, 0, 1) + rh + np.swapaxes(rh, 0, 1)
                    - cv.rough_laplacian_tensor(geom, h)
                    - cv.hessian(geom, cv.trace(geom, h))))
    return _sym(geom, out)


def _christoffel_variation_dot(geom, h, df_up):
    """1/2 (nabla_i h_jk + nabla_j h_ik - nabla_k h_ij) grad^k f."""
    T = cv.cov_deriv(geom, h, 2)                     # T[k, i, j] = nabla_k h_ij
    a = np.einsum("ijk...,k...->ij...", T, df_up)
    b = np.einsum("kij...,k...->ij...", T, df_up)
    return 0.5 * (a + np.swapaxes(a, 0, 1) - b)


def delta_hessian_f(geom, f, h, phi) -> SymTensorField:
    f, h, phi = _arr(f), _arr(h), _arr(phi)
    df_up = geom.background_gradient(f)
    out = cv.hessian(geom, phi) - _christoffel_variation_dot(geom, h, df_up)
    return _sym(geom, out)


def delta_scalar_generic(geom, h) -> ScalarField:
    """delta R = -<h, Rc> + div div h - Delta tr h, valid at any metric."""
    h = _arr(h)
    out = (-_pair(geom, h, geom.ricci) + cv.divergence_form(geom, cv.divergence_tensor(geom, h))
           - cv.laplacian(geom, cv.trace(geom, h)))
    return _scalar(geom, out)


def delta_scalar_curvature(triple, *args) -> ScalarField:
    """Shrinker form of delta R, obtained from the generic one with Rc = g/(2 tau) - Hess f.

    Called as ``(triple, h)`` or ``(geom, f, tau, h)``; the second form is
    certified on the fly.
    """
    if len(args) == 3:
        from .identities import certify

        triple = certify(triple, args[0], args[1])
    h = args[-1]
    geom, f, tau = triple
    if not triple.certified:
        warnings.warn("delta_scalar_curvature applied to an uncertified triple",
                      AdvisoryWarning, stacklevel=2)
    f, h = _arr(f), _arr(h)
    out = (-cv.trace(geom, h) / (2 * tau) + _pair(geom, h, cv.hessian(geom, f))
           + cv.divergence_form(geom, cv.divergence_tensor(geom, h))
           - cv.laplacian(geom, cv.trace(geom, h)))
    return _scalar(geom, out)


def delta_laplacian_f(geom, f, h, phi) -> ScalarField:
    """delta(Delta f) = Delta phi - <h, Hess f> - (div h)(grad f) + 1/2 <d tr h, df>."""
    f, h, phi = _arr(f), _arr(h), _arr(phi)
    df_up = geom.background_gradient(f)
    out = (cv.laplacian(geom, phi) - _pair(geom, h, cv.hessian(geom, f))
           - np.einsum("i...,i...->...", cv.divergence_tensor(geom, h), df_up)
           + 0.5 * np.einsum("i...,i...->...", cv.gradient(geom, cv.trace(geom, h)), df_up))
    return _scalar(geom, out)


def delta_gradsq(geom, f, h, phi) -> ScalarField:
    """delta |grad f|^2 = 2 <df, dphi> - h(grad f, grad f)."""
    f, h, phi = _arr(f), _arr(h), _arr(phi)
    df_up = geom.background_gradient(f)
    out = (2 * np.einsum("i...,i...->...", df_up, cv.gradient(geom, phi))
           - np.einsum("ij...,i...,j...->...", h, df_up, df_up))
    return _scalar(geom, out)


# ---------------------------------------------------------------------------
# integral variations

def delta_tau(triple, h) -> float:
    """tau int <Rc, h> e^{-f} / int R e^{-f}."""
    geom, f, tau = triple
    f, h = _arr(f), _arr(h)
    w = np.exp(-f) * geom.dV
    den = float(np.sum(geom.scalar * w))
    scale = float(np.sum(np.abs(geom.scalar) * w)) + 1e-300
    if abs(den) <= 1e-12 * max(scale, float(np.sum(w))):
        raise ValueError("int R e^{-f} vanishes: not a shrinker")
    return float(tau * np.sum(_pair(geom, h, geom.ricci) * w) / den)


def first_variation_from_pair(geom, f, tau, h) -> float:
    f, h = _arr(f), _arr(h)
    n = geom.n
    sol = geom.ricci + cv.hessian(geom, f) - geom.g / (2 * tau)
    w = np.exp(-f) * geom.dV
    return float((4 * np.pi * tau) ** (-n / 2) * np.sum(-tau * _pair(geom, h, sol) * w))


def first_variation_nu(geom, h, entropy: EntropyResult | None = None,
                       config: SolverConfig | None = None) -> float:
    """delta nu(h) at the minimizing pair of ``geom`` (solved if not supplied)."""
    if entropy is None:
        entropy = nu_entropy(geom, config)
    if not entropy.converged:
        raise SolverError("nu solver did not converge: " + "; ".join(entropy.flags))
    return first_variation_from_pair(geom, entropy.f_star, entropy.tau_star, h)


def composition_sides(triple, h, phi):
    """Both sides of the decomposition of delta Rc + delta Hess f - h/(2 tau)."""
    geom, f, tau = triple
    f, h, phi = _arr(f), _arr(h), _arr(phi)
    lhs = delta_ricci(geom, h).full() + delta_hessian_f(geom, f, h, phi).full() - h / (2 * tau)
    rhs = (-0.5 * cv.tensor_laplacian_f(geom, f, h) - cv.rm_action(geom, h)
           - cv.div_f_dagger(geom, cv.div_f(geom, f, h))
           - cv.hessian(geom, -phi + 0.5 * cv.trace(geom, h)))
    return lhs, rhs


def composition_residual(triple, h, phi) -> float:
    lhs, rhs = composition_sides(triple, h, phi)
    return cv.sup_norm(triple.geom, lhs - rhs) / max(cv.sup_norm(triple.geom, lhs), 1e-300)


# ---------------------------------------------------------------------------
# finite-difference harness

@dataclass
class FDEstimate:
    value: object            # float or array
    error: float             # extrapolation-table error estimate
    flagged: bool = False
    table: list = field(default_factory=list, repr=False)


def perturbed_geometry(geom, h, s):
    """Geometry of g + s h on the same grid (closed forms are replaced by spectral)."""
    backend = "spectral" if geom.backend == "analytic" else geom.backend
    order = int(geom.scheme[2:]) if geom.scheme.startswith("fd") else 4
    return cv.build_geometry(geom.g + s * _arr(h), backend, grid=geom.grid, fd_order=order)


def _maxabs(x):
    return float(np.max(np.abs(x)))


def richardson(F: Callable[[float], object], order: int = 1,
               steps=DEFAULT_STEPS, norm: Callable | None = None) -> FDEstimate:
    """Centered difference of F at 0, extrapolated once in s^2.

    The error estimate is the change between the last two extrapolants,
    measured in ``norm`` (default: max abs).
    """
    _size = norm or _maxabs
    steps = tuple(float(s) for s in steps)
    if len(steps) < 3:
        raise ValueError("need at least three step sizes")
    F0 = F(0.0) if order == 2 else None
    raw = []
    for s in steps:
        if order == 1:
            raw.append((np.asarray(F(s)) - np.asarray(F(-s))) / (2 * s))
        elif order == 2:
            raw.append((np.asarray(F(s)) - 2 * np.asarray(F0) + np.asarray(F(-s))) / (s * s))
        else:
            raise ValueError("order must be 1 or 2")
    ext = []
    for a, b, sa, sb in zip(raw, raw[1:], steps, steps[1:]):
        r2 = (sa / sb) ** 2
        ext.append(b + (b - a) / (r2 - 1))
    err = _size(ext[-1] - ext[-2])
    diffs = [_size(b - a) for a, b in zip(raw, raw[1:])]
    # raw differences must shrink like s^2; otherwise noise dominates
    flagged = any(d2 > d1 for d1, d2 in zip(diffs, diffs[1:]) if d1 > 1e-13 * max(1.0, _size(raw[0])))
    value = ext[-1] if np.ndim(ext[-1]) else float(ext[-1])
    return FDEstimate(value, err, flagged, raw + ext)


def _named(name, geom, h, f=None, tau=None, phi=None, eta=0.0, config=None):
    f = None if f is None else _arr(f)
    phi = None if phi is None else _arr(phi)

    def pert(s):
        return geom if s == 0.0 else perturbed_geometry(geom, h, s)

    def ff(s):
        return f if phi is None else f + s * phi

    table = {
        "ricci": lambda s: pert(s).ricci,
        "scalar": lambda s: pert(s).scalar,
        "hessian_f": lambda s: cv.hessian(pert(s), ff(s)),
        "laplacian_f": lambda s: cv.laplacian(pert(s), ff(s)),
        "gradsq": lambda s: cv.grad_norm_sq(pert(s), ff(s)),
        "W": lambda s: w_functional(pert(s), ff(s), tau + s * eta),
        "nu": lambda s: nu_entropy(pert(s), config).nu,
        "tau": lambda s: nu_entropy(pert(s), config).tau_star,
    }
    if name not in table:
        raise ValueError(f"unknown functional {name!r}; choose from {sorted(table)}")
    return table[name]


def fd_functional_derivative(functional, geom, h, order: int = 1, steps=DEFAULT_STEPS,
                             norm: Callable | None = None, **kw) -> FDEstimate:
    """Richardson-extrapolated derivative of a named or callable functional along h.

    Named functionals: ricci, scalar, hessian_f, laplacian_f, gradsq (keywords
    ``f``, ``phi``), W (``f``, ``tau``, ``phi``, ``eta``), nu and tau (``config``).
    A callable receives the step ``s`` and returns the value at g + s h.
    """
    F = functional if callable(functional) else _named(functional, geom, h, **kw)
    if geom.backend == "analytic" and not callable(functional):
        # evaluate every point (including s = 0) with the same discretization
        base = perturbed_geometry(geom, h, 0.0)
        F = _named(functional, base, h, **kw)
    est = richardson(F, order, steps, norm)
    if est.flagged:
        log.warning("non-monotone extrapolation table for %s", functional)
    return est


# ---------------------------------------------------------------------------
# oracle matrix

@dataclass
class OracleRow:
    formula: str
    background: str
    h_kind: str
    seed: int
    analytic: float          # value, or weighted L2 norm for fields
    fd: float
    rel_error: float
    estimate: float          # Richardson estimate, relative to |fd|
    passed: bool
    flagged: bool = False


@dataclass
class OracleMatrix:
    rows: list[OracleRow]
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_dict(self) -> dict:
        return {"schema_version": 1, "passed": self.passed, "notes": self.notes,
                "rows": [r.__dict__.copy() for r in self.rows]}

    def to_csv(self) -> str:
        import csv
        import io

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["formula", "background", "h_kind", "seed", "analytic", "fd",
                    "rel_error", "estimate", "pass"])
        for r in self.rows:
            w.writerow([r.formula, r.background, r.h_kind, r.seed, repr(r.analytic), repr(r.fd),
                        f"{r.rel_error:.3e}", f"{r.estimate:.3e}", r.passed])
        return buf.getvalue()


def _row(formula, background, seed, analytic, est: FDEstimate, size, floor=1e-10):
    """Compare in ``size``; pass when the error is within the Richardson estimate
    (with a roundoff floor relative to the oracle's size)."""
    ref = size(est.value)
    err = size(np.asarray(analytic) - np.asarray(est.value))
    bound = size(np.asarray(est.table[-1]) - np.asarray(est.table[-2]))
    scale = max(ref, 1e-300)
    return OracleRow(formula, background, "random_smooth", seed, float(size(analytic)), float(ref),
                     float(err / scale), float(bound / scale),
                     bool(err <= max(bound, floor * max(ref, 1.0))), est.flagged)


def oracle_matrix(backgrounds=("torus", "sphere"), seeds=range(5), resolution: int = 16,
                  include_nu: bool = True, progress: Callable | None = None) -> OracleMatrix:
    """Every variation formula against its finite-difference oracle.

    Field-valued formulas are compared in the weighted L2 norm (the sup norm at
    the polar rows is dominated by roundoff amplified by g^{-1} ~ 1/sin^2).
    Pointwise formulas run on random (h, f, phi); the first variation of nu runs
    at a perturbed sphere (a nu minimizer that is not a shrinker) and the
    composition identity at the round sphere (it needs a shrinker), so neither
    runs on the flat torus, whose nu is -infinity.
    """
    from . import models
    from .identities import from_model

    rows, notes = [], []
    for bg in backgrounds:
        if bg == "torus":
            m = models.flat_torus(int(1.5 * resolution), int(1.5 * resolution))
        elif bg == "sphere":
            m = models.round_sphere2(1.0, resolution, 2 * resolution, "spectral")
        else:
            raise ValueError(f"unknown background {bg!r}")
        geom = m.geom

        def size(x, geom=geom):
            return cv.weighted_l2(geom, x) if np.ndim(x) else abs(float(x))

        for seed in seeds:
            h = m.random_field(seed, 2, amplitude=0.3).full()
            phi = m.random_field(seed + 7, 0).full()
            f = m.random_field(seed + 3, 0, amplitude=0.5).full()
            fp = dict(f=f, phi=phi)
            cases = [("delta Rc", "ricci", delta_ricci(geom, h), {}),
                     ("delta R", "scalar", delta_scalar_generic(geom, h), {}),
                     ("delta Hess f", "hessian_f", delta_hessian_f(geom, f, h, phi), fp),
                     ("delta Lap f", "laplacian_f", delta_laplacian_f(geom, f, h, phi), fp),
                     ("delta |df|^2", "gradsq", delta_gradsq(geom, f, h, phi), fp)]
            for label, name, an, kw in cases:
                est = fd_functional_derivative(name, geom, h, **kw)
                rows.append(_row(label, bg, seed, an.full(), est, size))
                if progress:
                    progress(rows[-1])
            if bg != "sphere":
                continue
            # composition identity at the shrinker: oracle is d/ds of Rc + Hess(f + s phi) - g/(2 tau)
            t = from_model(m)
            f0 = t.f.full()
            lhs, rhs = composition_sides(t, h, phi)

            def soliton_tensor(s, h=h, phi=phi, f0=f0, tau=t.tau):
                gs = perturbed_geometry(geom, h, 0.0) if s == 0 else perturbed_geometry(geom, h, s)
                return gs.ricci + cv.hessian(gs, f0 + s * phi) - gs.g / (2 * tau)

            est = richardson(soliton_tensor)
            rows.append(_row("composition identity", bg, seed, rhs, est, size))
            if progress:
                progress(rows[-1])
            if include_nu:
                big = models.round_sphere2(1.0, 2 * resolution, 4 * resolution, "spectral")
                k = big.random_field(seed + 11, 2, amplitude=0.05).full()
                pg = cv.build_geometry(big.geom.g + k, "spectral", grid=big.grid)
                hh = big.random_field(seed, 2).full()
                an = first_variation_nu(pg, hh)
                est = fd_functional_derivative("nu", pg, hh)
                rows.append(_row("delta nu", "perturbed sphere", seed, an, est, abs))
                if progress:
                    progress(rows[-1])
    if "torus" in backgrounds:
        notes.append("delta nu and the composition identity are not run on the flat torus "
                     "(nu = -infinity, not a shrinker)")
    return OracleMatrix(rows, notes)
