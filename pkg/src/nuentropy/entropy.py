"""The W-functional, its first variation, and the nu-entropy solver.

The inner problem at fixed tau is posed in the variable

    v = (4 pi tau)^{-n/4} e^{-f/2},      sum dV v^2 = 1,

for which

    W = tau * A(v) - S(v) - (n/2) ln(4 pi tau) - n,
    A(v) = sum dV (R v^2 + 4 |dv|^2),   S(v) = sum dV v^2 ln v^2.

``v`` is expanded in a smooth band-limited trial space (see
:mod:`nuentropy.galerkin`); grid-level derivative matrices vanish on Nyquist
modes, where the discrete W would otherwise be unbounded below.  The inner
minimization is a projected Newton iteration on the constraint sphere with a
backtracking line search that decreases W monotonically.  The outer problem
over tau is a bounded Brent search followed by a secant polish of
``d nu / d tau = A(v*) - n / (2 tau)``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize_scalar
from scipy.special import xlogy

from . import curvature as cv
from . import galerkin as GL
from .derivatives import derivative
from .grids import ScalarField

log = logging.getLogger(__name__)


def _arr(x):
    return x.full() if hasattr(x, "full") else np.asarray(x)


# ---------------------------------------------------------------------------
# W and its first variation

def w_functional(geom: cv.GeometryState, f, tau: float) -> float:
    """(4 pi tau)^{-n/2} int [tau (R + |grad f|^2) + f - n] e^{-f} dV."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    f = _arr(f)
    n = geom.n
    integrand = tau * (geom.scalar + cv.grad_norm_sq(geom, f)) + f - n
    return float((4 * np.pi * tau) ** (-n / 2) * np.sum(integrand * np.exp(-f) * geom.dV))


def delta_w(geom: cv.GeometryState, f, tau: float, h, phi, eta: float) -> float:
    """First variation of W in the direction (h, phi, eta)."""
    f, h, phi = _arr(f), _arr(h), _arr(phi)
    n = geom.n
    w = np.exp(-f) * geom.dV
    hess = cv.hessian(geom, f)
    sol = geom.ricci + hess - geom.g / (2 * tau)
    t1 = -tau * np.einsum("ij...,ij...->...", cv.raise_both(geom, h), sol)
    bracket = tau * (geom.scalar + 2 * cv.laplacian(geom, f) - cv.grad_norm_sq(geom, f)) + f - n - 1
    t2 = (0.5 * cv.trace(geom, h) - phi - n * eta / (2 * tau)) * bracket
    t3 = eta * (geom.scalar + cv.grad_norm_sq(geom, f) - n / (2 * tau))
    return float((4 * np.pi * tau) ** (-n / 2) * np.sum((t1 + t2 + t3) * w))


# ---------------------------------------------------------------------------
# solver configuration and result

@dataclass
class SolverConfig:
    tol_el: float | None = None          # default: 1e-6 spectral, 10x quadrature error FD
    tol_constraint: float = 1e-10
    tol_tau: float = 1e-10
    tol_inner: float = 1e-12
    max_inner: int = 60
    max_outer: int = 60
    tau_bracket: tuple[float, float] | None = None
    initializers: tuple[str, ...] = ("constant", "lowfreq:1", "lowfreq:2")
    perturbation: float = 0.2
    seed: int = 0
    basis_degree: int | None = None

    def __post_init__(self):
        for name in ("tol_constraint", "tol_tau", "tol_inner"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.tau_bracket is not None:
            lo, hi = self.tau_bracket
            if not 0 < lo < hi:
                raise ValueError("tau_bracket must satisfy 0 < lo < hi")

    @classmethod
    def from_mapping(cls, d: dict) -> "SolverConfig":
        kw = {}
        for k, v in d.items():
            if k == "tau_bracket":
                kw[k] = tuple(float(x) for x in str(v).replace(",", " ").split())
            elif k == "initializers":
                kw[k] = tuple(s.strip() for s in str(v).split(",") if s.strip())
            elif k in ("max_inner", "max_outer", "seed", "basis_degree"):
                kw[k] = int(v)
            else:
                kw[k] = float(v)
        return cls(**kw)


@dataclass
class EntropyResult:
    nu: float
    f_star: ScalarField
    tau_star: float
    residual_EL: float
    residual_norm_constraint: float
    residual_f_moment: float
    iterations: int
    converged: bool
    backend: str = ""
    grid: dict = field(default_factory=dict)
    local_minima: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    qualifier: str = "local"
    dnu_dtau: float = float("nan")

    def to_dict(self) -> dict:
        return {"schema_version": 1, "nu": self.nu, "tau": self.tau_star,
                "residual_EL": self.residual_EL,
                "residual_norm_constraint": self.residual_norm_constraint,
                "residual_f_moment": self.residual_f_moment,
                "dnu_dtau": self.dnu_dtau,
                "iterations": self.iterations, "converged": self.converged,
                "qualifier": self.qualifier, "backend": self.backend, "grid": self.grid,
                "local_minima": self.local_minima, "flags": self.flags}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


# ---------------------------------------------------------------------------
# discrete pieces

# Minimizers of W on the geometries of interest are smooth, so a moderate
# trial degree already resolves them to solver tolerance.
DEFAULT_MAX_DEGREE = 16


class _Problem:
    """Discrete W in the trial space of a geometry."""

    def __init__(self, geom: cv.GeometryState, degree: int | None):
        self.geom = geom
        self.n = geom.n
        if degree is None:
            degree = min(DEFAULT_MAX_DEGREE, min(f.degree for f in GL.factors(geom.grid)))
        cand = GL.candidates(geom.grid, 0, degree)[:, 0]
        real = np.concatenate([cand.real, cand.imag])
        real = real[np.linalg.norm(real.reshape(len(real), -1), axis=1) > 0]
        B, _ = GL.orthonormal_basis(real[:, None], np.ones((1, 1)), geom.dV, 0)
        self.B = B[:, 0].real                      # (nb, *grid), dV-orthonormal
        nb = len(self.B)
        flat = self.B.reshape(nb, -1)
        # stiffness K with A(v) = c^T K c for v = B^T c
        D = [np.stack([derivative(b, a, geom.grid, geom.scheme) for b in self.B])
             for a in range(self.n)]
        K = (flat * (geom.scalar * geom.dV).reshape(-1)) @ flat.T
        for a in range(self.n):
            for b in range(self.n):
                wab = (geom.g_inv[a, b] * geom.dV).reshape(-1)
                K += 4 * (D[a].reshape(nb, -1) * wab) @ D[b].reshape(nb, -1).T
        self.K = 0.5 * (K + K.T)
        self.flat = flat
        self.dV = geom.dV.reshape(-1)

    def field(self, c):
        return self.flat.T @ c

    def parts(self, c):
        v = self.field(c)
        A = float(c @ self.K @ c)
        S = float(np.sum(self.dV * xlogy(v * v, v * v)))
        return v, A, S

    def W(self, c, tau):
        _, A, S = self.parts(c)
        return tau * A - S - 0.5 * self.n * np.log(4 * np.pi * tau) - self.n

    def inner(self, c, tau, cfg: SolverConfig):
        """Projected Newton on |c| = 1; returns (c, W, iterations, converged)."""
        c = c / np.linalg.norm(c)
        Wc = self.W(c, tau)
        for it in range(1, cfg.max_inner + 1):
            v = self.field(c)
            lv = np.log(np.maximum(v * v, 1e-300))
            grad = 2 * tau * (self.K @ c) - self.flat @ (2 * self.dV * v * (lv + 1))
            lam = 0.5 * c @ grad
            r = grad - 2 * lam * c
            if np.linalg.norm(r) <= cfg.tol_inner * max(1.0, abs(lam)):
                return c, Wc, it, True
            H = (2 * tau * self.K - (self.flat * (2 * self.dV * (lv + 3))) @ self.flat.T
                 - 2 * lam * np.eye(len(c)))
            P = np.eye(len(c)) - np.outer(c, c)
            Ht = P @ H @ P + np.outer(c, c)
            w, U = sla.eigh(0.5 * (Ht + Ht.T))
            floor = 1e-8 * max(1.0, np.abs(w).max())
            w = np.where(w < floor, np.abs(w) + floor, w)  # modified Newton
            d = -U @ ((U.T @ r) / w)
            d = P @ d
            step, ok = 1.0, False
            while step > 1e-12:
                cn = c + step * d
                cn /= np.linalg.norm(cn)
                Wn = self.W(cn, tau)
                if Wn <= Wc + 1e-4 * step * (r @ d) or abs(Wn - Wc) <= 1e-15 * max(1.0, abs(Wc)):
                    ok = True
                    break
                step *= 0.5
            if not ok:
                return c, Wc, it, np.linalg.norm(r) <= 1e-8 * max(1.0, abs(lam))
            c, Wc = cn, Wn
        return c, Wc, cfg.max_inner, False


def _initial_vectors(prob: _Problem, cfg: SolverConfig):
    nb = len(prob.B)
    ones = np.ones(prob.flat.shape[1])
    c0 = prob.flat @ (ones * prob.dV)
    c0 /= np.linalg.norm(c0)
    rng = np.random.default_rng(cfg.seed)
    out = []
    for name in cfg.initializers:
        if name == "constant":
            out.append((name, c0.copy()))
        elif name.startswith("lowfreq"):
            k = int(name.split(":")[1]) if ":" in name else 1
            # perturb along a few of the smoothest trial functions
            low = np.argsort(np.diag(prob.K))[: min(nb, 3 * k + 1)]
            d = np.zeros(nb)
            d[low] = rng.standard_normal(len(low))
            d -= (d @ c0) * c0
            d *= cfg.perturbation / max(np.linalg.norm(d), 1e-300)
            out.append((name, c0 + d))
        else:
            raise ValueError(f"unknown initializer {name!r}")
    return out


def _default_bracket(geom):
    n = geom.n
    Rbar = float(np.sum(geom.scalar * geom.dV) / np.sum(geom.dV))
    if Rbar > 0:
        tau0 = n / (2 * Rbar)
    else:
        tau0 = geom.volume() ** (2 / n) / (4 * np.pi)
    return tau0 / 4, tau0 * 4


def nu_entropy(geom: cv.GeometryState, config: SolverConfig | None = None) -> EntropyResult:
    """Constrained minimization of W over (f, tau)."""
    cfg = config or SolverConfig()
    prob = _Problem(geom, cfg.basis_degree)
    n = geom.n
    lo, hi = cfg.tau_bracket or _default_bracket(geom)
    total_iters = 0
    minima = []
    best = None
    for name, c_init in _initial_vectors(prob, cfg):
        state = {"c": c_init.copy()}

        def nu_at(tau):
            nonlocal total_iters
            c, Wv, it, ok = prob.inner(state["c"], tau, cfg)
            total_iters += it
            state["c"] = c
            return Wv

        res = minimize_scalar(lambda s: nu_at(np.exp(s)), bounds=(np.log(lo), np.log(hi)),
                              method="bounded", options={"xatol": 1e-5, "maxiter": cfg.max_outer})
        tau = float(np.exp(res.x))
        flags = []

        # secant polish on d nu / d tau
        def slope(t):
            c, Wv, it, ok = prob.inner(state["c"], t, cfg)
            state["c"] = c
            _, A, _ = prob.parts(c)
            return A - n / (2 * t), Wv, ok

        s1, W1, ok = slope(tau)
        t0, s0 = tau * (1 + 1e-4), None
        s0, _, _ = slope(t0)
        state_ok = ok
        for _ in range(cfg.max_outer):
            if abs(s1) <= cfg.tol_tau:
                break
            denom = s1 - s0
            t_new = tau - s1 * (tau - t0) / denom if denom != 0 else tau
            if not lo < t_new < hi:
                flags.append("tau bracket exhausted")
                break
            t0, s0 = tau, s1
            tau = t_new
            s1, W1, state_ok = slope(tau)
        c_star = state["c"]
        if abs(s1) > cfg.tol_tau:
            flags.append(f"tau stationarity not reached (|dnu/dtau| = {abs(s1):.2e})")
        if min(tau - lo, hi - tau) < 1e-6 * tau:
            flags.append("tau at bracket edge")
        if not state_ok:
            flags.append("inner iteration not converged")
        minima.append({"initializer": name, "nu": float(W1), "tau": tau, "dnu_dtau": float(s1),
                       "flags": flags})
        if best is None or W1 < best[0] - 1e-12:
            best = (float(W1), tau, c_star, flags, float(s1))
    nu, tau, c, flags, s1 = best
    v = prob.field(c).reshape(geom.grid.shape)
    f = -np.log(v * v) - 0.5 * n * np.log(4 * np.pi * tau)
    el, cons, mom = residuals(geom, f, tau, nu)
    tol_el = cfg.tol_el if cfg.tol_el is not None else _default_tol_el(geom)
    converged = (not flags) and el <= tol_el and cons <= cfg.tol_constraint and mom <= max(cfg.tol_constraint, tol_el)
    if el > tol_el:
        flags = flags + [f"Euler-Lagrange residual {el:.2e} above {tol_el:.1e}"]
    return EntropyResult(nu, ScalarField(geom.grid, f[None]), tau, el, cons, mom, total_iters,
                         converged, geom.backend, geom.grid.describe(), minima, flags,
                         dnu_dtau=s1)


def _default_tol_el(geom):
    if geom.quadrature == "spectral":
        return 1e-6
    # ten times the midpoint quadrature error scale h^2 / 24 of the coarsest axis
    h = max(ax.spacing for ax in geom.grid.axes)
    return 10 * h * h / 24 * max(1.0, float(np.max(np.abs(geom.scalar))))


def residuals(geom, f, tau, nu):
    """Sup-norm residual of the Euler-Lagrange equation and the two constraint defects."""
    f = _arr(f)
    n = geom.n
    el = tau * (-2 * cv.laplacian(geom, f) + cv.grad_norm_sq(geom, f) - geom.scalar) - f + n + nu
    norm = (4 * np.pi * tau) ** (-n / 2)
    mass = norm * np.sum(np.exp(-f) * geom.dV)
    moment = norm * np.sum(f * np.exp(-f) * geom.dV)
    return float(np.max(np.abs(el))), float(abs(mass - 1)), float(abs(moment - n / 2 - nu))
