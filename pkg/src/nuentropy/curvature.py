"""Tensor calculus on a discretized chart: connection, curvature and weighted operators.

Conventions.  All stored tensors carry lower indices.  ``christoffel[k, i, j]``
is Gamma^k_ij.  ``riemann[i, j, k, l]`` is normalized so that the Ricci tensor
is the (2, 4) contraction ``R_ik = g^{jl} R_ijkl`` and the round unit sphere has
``R_ijkl = g_ik g_jl - g_il g_jk``.  With this normalization

    Rm(h, .)_ik = R_ijkl h^{jl}

equals ``(tr h) g - h`` on the unit 2-sphere.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace

import numpy as np

from .derivatives import derivative, partials
from .grids import (MODE, Field, GridSpec, SymTensorField, WeightedMeasure,
                    as_field, cell_weights, contract)

BACKENDS = ("analytic", "spectral", "finite_difference")


class GeometryError(ValueError):
    """Raised for metrics that are not positive definite or otherwise unusable."""


@dataclass(frozen=True, eq=False)
class GeometryState:
    grid: GridSpec
    g: np.ndarray
    g_inv: np.ndarray
    christoffel: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray
    sqrt_det: np.ndarray
    dV: np.ndarray
    backend: str
    scheme: str
    quadrature: str
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.grid.ndim

    def d(self, arr, axis, rank=0):
        return derivative(arr, axis, self.grid, self.scheme, rank)

    def partials(self, arr, rank=0):
        return partials(arr, self.grid, self.scheme, rank)

    @property
    def background_grid(self) -> GridSpec:
        """Grid on which background data (metric, potential) is differentiated.

        Background fields are invariant along sector axes, i.e. wavenumber 0.
        """
        modes = {a: 0 for a, ax in enumerate(self.grid.axes) if ax.rule == MODE}
        return self.grid.sector(modes) if modes else self.grid

    def background_gradient(self, f):
        """Raised gradient g^{kl} d_l f of a background scalar."""
        df = partials(np.asarray(f), self.background_grid, self.scheme, 0)
        return np.einsum("kl...,l...->k...", self.g_inv, df)

    @property
    def contracted_christoffel(self):
        """C^m = g^{kl} Gamma^m_kl."""
        if "C" not in self._cache:
            self._cache["C"] = np.einsum("kl...,mkl...->m...", self.g_inv, self.christoffel)
        return self._cache["C"]

    @property
    def raised_christoffel(self):
        """G[k, m, i] = g^{lk} Gamma^m_li."""
        if "G" not in self._cache:
            self._cache["G"] = np.einsum("lk...,mli...->kmi...", self.g_inv, self.christoffel)
        return self._cache["G"]

    def volume(self) -> float:
        return float(np.sum(self.dV))

    def measure(self, f=None, normalization=1.0) -> WeightedMeasure:
        weight = np.ones(self.grid.shape) if f is None else np.exp(-_arr(f))
        return WeightedMeasure(self.dV, weight * np.ones(self.grid.shape), normalization)

    def invariant_axes(self, tol=1e-10) -> list[int]:
        """Periodic axes along which the metric components are constant."""
        out = []
        scale = np.max(np.abs(self.g))
        for a, ax in enumerate(self.grid.axes):
            if ax.rule != "periodic":
                continue
            if np.max(np.abs(np.diff(self.g, axis=2 + a))) <= tol * scale:
                out.append(a)
        return out

    def sector(self, modes: dict[int, int]) -> "GeometryState":
        """Restriction to one Fourier sector along invariant periodic axes."""
        grid = self.grid.sector(modes)

        def cut(x):
            x = np.asarray(x)
            nd = self.grid.ndim
            sl = [slice(None)] * x.ndim
            for a in modes:
                sl[x.ndim - nd + a] = slice(0, 1)
            return x[tuple(sl)]

        kw = {name: cut(getattr(self, name)) for name in
              ("g", "g_inv", "christoffel", "riemann", "ricci", "scalar", "sqrt_det")}
        kw["dV"] = kw["sqrt_det"] * cell_weights(grid, _rule(self.quadrature))
        return replace(self, grid=grid, _cache={}, **kw)

    def with_measure_rule(self, quadrature):
        dV = self.sqrt_det * cell_weights(self.grid, _rule(quadrature))
        return replace(self, dV=dV, quadrature=quadrature, _cache={})


def _rule(quadrature):
    return "spectral" if quadrature == "spectral" else "midpoint"


def _arr(x):
    return x.full() if isinstance(x, Field) else np.asarray(x)


def _check_positive(g, grid):
    n = g.shape[0]
    mats = np.moveaxis(g.reshape(n, n, -1), -1, 0)
    eig = np.linalg.eigvalsh(mats)
    bad = eig[:, 0] <= 1e-12 * np.abs(eig[:, -1])
    if np.any(bad):
        p = int(np.argmax(bad))
        idx = tuple(int(i) for i in np.unravel_index(p, g.shape[2:]))
        raise GeometryError(f"metric not positive definite at grid index {idx} "
                            f"(eigenvalues {eig[p]})")


def _invert(g):
    n = g.shape[0]
    mats = np.moveaxis(g.reshape(n, n, -1), -1, 0)
    inv = np.linalg.inv(mats)
    det = np.linalg.det(mats)
    shp = g.shape[2:]
    return np.moveaxis(inv, 0, -1).reshape((n, n) + shp), det.reshape(shp)


def riemann_from_metric(g, g_inv, dg, ddg):
    """R_abcd from first and second partials of the metric.

    dg[c, a, b] = d_c g_ab, ddg[e, c, a, b] = d_e d_c g_ab.
    """
    gam_low = 0.5 * (np.einsum("iaj...->aij...", dg) + np.einsum("jai...->aij...", dg)
                     - dg)  # Gamma_{a i j} = 1/2 (d_i g_aj + d_j g_ai - d_a g_ij)
    gam = np.einsum("ka...,aij...->kij...", g_inv, gam_low)
    second = 0.5 * (np.einsum("bcad...->abcd...", ddg) + np.einsum("adbc...->abcd...", ddg)
                    - np.einsum("acbd...->abcd...", ddg) - np.einsum("bdac...->abcd...", ddg))
    quad = (np.einsum("pbc...,pad...->abcd...", gam_low, gam)
            - np.einsum("pbd...,pac...->abcd...", gam_low, gam))
    return gam, second + quad


def build_geometry(g, backend: str = "spectral", grid: GridSpec | None = None,
                   fd_order: int = 4, exact: dict | None = None) -> GeometryState:
    """Fill every derived cache for the metric ``g``.

    ``backend`` selects how metric derivatives are obtained:

    * ``finite_difference``: centered stencils of order ``fd_order`` through the
      ghost layer, midpoint quadrature;
    * ``spectral``: Fourier differentiation, exact latitude quadrature;
    * ``analytic``: caches taken from the closed forms in ``exact`` (as supplied
      by :mod:`nuentropy.models`); fields are then differentiated spectrally.
    """
    if isinstance(g, Field):
        grid, g = g.grid, g.full()
    if grid is None:
        raise ValueError("grid is required when g is a plain array")
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    g = np.asarray(g, dtype=float)
    _check_positive(g, grid)
    if backend == "finite_difference":
        scheme, quadrature = f"fd{fd_order}", "midpoint"
    else:
        scheme, quadrature = "spectral", "spectral"
    g_inv, det = _invert(g)
    sqrt_det = np.sqrt(det)
    if backend == "analytic":
        if exact is None:
            raise ValueError("analytic backend needs closed-form curvature")
        gam, riem = exact["christoffel"], exact["riemann"]
    else:
        dg = partials(g, grid, scheme, 2)
        ddg = partials(dg, grid, scheme, 3)
        gam, riem = riemann_from_metric(g, g_inv, dg, ddg)
    ricci = np.einsum("jl...,ijkl...->ik...", g_inv, riem)
    ricci = 0.5 * (ricci + np.swapaxes(ricci, 0, 1))
    scalar = np.einsum("ik...,ik...->...", g_inv, ricci)
    dV = sqrt_det * cell_weights(grid, _rule(quadrature))
    return GeometryState(grid, g, g_inv, gam, riem, ricci, scalar, sqrt_det, dV,
                         backend, scheme, quadrature)


# ---------------------------------------------------------------------------
# field-or-array plumbing

def _fieldwise(out_rank):
    """Accept Fields or arrays; return a Field when the first tensor argument was one."""
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(geom, *args, **kw):
            wrap = any(isinstance(a, Field) for a in args)
            args = [_arr(a) if isinstance(a, Field) else a for a in args]
            out = fn(geom, *args, **kw)
            if wrap:
                return as_field(geom.grid, out, out_rank)
            return out
        return wrapper
    return deco


# ---------------------------------------------------------------------------
# covariant calculus (array level)

def cov_deriv(geom: GeometryState, T, rank: int):
    """(nabla T)[k, i1..ir] with the derivative index first."""
    T = np.asarray(T)
    G = geom.christoffel
    out = geom.partials(T, rank)
    if rank == 0:
        return out
    if rank == 1:
        return out - np.einsum("mki...,m...->ki...", G, T)
    if rank == 2:
        return (out - np.einsum("mki...,mj...->kij...", G, T)
                - np.einsum("mkj...,im...->kij...", G, T))
    if rank == 3:
        return (out - np.einsum("mka...,mbc...->kabc...", G, T)
                - np.einsum("mkb...,amc...->kabc...", G, T)
                - np.einsum("mkc...,abm...->kabc...", G, T))
    raise ValueError("rank must be <= 3")


def trace(geom, h):
    return np.einsum("ij...,ij...->...", geom.g_inv, _arr(h))


def raise_both(geom, h):
    return np.einsum("ia...,jb...,ab...->ij...", geom.g_inv, geom.g_inv, h, optimize=True)


@_fieldwise(1)
def gradient(geom, u):
    """Differential du (covariant components)."""
    return cov_deriv(geom, u, 0)


@_fieldwise(2)
def hessian(geom, u):
    H = cov_deriv(geom, cov_deriv(geom, u, 0), 1)
    return 0.5 * (H + np.swapaxes(H, 0, 1))


@_fieldwise(0)
def grad_norm_sq(geom, u):
    du = cov_deriv(geom, u, 0)
    return np.einsum("i...,ij...,j...->...", du, geom.g_inv, du)


@_fieldwise(0)
def laplacian(geom, u):
    H = cov_deriv(geom, cov_deriv(geom, u, 0), 1)
    return np.einsum("ij...,ij...->...", geom.g_inv, H)


def _dot_grad(geom, f, nablaT):
    """g^{kl} d_l f (nabla T)[k, ...]; trailing indices of nabla T broadcast."""
    df = geom.background_gradient(_arr(f))
    return np.einsum("k...,k...->...", df, nablaT)


@_fieldwise(0)
def laplacian_f(geom, f, u):
    """Delta_f u = Delta u - <grad f, grad u>."""
    du = cov_deriv(geom, u, 0)
    H = cov_deriv(geom, du, 1)
    return np.einsum("ij...,ij...->...", geom.g_inv, H) - _dot_grad(geom, f, du)


def rough_laplacian_tensor(geom, h, nabla_h=None):
    """Delta h_ij = g^{lk} (nabla nabla h)_{lkij}, assembled without the rank-4 array."""
    h = np.asarray(h)
    T = cov_deriv(geom, h, 2) if nabla_h is None else nabla_h
    out = 0.0
    for l in range(geom.n):
        dT = geom.d(T, l, 3)
        out = out + np.einsum("k...,kij...->ij...", geom.g_inv[l], dT)
    C, G = geom.contracted_christoffel, geom.raised_christoffel
    out = (out - np.einsum("m...,mij...->ij...", C, T)
           - np.einsum("kmi...,kmj...->ij...", G, T)
           - np.einsum("kmj...,kim...->ij...", G, T))
    return out


@_fieldwise(2)
def tensor_laplacian(geom, h):
    return rough_laplacian_tensor(geom, h)


@_fieldwise(2)
def tensor_laplacian_f(geom, f, h):
    """Delta_f h = Delta h - nabla_{grad f} h, componentwise in the tensor."""
    T = cov_deriv(geom, h, 2)
    return rough_laplacian_tensor(geom, h, T) - _dot_grad(geom, f, T)


@_fieldwise(2)
def rm_action(geom, h):
    """Rm(h, .)_ik = R_ijkl h^{jl}."""
    hu = raise_both(geom, np.asarray(h))
    return np.einsum("ijkl...,jl...->ik...", geom.riemann, hu)


def divergence_tensor(geom, h):
    T = cov_deriv(geom, h, 2)
    return np.einsum("kj...,kji...->i...", geom.g_inv, T)


def divergence_form(geom, w):
    T = cov_deriv(geom, w, 1)
    return np.einsum("ij...,ij...->...", geom.g_inv, T)


def divergence(geom, x):
    """Covariant divergence of a symmetric 2-tensor (-> 1-form) or a 1-form (-> scalar)."""
    if isinstance(x, Field):
        rank = x.rank
        out = divergence(geom, x.full()) if rank else None
        return as_field(geom.grid, out, rank - 1)
    x = np.asarray(x)
    rank = x.ndim - geom.grid.ndim
    return divergence_tensor(geom, x) if rank == 2 else divergence_form(geom, x)


def div_f(geom, f, x):
    """div_f h = div h - h(grad f, .) and div_f w = div w - w(grad f)."""
    if isinstance(x, Field):
        return as_field(geom.grid, div_f(geom, f, x.full()), x.rank - 1)
    x = np.asarray(x)
    rank = x.ndim - geom.grid.ndim
    df = geom.background_gradient(_arr(f))
    if rank == 2:
        return divergence_tensor(geom, x) - np.einsum("ij...,j...->i...", x, df)
    return divergence_form(geom, x) - np.einsum("i...,i...->...", x, df)


def div_f_dagger(geom, x):
    """Formal weighted adjoint of div_f.

    On 1-forms: -(nabla_i w_j + nabla_j w_i) / 2.  On functions: -du.
    """
    if isinstance(x, Field):
        return as_field(geom.grid, div_f_dagger(geom, x.full()), x.rank + 1)
    x = np.asarray(x)
    rank = x.ndim - geom.grid.ndim
    if rank == 0:
        return -cov_deriv(geom, x, 0)
    T = cov_deriv(geom, x, 1)
    return -0.5 * (T + np.swapaxes(T, 0, 1))


@_fieldwise(2)
def lie_derivative_metric(geom, w):
    """L_{w#} g = nabla_i w_j + nabla_j w_i."""
    T = cov_deriv(geom, w, 1)
    return T + np.swapaxes(T, 0, 1)


def metric_field(geom) -> SymTensorField:
    return SymTensorField.from_full(geom.grid, geom.g)


def ricci_field(geom) -> SymTensorField:
    return SymTensorField.from_full(geom.grid, geom.ricci)


def pointwise_norm(geom, x, rank=None):
    x = _arr(x)
    rank = x.ndim - geom.grid.ndim if rank is None else rank
    return np.sqrt(np.abs(contract(x, x, geom.g_inv, rank)))


def sup_norm(geom, x, rank=None) -> float:
    return float(np.max(pointwise_norm(geom, x, rank)))


def weighted_l2(geom, x, f=None, rank=None) -> float:
    """sqrt((x, x)_f)."""
    x = _arr(x)
    rank = x.ndim - geom.grid.ndim if rank is None else rank
    w = np.ones(geom.grid.shape) if f is None else np.exp(-_arr(f))
    return float(np.sqrt(np.abs(np.sum(contract(x, x, geom.g_inv, rank) * w * geom.dV))))
