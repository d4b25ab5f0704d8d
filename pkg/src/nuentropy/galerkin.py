"""Smooth band-limited trial spaces and Fourier-sector bookkeeping.

Grid-level derivative matrices annihilate the Nyquist modes, so eigenproblems
posed directly on grid values carry spurious near-null vectors.  Eigenproblems
are therefore solved by Rayleigh-Ritz on trial spaces of genuinely smooth
fields:

* on a sphere factor ``(theta, phi)`` the scalars are
  ``sin^|m|(theta) T_j(cos theta) e^{i m phi}`` with ``j + |m| <= L`` (this spans
  the spherical harmonics of degree ``<= L``), and the 1-form frame consists of
  the pulled-back ambient differentials ``dz`` and ``d(x +- i y)``;
* on a circle factor the scalars are ``e^{i k x}`` with frame ``dx``.

Tensors are products of scalars with symmetrized frame products.  The default
degree ``L = n_theta // 2 - 2`` keeps every Galerkin integrand inside the band
on which the latitude quadrature is exact.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .grids import MODE, PERIODIC, POLE, GridSpec


@dataclass(frozen=True)
class Factor:
    kind: str            # sphere | circle
    axes: tuple[int, ...]  # (theta, phi) or (x,)
    degree: int


def factors(grid: GridSpec, degree: int | None = None) -> list[Factor]:
    out, used = [], set()
    for a, ax in enumerate(grid.axes):
        if ax.rule == POLE:
            L = degree if degree is not None else max(1, ax.n // 2 - 2)
            out.append(Factor("sphere", (a, ax.companion), L))
            used |= {a, ax.companion}
    for a, ax in enumerate(grid.axes):
        if a not in used:
            L = degree if degree is not None else max(1, ax.n // 3)
            out.append(Factor("circle", (a,), L))
    return out


def _wavenumber_axis(f: Factor) -> int:
    return f.axes[-1]


def _scalar_candidates(grid: GridSpec, f: Factor, m: int | None):
    """Scalar functions of one factor; ``m`` fixes the wavenumber (mode axis)."""
    c = grid.coords()
    out = []
    if f.kind == "sphere":
        th, ph = c[f.axes[0]], c[f.axes[1]]
        ms = [m] if m is not None else range(-f.degree, f.degree + 1)
        for mm in ms:
            if abs(mm) > f.degree:
                continue
            base = np.sin(th) ** abs(mm) * np.exp(1j * mm * ph)
            for j in range(f.degree - abs(mm) + 1):
                out.append((mm, base * np.cos(j * th)))
    else:
        x = c[f.axes[0]]
        ks = [m] if m is not None else range(-f.degree, f.degree + 1)
        for k in ks:
            if abs(k) <= f.degree:
                out.append((k, np.exp(1j * k * x)))
    return out


def _frame(grid: GridSpec, f: Factor):
    """Ambient 1-form frame of a factor: list of (wavenumber, covector array)."""
    n = grid.ndim
    c = grid.coords()
    shape = grid.shape
    out = []
    if f.kind == "sphere":
        a, b = f.axes
        th, ph = np.broadcast_to(c[a], shape), np.broadcast_to(c[b], shape)
        dz = np.zeros((n,) + shape, complex)
        dz[a] = -np.sin(th)
        out.append((0, dz))
        for s in (1, -1):
            dw = np.zeros((n,) + shape, complex)
            e = np.exp(1j * s * ph)
            dw[a] = e * np.cos(th)
            dw[b] = 1j * s * e * np.sin(th)
            out.append((s, dw))
    else:
        dx = np.zeros((n,) + shape, complex)
        dx[f.axes[0]] = 1.0
        out.append((0, dx))
    return out


def _products(grid, facs, target):
    """All products of per-factor scalars whose wavenumbers match ``target``.

    ``target`` maps a factor index to the required wavenumber (None = free).
    """
    lists = [_scalar_candidates(grid, f, target.get(i)) for i, f in enumerate(facs)]
    for combo in itertools.product(*lists):
        val = 1.0
        for _, arr in combo:
            val = val * arr
        yield np.broadcast_to(val, grid.shape)


def candidates(grid: GridSpec, rank: int, degree: int | None = None) -> np.ndarray:
    """Spanning set (possibly redundant) of smooth band-limited fields of ``rank``.

    On mode axes the implied ``e^{i m phi}`` is factored out, so only
    candidates with matching total wavenumber are produced.
    """
    facs = factors(grid, degree)
    mode_of = {}
    for i, f in enumerate(facs):
        ax = grid.axes[_wavenumber_axis(f)]
        mode_of[i] = ax.wavenumber if ax.rule == MODE else None
    frames = [[(i, m, arr) for m, arr in _frame(grid, f)] for i, f in enumerate(facs)]
    frame_all = [x for fr in frames for x in fr]

    def required(shifts):
        # wavenumber each factor's scalar must carry
        return {i: (None if mode_of[i] is None else mode_of[i] - shifts.get(i, 0))
                for i in range(len(facs))}

    out = []
    n = grid.ndim
    if rank == 0:
        out = [u[None] for u in _products(grid, facs, required({}))]
    elif rank == 1:
        for i, m, w in frame_all:
            for u in _products(grid, facs, required({i: m})):
                out.append(u * w)
    elif rank == 2:
        for (p, q) in itertools.combinations_with_replacement(range(len(frame_all)), 2):
            i, mi, wi = frame_all[p]
            j, mj, wj = frame_all[q]
            shifts = {i: mi}
            shifts[j] = shifts.get(j, 0) + mj
            prod = 0.5 * (np.einsum("a...,b...->ab...", wi, wj)
                          + np.einsum("a...,b...->ab...", wj, wi))
            for u in _products(grid, facs, required(shifts)):
                out.append(u * prod)
    else:
        raise ValueError("rank must be 0, 1 or 2")
    if not out:
        return np.zeros((0,) + (n,) * rank + grid.shape, complex)
    return np.stack(out).astype(complex)


def raise_all(arr, g_inv, rank):
    """Raise every tensor index of a batch ``(nb,) + (n,)*rank + grid``."""
    if rank == 0:
        return arr
    if rank == 1:
        return np.einsum("ij...,bj...->bi...", g_inv, arr)
    return np.einsum("ik...,jl...,bkl...->bij...", g_inv, g_inv, arr, optimize=True)


def gram(basis, g_inv, density, rank, other=None) -> np.ndarray:
    """Matrix of weighted pairings ``sum <b_i, c_j> density``."""
    other = basis if other is None else other
    nb, nc = len(basis), len(other)
    C = (raise_all(other, g_inv, rank) * density).reshape(nc, -1)
    return np.conj(basis.reshape(nb, -1)) @ C.T


def orthonormal_basis(cands, g_inv, density, rank, rtol=1e-10):
    """Weighted-orthonormal basis of span(cands); returns (basis, coefficient matrix)."""
    if len(cands) == 0:
        return cands, np.zeros((0, 0))
    G = gram(cands, g_inv, density, rank)
    G = 0.5 * (G + G.conj().T)
    w, U = np.linalg.eigh(G)
    keep = w > rtol * w.max()
    T = U[:, keep] / np.sqrt(w[keep])
    basis = np.tensordot(T.T, cands, axes=1)
    return basis, T


def sectors(grid: GridSpec, invariant_axes, degree: int | None = None, rank: int = 2):
    """Half-plane of Fourier sectors over ``invariant_axes`` with multiplicity weights.

    Returns a list of (modes dict, weight) with weight 2 for sectors paired
    with their complex conjugate and 1 for self-conjugate ones.
    """
    facs = factors(grid, degree)
    bound = {}
    for a in invariant_axes:
        L = max(f.degree for f in facs if a in f.axes)
        # each sphere frame covector carries up to one unit of wavenumber
        sphere = any(f.kind == "sphere" and a in f.axes for f in facs)
        bound[a] = L + (rank if sphere else 0)
        if grid.axes[a].rule != PERIODIC:
            raise ValueError(f"axis {a} is not periodic")
        bound[a] = min(bound[a], (grid.axes[a].n - 1) // 2)
    axes = list(invariant_axes)
    out = []
    for ms in itertools.product(*[range(-bound[a], bound[a] + 1) for a in axes]):
        nz = [m for m in ms if m != 0]
        if nz and nz[0] < 0:
            continue
        out.append((dict(zip(axes, ms)), 1 if not nz else 2))
    return out


def restrict(arr, grid: GridSpec, modes: dict[int, int]):
    """Background array (trailing grid axes) restricted to a sector grid."""
    arr = np.asarray(arr)
    sl = [slice(None)] * arr.ndim
    for a in modes:
        sl[arr.ndim - grid.ndim + a] = slice(0, 1)
    return arr[tuple(sl)]


@dataclass
class SectorPair:
    value: float
    modes: dict
    weight: int
    field: np.ndarray       # components on the sector grid, weighted-normalized
    residual: float         # relative weighted norm of op(h) - value h


def sector_spectrum(geom, f, rank: int, apply, constraint=None, constraint_rank: int = 1,
                    degree: int | None = None, mean_zero: bool = False, rtol: float = 1e-9):
    """Rayleigh-Ritz spectrum of a self-adjoint weighted operator, sector by sector.

    ``apply(sector_geom, sector_f, field) -> field`` is the operator and
    ``constraint(sector_geom, sector_f, field)`` (optional) a map whose vanishing,
    tested against smooth fields of ``constraint_rank``, defines the admissible
    subspace.  ``mean_zero`` removes constants (scalar problems).  Returns a
    list of :class:`SectorPair` sorted by decreasing value, plus the largest
    asymmetry seen.
    """
    from .solvers import rayleigh_ritz

    f = np.asarray(f.full() if hasattr(f, "full") else f)
    inv = geom.invariant_axes()
    pairs, asym = [], 0.0
    for modes, weight in sectors(geom.grid, inv, degree, rank):
        sg = geom.sector(modes)
        fa = restrict(f, geom.grid, modes)
        dens = sg.dV * np.exp(-fa)
        cands = candidates(sg.grid, rank, degree)
        if rank == 0:
            cands = cands[:, 0]
        B, _ = orthonormal_basis(cands, sg.g_inv, dens, rank)
        if len(B) == 0:
            continue
        LB = np.stack([apply(sg, fa, b) for b in B])
        A = gram(B, sg.g_inv, dens, rank, LB)
        C = None
        if constraint is not None:
            E, _ = orthonormal_basis(candidates(sg.grid, constraint_rank, degree),
                                     sg.g_inv, dens, constraint_rank)
            if len(E):
                DB = np.stack([constraint(sg, fa, b) for b in B])
                C = gram(E, sg.g_inv, dens, constraint_rank, DB)
        if mean_zero and all(m == 0 for m in modes.values()):
            row = np.conj(np.sum(B * dens, axis=tuple(range(1, 1 + sg.grid.ndim))))[None]
            C = row if C is None else np.vstack([C, row])
        r = rayleigh_ritz(A, C=C, rtol=rtol)
        asym = max(asym, r.asymmetry)
        for k, val in enumerate(r.values):
            coef = r.coefficients[:, k]
            h = np.tensordot(coef, B, axes=1)
            Lh = np.tensordot(coef, LB, axes=1)
            res = Lh - val * h
            num = np.sum(_pair(res, res, sg.g_inv, rank) * dens).real
            den = np.sum(_pair(h, h, sg.g_inv, rank) * dens).real
            pairs.append(SectorPair(float(val), dict(modes), weight, h,
                                    float(np.sqrt(abs(num) / max(den, 1e-300)))))
    pairs.sort(key=lambda p: -p.value)
    return pairs, asym


def _pair(a, b, g_inv, rank):
    ra = raise_all(np.asarray(b)[None], g_inv, rank)[0]
    return np.sum(np.conj(a) * ra, axis=tuple(range(rank))) if rank else np.conj(a) * b
