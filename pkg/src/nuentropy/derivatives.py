"""Partial derivatives of component arrays on product grids.

Two schemes share one interface:

``spectral``
    Fourier differentiation.  Pole axes are first extended to a full circle
    through the parity rule (the double Fourier sphere trick), so coordinate
    components of smooth tensors are differentiated as smooth periodic data.
``fd2`` / ``fd4``
    Centered stencils of order 2 or 4 evaluated on ghost-filled arrays.

Only arrays whose indices are all covariant should be differentiated: upper
indices pick up 1/sin(theta) factors that are not smooth across the poles.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .grids import MODE, POLE, GridSpec, ghost_fill, pole_mirror

SCHEMES = ("spectral", "fd2", "fd4")

_FD_COEFFS = {
    "fd2": {1: 0.5},
    "fd4": {1: 2.0 / 3.0, 2: -1.0 / 12.0},
}


@lru_cache(maxsize=64)
def _wavenumbers(n: int, spacing: float) -> np.ndarray:
    k = 2 * np.pi * np.fft.fftfreq(n, d=spacing)
    if n % 2 == 0:
        k[n // 2] = 0.0
    return k


def symbol(scheme: str, k: float, spacing: float, n_full: int) -> complex:
    """Fourier symbol of d/dx acting on exp(i k x)."""
    if scheme == "spectral":
        if n_full % 2 == 0 and abs(abs(k) - n_full / 2 * 2 * np.pi / (n_full * spacing)) < 1e-12:
            return 0.0
        return 1j * k
    coeffs = _FD_COEFFS[scheme]
    return 1j * sum(2 * c * np.sin(s * k * spacing) for s, c in coeffs.items()) / spacing


def _periodic_spectral(arr, gaxis, spacing):
    n = arr.shape[gaxis]
    k = _wavenumbers(n, spacing)
    shp = [1] * arr.ndim
    shp[gaxis] = n
    if np.isrealobj(arr):
        kr = k[: n // 2 + 1].copy()
        kr = np.abs(kr)
        if n % 2 == 0:
            kr[-1] = 0.0
        shp[gaxis] = kr.size
        return np.fft.irfft(np.fft.rfft(arr, axis=gaxis) * (1j * kr).reshape(shp),
                            n=n, axis=gaxis)
    return np.fft.ifft(np.fft.fft(arr, axis=gaxis) * (1j * k).reshape(shp), axis=gaxis)


def _stencil(padded, gaxis, n, spacing, scheme, width):
    out = 0.0
    for s, c in _FD_COEFFS[scheme].items():
        plus = np.take(padded, range(width + s, width + s + n), axis=gaxis)
        minus = np.take(padded, range(width - s, width - s + n), axis=gaxis)
        out = out + c * (plus - minus)
    return out / spacing


def derivative(arr: np.ndarray, axis: int, grid: GridSpec, scheme: str, rank: int = 0):
    """d/dx^axis of a component array laid out as ``batch + (n,)*rank + grid``."""
    ax = grid.axes[axis]
    nd = grid.ndim
    gaxis = arr.ndim - nd + axis
    if ax.rule == MODE:
        return arr * symbol(scheme, ax.wavenumber * 2 * np.pi / (ax.n * ax.spacing),
                            ax.spacing, ax.n)
    if scheme == "spectral":
        if ax.rule == POLE:
            ext = np.concatenate([arr, pole_mirror(arr, grid, axis, rank)], axis=gaxis)
            d = _periodic_spectral(ext, gaxis, ax.spacing)
            return np.take(d, range(ax.n), axis=gaxis)
        return _periodic_spectral(arr, gaxis, ax.spacing)
    width = max(_FD_COEFFS[scheme])
    padded = ghost_fill(arr, grid, rank, width, axes=[axis])
    return _stencil(padded, gaxis, ax.n, ax.spacing, scheme, width)


def derivative_T(arr: np.ndarray, axis: int, grid: GridSpec, scheme: str) -> np.ndarray:
    """Transpose (in the plain Euclidean sense) of :func:`derivative` for real scalars."""
    ax = grid.axes[axis]
    nd = grid.ndim
    gaxis = arr.ndim - nd + axis
    if ax.rule != POLE:
        # centered periodic operators are antisymmetric
        return -derivative(arr, axis, grid, scheme)
    n = ax.n
    padded = np.concatenate([arr, np.zeros_like(arr)], axis=gaxis)
    ext_grid = _doubled(grid, axis)
    d = -derivative(padded, axis, ext_grid, scheme)
    first = np.take(d, range(n), axis=gaxis)
    second = np.take(d, range(n, 2 * n), axis=gaxis)
    # fold the mirrored half back: inverse of pole_mirror for scalars
    back = np.flip(second, axis=gaxis)
    cax = grid.axes[ax.companion]
    cg = arr.ndim - nd + ax.companion
    if cax.rule == MODE:
        back = back * (-1.0) ** cax.wavenumber
    else:
        back = np.roll(back, -(cax.n // 2), axis=cg)
    return first + back


@lru_cache(maxsize=32)
def _doubled(grid: GridSpec, axis: int) -> GridSpec:
    from dataclasses import replace
    axes = list(grid.axes)
    axes[axis] = replace(axes[axis], n=2 * axes[axis].n, rule="periodic", companion=None)
    return GridSpec(tuple(axes))


def gradient_components(u: np.ndarray, grid: GridSpec, scheme: str) -> np.ndarray:
    """Stack of partial derivatives of a scalar array, index first."""
    return np.stack([derivative(u, a, grid, scheme, 0) for a in range(grid.ndim)],
                    axis=u.ndim - grid.ndim)


def partials(T: np.ndarray, grid: GridSpec, scheme: str, rank: int) -> np.ndarray:
    """Array of all partial derivatives: out[k, ...] = d_k T[...]."""
    lead = T.ndim - grid.ndim - rank
    parts = [derivative(T, a, grid, scheme, rank) for a in range(grid.ndim)]
    return np.stack(parts, axis=lead)
