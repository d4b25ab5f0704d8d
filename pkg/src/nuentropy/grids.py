"""Product coordinate grids, tensor fields, quadrature and the weighted inner product.

A grid is a product of one-dimensional axes.  Each axis is either

* ``periodic``: uniform, cell-centered, wraps around;
* ``pole_parity``: a latitude-like axis covering ``(0, pi)`` whose samples sit at
  ``(j + 1/2) * spacing``.  It is paired with a periodic *companion* axis of even
  resolution; crossing a pole maps ``(theta, phi)`` to ``(-theta, phi + pi)``
  and flips the sign of every component carrying a pole-axis index;
* ``mode``: a periodic axis that has been replaced by a single Fourier
  wavenumber.  Arrays may have any length along a mode axis; each slot is an
  independent copy (this is how batches of sector fields are evaluated).

Tensor arrays are laid out as ``batch + (n,) * rank + grid.shape``.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

PERIODIC = "periodic"
POLE = "pole_parity"
MODE = "mode"


@dataclass(frozen=True)
class Axis:
    n: int
    spacing: float
    rule: str = PERIODIC
    offset: float = 0.0
    companion: int | None = None
    wavenumber: int = 0

    @property
    def coords(self) -> np.ndarray:
        return self.offset + self.spacing * np.arange(self.n)


@dataclass(frozen=True)
class GridSpec:
    axes: tuple[Axis, ...]

    def __post_init__(self):
        for a, ax in enumerate(self.axes):
            if ax.rule not in (PERIODIC, POLE, MODE):
                raise ValueError(f"axis {a}: unknown boundary rule {ax.rule!r}")
            if ax.rule != MODE and ax.n < 4:
                raise ValueError(f"axis {a}: resolution {ax.n} < 4")
            if ax.spacing <= 0:
                raise ValueError(f"axis {a}: spacing must be positive")
            if ax.rule == POLE:
                c = ax.companion
                if c is None or not 0 <= c < len(self.axes) or c == a:
                    raise ValueError(f"axis {a}: pole_parity needs a companion axis")
                comp = self.axes[c]
                if comp.rule == POLE:
                    raise ValueError(f"axis {a}: companion axis {c} must be periodic")
                if comp.rule == PERIODIC and comp.n % 2:
                    raise ValueError(f"axis {a}: companion resolution must be even")

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(1 if ax.rule == MODE else ax.n for ax in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def coords(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per axis."""
        out = []
        for a, ax in enumerate(self.axes):
            shp = [1] * self.ndim
            shp[a] = self.shape[a]
            c = np.zeros(1) if ax.rule == MODE else ax.coords
            out.append(c.reshape(shp))
        return out

    def mesh(self) -> list[np.ndarray]:
        return [np.broadcast_to(c, self.shape) for c in self.coords()]

    def sector(self, modes: dict[int, int]) -> "GridSpec":
        """Replace the given periodic axes by fixed Fourier wavenumbers."""
        axes = list(self.axes)
        for a, m in modes.items():
            if axes[a].rule == POLE:
                raise ValueError("only periodic axes can be reduced to a sector")
            axes[a] = replace(axes[a], rule=MODE, wavenumber=int(m))
        return GridSpec(tuple(axes))

    def describe(self) -> dict:
        return {"axes": [
            {"n": ax.n, "spacing": ax.spacing, "rule": ax.rule, "offset": ax.offset,
             "companion": ax.companion, "wavenumber": ax.wavenumber}
            for ax in self.axes]}

    @classmethod
    def from_description(cls, d: dict) -> "GridSpec":
        return cls(tuple(Axis(**ax) for ax in d["axes"]))


def torus_grid(*ns: int, lengths: Sequence[float] | None = None) -> GridSpec:
    lengths = lengths or [2 * np.pi] * len(ns)
    return GridSpec(tuple(Axis(n, L / n, PERIODIC, 0.0) for n, L in zip(ns, lengths)))


def sphere_axes(n_theta: int, n_phi: int, first: int = 0) -> tuple[Axis, Axis]:
    h = np.pi / n_theta
    return (Axis(n_theta, h, POLE, h / 2, companion=first + 1),
            Axis(n_phi, 2 * np.pi / n_phi, PERIODIC, 0.0))


def sphere_grid(n_theta: int, n_phi: int) -> GridSpec:
    return GridSpec(sphere_axes(n_theta, n_phi))


def product_grid(a: GridSpec, b: GridSpec) -> GridSpec:
    shift = a.ndim
    axes = list(a.axes)
    for ax in b.axes:
        comp = None if ax.companion is None else ax.companion + shift
        axes.append(replace(ax, companion=comp))
    return GridSpec(tuple(axes))


# ---------------------------------------------------------------------------
# component bookkeeping

def sym_pairs(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i, n)]


def pack_sym(full: np.ndarray, n: int) -> np.ndarray:
    return np.stack([full[i, j] for i, j in sym_pairs(n)])


def unpack_sym(packed: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((n, n) + packed.shape[1:], dtype=packed.dtype)
    for c, (i, j) in enumerate(sym_pairs(n)):
        out[i, j] = packed[c]
        out[j, i] = packed[c]
    return out


def parity_signs(rank: int, n: int, axis: int) -> np.ndarray:
    """(-1)**(number of indices equal to ``axis``) for every component."""
    if rank == 0:
        return np.ones(())
    idx = np.indices((n,) * rank)
    return (-1.0) ** np.sum(idx == axis, axis=0)


# ---------------------------------------------------------------------------
# fields

@dataclass(frozen=True, eq=False)
class Field:
    grid: GridSpec
    components: np.ndarray
    rank: int = field(default=0, init=False)

    def __post_init__(self):
        expect = self._component_count()
        shp = self.components.shape
        if shp[0] != expect or tuple(shp[1:]) != self.grid.shape:
            raise ValueError(
                f"{type(self).__name__}: component array {shp} does not match "
                f"({expect},) + {self.grid.shape}")

    def _component_count(self) -> int:
        raise NotImplementedError

    def full(self) -> np.ndarray:
        raise NotImplementedError

    def component_names(self) -> list[str]:
        raise NotImplementedError

    def __add__(self, other):
        return type(self)(self.grid, self.components + other.components)

    def __sub__(self, other):
        return type(self)(self.grid, self.components - other.components)

    def __mul__(self, c):
        return type(self)(self.grid, self.components * c)

    __rmul__ = __mul__

    def __neg__(self):
        return type(self)(self.grid, -self.components)


class ScalarField(Field):
    def __post_init__(self):
        object.__setattr__(self, "rank", 0)
        super().__post_init__()

    def _component_count(self):
        return 1

    def full(self):
        return self.components[0]

    @classmethod
    def from_full(cls, grid, arr):
        return cls(grid, np.asarray(arr)[None] * np.ones((1,) + grid.shape))

    def component_names(self):
        return ["u"]


class VectorField(Field):
    """A 1-form, stored with lower (covariant) indices."""

    def __post_init__(self):
        object.__setattr__(self, "rank", 1)
        super().__post_init__()

    def _component_count(self):
        return self.grid.ndim

    def full(self):
        return self.components

    @classmethod
    def from_full(cls, grid, arr):
        return cls(grid, np.asarray(arr) * np.ones((1,) + grid.shape))

    def component_names(self):
        return [f"w{i}" for i in range(self.grid.ndim)]


class SymTensorField(Field):
    """Symmetric covariant 2-tensor; only the upper triangle is stored."""

    def __post_init__(self):
        object.__setattr__(self, "rank", 2)
        super().__post_init__()

    def _component_count(self):
        n = self.grid.ndim
        return n * (n + 1) // 2

    def full(self):
        return unpack_sym(self.components, self.grid.ndim)

    @classmethod
    def from_full(cls, grid, arr):
        n = grid.ndim
        arr = np.asarray(arr) * np.ones((n, n) + grid.shape)
        return cls(grid, pack_sym(arr, n))

    def component_names(self):
        return [f"h{i}{j}" for i, j in sym_pairs(self.grid.ndim)]


FIELD_TYPES = {0: ScalarField, 1: VectorField, 2: SymTensorField}


def as_field(grid: GridSpec, arr: np.ndarray, rank: int) -> Field:
    return FIELD_TYPES[rank].from_full(grid, arr)


def as_array(x) -> np.ndarray:
    return x.full() if isinstance(x, Field) else np.asarray(x)


# ---------------------------------------------------------------------------
# quadrature

def fejer_theta_weights(n: int) -> np.ndarray:
    """Weights w_j with sum_j w_j F(theta_j) sin(theta_j) = int_0^pi F sin dtheta.

    Exact for F = cos(k theta), k < n, on the cell-centered latitude nodes
    (these are Fejer's first-rule nodes in x = cos theta).
    """
    theta = (np.arange(n) + 0.5) * np.pi / n
    k = np.arange(1, n // 2 + 1)
    fw = (2.0 / n) * (1 - 2 * np.sum(np.cos(2 * np.outer(theta, k)) / (4 * k**2 - 1), axis=1))
    return fw / np.sin(theta)


def cell_weights(grid: GridSpec, rule: str = "midpoint") -> np.ndarray:
    """Coordinate cell volumes; ``rule`` is ``midpoint`` or ``spectral``."""
    w = np.ones(grid.shape)
    for a, ax in enumerate(grid.axes):
        shp = [1] * grid.ndim
        shp[a] = grid.shape[a]
        if ax.rule == MODE:
            wa = np.array([ax.n * ax.spacing])
        elif ax.rule == POLE and rule == "spectral":
            wa = fejer_theta_weights(ax.n)
        else:
            wa = np.full(ax.n, ax.spacing)
        w = w * wa.reshape(shp)
    return w


@dataclass(frozen=True, eq=False)
class WeightedMeasure:
    dV: np.ndarray
    weight: np.ndarray
    normalization: float = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.dV) <= 0) or np.any(np.asarray(self.weight) <= 0):
            raise ValueError("measure must be positive at every node")

    @property
    def density(self) -> np.ndarray:
        return self.normalization * self.weight * self.dV


def integrate(u, measure: WeightedMeasure, grid: GridSpec | None = None) -> float:
    """Quadrature sum of ``u * weight * dV`` times the normalization."""
    if isinstance(u, Field):
        if u.rank != 0:
            raise ValueError("integrate expects a scalar field")
        if grid is not None and u.grid != grid:
            raise ValueError("field and measure live on different grids")
        u = u.full()
    u = np.asarray(u)
    dens = measure.density
    if u.shape[-dens.ndim:] != dens.shape and u.shape != ():
        raise ValueError(f"grid mismatch: field {u.shape} vs measure {dens.shape}")
    # fixed C-order reduction keeps results bit-reproducible
    return np.sum(u * dens, axis=tuple(range(-dens.ndim, 0)))


def contract(a: np.ndarray, b: np.ndarray, g_inv: np.ndarray, rank: int) -> np.ndarray:
    """Pointwise <a, b> with all indices raised by ``g_inv``; conjugates ``a``."""
    a = np.conj(a)
    if rank == 0:
        return a * b
    if rank == 1:
        return np.einsum("i...,ij...,j...->...", a, g_inv, b)
    if rank == 2:
        return np.einsum("ij...,ik...,jl...,kl...->...", a, g_inv, g_inv, b, optimize=True)
    raise ValueError("rank must be 0, 1 or 2")


def inner_f(a, b, geom, measure: WeightedMeasure | None = None) -> float:
    """Weighted L2 pairing (a, b)_f = int <a, b> e^{-f} dV."""
    ra = a.rank if isinstance(a, Field) else None
    rb = b.rank if isinstance(b, Field) else None
    if ra is not None and rb is not None and ra != rb:
        raise ValueError(f"rank mismatch: {ra} vs {rb}")
    A, B = as_array(a), as_array(b)
    rank = ra if ra is not None else rb
    if rank is None:
        rank = A.ndim - geom.grid.ndim
    if measure is None:
        measure = WeightedMeasure(geom.dV, np.ones(geom.grid.shape))
    val = integrate(contract(A, B, geom.g_inv, rank), measure)
    return val.real if np.isrealobj(A) and np.isrealobj(B) else val


# ---------------------------------------------------------------------------
# halo handling

def pole_mirror(arr: np.ndarray, grid: GridSpec, axis: int, rank: int) -> np.ndarray:
    """Values on the far side of the poles, ordered as extended indices n..2n-1."""
    ax = grid.axes[axis]
    nd = grid.ndim
    gaxis = arr.ndim - nd + axis
    comp_axis = arr.ndim - nd + ax.companion
    cax = grid.axes[ax.companion]
    if cax.rule == MODE:
        shifted = arr * (-1.0) ** cax.wavenumber
    else:
        shifted = np.roll(arr, cax.n // 2, axis=comp_axis)
    sign = parity_signs(rank, nd, axis).reshape(
        (nd,) * rank + (1,) * nd) if rank else 1.0
    return sign * np.flip(shifted, axis=gaxis)


def extend_periodic(arr, grid, axis, rank):
    """Array along ``axis`` as a periodic sequence (pole axes double in length)."""
    if grid.axes[axis].rule == POLE:
        gaxis = arr.ndim - grid.ndim + axis
        return np.concatenate([arr, pole_mirror(arr, grid, axis, rank)], axis=gaxis)
    return arr


def ghost_fill(arr, grid: GridSpec, rank: int, width: int = 2, axes=None) -> np.ndarray:
    """Pad with a halo of ``width`` cells on every (non-mode) axis.

    Pole axes are padded first so the companion shift acts on the unpadded
    longitude axis.
    """
    if isinstance(arr, Field):
        rank, arr = arr.rank, arr.full()
    nd = grid.ndim
    axes = range(nd) if axes is None else axes
    order = sorted(axes, key=lambda a: grid.axes[a].rule != POLE)
    out = arr
    for a in order:
        ax = grid.axes[a]
        if ax.rule == MODE:
            continue
        gaxis = out.ndim - nd + a
        if ax.rule == POLE:
            # halo for the pole axis must be computed from an array that is
            # unpadded along the companion axis, guaranteed by the ordering
            mirror = pole_mirror(out, grid, a, rank)
            n = ax.n
            low = np.take(mirror, range(n - width, n), axis=gaxis)
            high = np.take(mirror, range(width), axis=gaxis)
        else:
            n = out.shape[gaxis]
            low = np.take(out, range(n - width, n), axis=gaxis)
            high = np.take(out, range(width), axis=gaxis)
        out = np.concatenate([low, out, high], axis=gaxis)
    return out


def interior(padded: np.ndarray, grid: GridSpec, width: int = 2) -> np.ndarray:
    nd = grid.ndim
    sl = [slice(None)] * (padded.ndim - nd)
    for ax in grid.axes:
        sl.append(slice(None) if ax.rule == MODE else slice(width, -width))
    return padded[tuple(sl)]


def refill_halo(padded, grid, rank, width=2):
    return ghost_fill(interior(padded, grid, width), grid, rank, width)


# ---------------------------------------------------------------------------
# random smooth fields

def random_smooth_field(seed: int, rank: int, grid: GridSpec, embedding,
                        decay: float = 1.0, degree: int = 3,
                        amplitude: float = 1.0) -> Field:
    """Random smooth field built from polynomials in ambient coordinates.

    ``embedding(grid)`` returns ``(X, J)`` with ambient coordinates ``X``
    (shape ``(d,) + grid.shape``) and Jacobian ``J[a, i] = dX^a / dx^i``.
    Coefficients of total degree k are scaled by ``exp(-decay * k)``, so large
    ``decay`` leaves only the constant ambient mode.  Because the field is a
    pullback of a smooth ambient object it automatically satisfies the pole
    parity rules.
    """
    rng = np.random.default_rng(seed)
    X, J = embedding(grid)
    d = X.shape[0]
    monos = _monomials(d, degree)

    def random_function():
        out = np.zeros(grid.shape)
        for powers in monos:
            k = sum(powers)
            term = np.ones(grid.shape)
            for a, p in enumerate(powers):
                if p:
                    term = term * X[a] ** p
            out = out + rng.standard_normal() * np.exp(-decay * k) * term
        return out

    n = grid.ndim
    if rank == 0:
        return ScalarField(grid, (amplitude * random_function())[None])
    if rank == 1:
        W = np.stack([random_function() for _ in range(d)])
        return VectorField(grid, amplitude * np.einsum("a...,ai...->i...", W, J))
    if rank == 2:
        H = np.empty((d, d) + grid.shape)
        for a in range(d):
            for b in range(a, d):
                H[a, b] = H[b, a] = random_function()
        full = np.einsum("ab...,ai...,bj...->ij...", H, J, J)
        return SymTensorField.from_full(grid, amplitude * full)
    raise ValueError("rank must be 0, 1 or 2")


def _monomials(d, degree):
    out = [()]
    for _ in range(d):
        out = [m + (p,) for m in out for p in range(degree + 1)]
    return [m for m in out if sum(m) <= degree]


# ---------------------------------------------------------------------------
# serialization

def field_header(f: Field) -> dict:
    return {"grid": f.grid.describe(), "rank": f.rank,
            "components": f.component_names(), "order": "row-major"}


def field_to_csv(f: Field) -> str:
    """CSV with a ``#``-prefixed JSON header, then (coordinates..., components...)."""
    buf = io.StringIO()
    buf.write("# " + json.dumps(field_header(f)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    nd = f.grid.ndim
    w.writerow([f"x{a}" for a in range(nd)] + f.component_names())
    mesh = [m.ravel() for m in f.grid.mesh()]
    comps = f.components.reshape(f.components.shape[0], -1)
    for p in range(f.grid.size):
        w.writerow([repr(float(m[p])) for m in mesh] + [repr(float(c[p])) for c in comps])
    return buf.getvalue()


def field_from_csv(text: str) -> Field:
    lines = text.splitlines()
    header = json.loads(lines[0][2:])
    grid = GridSpec.from_description(header["grid"])
    rows = list(csv.reader(lines[2:]))
    data = np.array(rows, dtype=float)[:, grid.ndim:].T
    comps = data.reshape((data.shape[0],) + grid.shape)
    return FIELD_TYPES[header["rank"]](grid, comps)


def save_field(path, f: Field) -> None:
    """Binary container: JSON header plus row-major component data (npz)."""
    np.savez(path, header=np.frombuffer(json.dumps(field_header(f)).encode(), dtype=np.uint8),
             data=f.components)


def load_field(path) -> Field:
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode())
        grid = GridSpec.from_description(header["grid"])
        return FIELD_TYPES[header["rank"]](grid, z["data"])
