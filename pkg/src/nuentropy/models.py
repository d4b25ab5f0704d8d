"""Closed-form model geometries: round 2-spheres, their products and the flat torus."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import curvature as cv
from .grids import (GridSpec, ScalarField, SymTensorField, VectorField, product_grid,
                    random_smooth_field, sphere_grid, torus_grid)


class ModelError(ValueError):
    pass


@dataclass(eq=False)
class ModelGeometry:
    name: str
    grid: GridSpec
    geom: cv.GeometryState
    f: ScalarField
    tau: float | None
    exact: dict
    embedding: object
    blocks: list[tuple[int, int]] = field(default_factory=list)
    radii: list[float] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def __iter__(self):
        yield self.geom
        yield self.f
        yield self.tau

    @property
    def is_shrinker(self) -> bool:
        return self.tau is not None

    @property
    def n(self) -> int:
        return self.grid.ndim

    @property
    def exact_volume(self) -> float:
        return float(np.prod([4 * np.pi * r**2 for r in self.radii]))

    @property
    def nu(self) -> float | None:
        """nu from the constant-potential closed form tau*R + f - n."""
        if self.tau is None:
            return None
        R = sum(2.0 / r**2 for r in self.radii)
        return self.tau * R + float(self.f.full().flat[0]) - self.n

    def with_backend(self, backend: str, fd_order: int = 4) -> "ModelGeometry":
        geom = _geometry(self.exact["g"], self.grid, backend, fd_order, self.exact)
        return ModelGeometry(self.name, self.grid, geom, self.f, self.tau, self.exact,
                             self.embedding, self.blocks, self.radii,
                             dict(self.params, backend=backend))

    def random_field(self, seed: int, rank: int, decay: float = 1.0, degree: int = 3,
                     amplitude: float = 1.0):
        return random_smooth_field(seed, rank, self.grid, self.embedding, decay, degree,
                                   amplitude)


def _geometry(g, grid, backend, fd_order, exact):
    if backend == "analytic":
        return cv.build_geometry(g, "analytic", grid=grid, exact=exact)
    return cv.build_geometry(g, backend, grid=grid, fd_order=fd_order)


def _constant_curvature(g, K):
    return K * (np.einsum("ac...,bd...->abcd...", g, g) - np.einsum("ad...,bc...->abcd...", g, g))


def _potential(volume, tau, n, grid):
    f0 = np.log(volume / (4 * np.pi * tau) ** (n / 2))
    return ScalarField(grid, np.full((1,) + grid.shape, f0))


def _sphere_embedding(r):
    def emb(grid: GridSpec, first: int = 0):
        th, ph = grid.coords()[first], grid.coords()[first + 1]
        th, ph = np.broadcast_to(th, grid.shape), np.broadcast_to(ph, grid.shape)
        st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
        X = r * np.stack([st * cp, st * sp, ct])
        J = np.zeros((3, grid.ndim) + grid.shape)
        J[:, first] = r * np.stack([ct * cp, ct * sp, -st])
        J[:, first + 1] = r * np.stack([-st * sp, st * cp, np.zeros_like(st)])
        return X, J
    return emb


def _torus_embedding(grid: GridSpec, first: int = 0, count: int | None = None):
    count = grid.ndim if count is None else count
    Xs, Js = [], []
    for a in range(first, first + count):
        x = np.broadcast_to(grid.coords()[a], grid.shape)
        Xs += [np.cos(x), np.sin(x)]
        Ja = np.zeros((2, grid.ndim) + grid.shape)
        Ja[0, a], Ja[1, a] = -np.sin(x), np.cos(x)
        Js.append(Ja)
    return np.stack(Xs), np.concatenate(Js)


def round_sphere2(radius: float = 1.0, n_theta: int = 24, n_phi: int = 48,
                  backend: str = "analytic", fd_order: int = 4) -> ModelGeometry:
    """Round S^2(r) in (theta, phi) coordinates; Einstein with tau = r^2 / 2."""
    if radius <= 0:
        raise ModelError("radius must be positive")
    if n_phi % 2:
        raise ModelError("n_phi must be even")
    grid = sphere_grid(n_theta, n_phi)
    th = np.broadcast_to(grid.coords()[0], grid.shape)
    r2 = radius**2
    g = np.zeros((2, 2) + grid.shape)
    g[0, 0] = r2
    g[1, 1] = r2 * np.sin(th) ** 2
    gam = np.zeros((2, 2, 2) + grid.shape)
    gam[0, 1, 1] = -np.sin(th) * np.cos(th)
    gam[1, 0, 1] = gam[1, 1, 0] = np.cos(th) / np.sin(th)
    exact = {"g": g, "christoffel": gam, "riemann": _constant_curvature(g, 1 / r2)}
    tau = r2 / 2
    geom = _geometry(g, grid, backend, fd_order, exact)
    f = _potential(4 * np.pi * r2, tau, 2, grid)
    return ModelGeometry("sphere2", grid, geom, f, tau, exact, _sphere_embedding(radius),
                         blocks=[(0, 2)], radii=[radius],
                         params={"r": radius, "backend": backend})


def flat_torus(*resolutions: int, backend: str = "spectral", fd_order: int = 4) -> ModelGeometry:
    """Flat torus (R/2piZ)^n; an operator test bed, not a shrinker."""
    resolutions = resolutions or (32, 32)
    grid = torus_grid(*resolutions)
    n = grid.ndim
    g = np.zeros((n, n) + grid.shape)
    for i in range(n):
        g[i, i] = 1.0
    exact = {"g": g, "christoffel": np.zeros((n, n, n) + grid.shape),
             "riemann": np.zeros((n,) * 4 + grid.shape)}
    geom = _geometry(g, grid, backend, fd_order, exact)
    f = ScalarField(grid, np.zeros((1,) + grid.shape))
    return ModelGeometry(f"torus{n}", grid, geom, f, None, exact, _torus_embedding,
                         blocks=[(0, n)], params={"backend": backend})


def product(A: ModelGeometry, B: ModelGeometry, backend: str | None = None,
            fd_order: int = 4) -> ModelGeometry:
    """Riemannian product of two Einstein models with equal tau."""
    if not (A.is_shrinker and B.is_shrinker):
        raise ModelError("both factors must be Einstein shrinkers")
    if not np.isclose(A.tau, B.tau, rtol=1e-12):
        raise ModelError(f"tau mismatch: {A.tau} vs {B.tau}")
    backend = backend or A.params.get("backend", "analytic")
    grid = product_grid(A.grid, B.grid)
    na, nb = A.n, B.n
    n = na + nb
    ea, eb = _lift(A.exact, grid, 0, na, n), _lift(B.exact, grid, na, nb, n)
    exact = {k: ea[k] + eb[k] for k in ea}
    geom = _geometry(exact["g"], grid, backend, fd_order, exact)
    vol = A.exact_volume * B.exact_volume
    f = _potential(vol, A.tau, n, grid)

    def emb(g2: GridSpec):
        Xa, Ja = _lift_embedding(A.embedding, g2, 0, A.grid.ndim)
        Xb, Jb = _lift_embedding(B.embedding, g2, na, B.grid.ndim)
        return np.concatenate([Xa, Xb]), np.concatenate([Ja, Jb])

    blocks = [(s, d) for s, d in A.blocks] + [(s + na, d) for s, d in B.blocks]
    return ModelGeometry(f"{A.name}x{B.name}", grid, geom, f, A.tau, exact, emb,
                         blocks=blocks, radii=A.radii + B.radii,
                         params={"backend": backend, "factors": [A.params, B.params]})


def _lift(exact, grid, start, dim, n):
    """Embed factor tensors (which depend only on that factor's axes) block-diagonally."""
    out = {}
    sl = slice(start, start + dim)
    nd = grid.ndim

    def spread(arr, rank):
        # factor arrays carry the factor's grid axes; broadcast to the full grid
        comp = arr.shape[:rank]
        fshape = arr.shape[rank:]
        shp = [1] * nd
        shp[start:start + dim] = fshape
        return np.broadcast_to(arr.reshape(comp + tuple(shp)), comp + grid.shape)

    for key, rank in (("g", 2), ("christoffel", 3), ("riemann", 4)):
        full = np.zeros((n,) * rank + grid.shape)
        full[(sl,) * rank] = spread(exact[key], rank)
        out[key] = full
    return out


def _lift_embedding(emb, grid, first, dim):
    from dataclasses import replace
    # companions inside the factor are relative to the product grid; rebase
    sub = GridSpec(tuple(replace(ax, companion=None if ax.companion is None
                                 else ax.companion - first)
                         for ax in grid.axes[first:first + dim]))
    X, J = emb(sub)
    nd = grid.ndim
    shp = [1] * nd
    shp[first:first + dim] = sub.shape
    Xf = np.broadcast_to(X.reshape((X.shape[0],) + tuple(shp)), (X.shape[0],) + grid.shape)
    Jf = np.zeros((X.shape[0], nd) + grid.shape)
    Jf[:, first:first + dim] = np.broadcast_to(
        J.reshape(J.shape[:2] + tuple(shp)), (J.shape[0], dim) + grid.shape)
    return Xf, Jf


# ---------------------------------------------------------------------------
# perturbations

PERTURBATIONS = ("conformal", "metric_itself", "ricci_tensor", "factor_difference",
                 "lie_derivative", "random_smooth")


def killing_field(model: ModelGeometry, block: int = 0) -> VectorField:
    """Rotation about the polar axis of one sphere factor, as a 1-form."""
    start, dim = model.blocks[block]
    if dim != 2 or model.grid.axes[start].rule != "pole_parity":
        raise ModelError("rotation Killing field needs a sphere factor")
    w = np.zeros((model.n,) + model.grid.shape)
    w[start + 1] = model.geom.g[start + 1, start + 1]
    return VectorField(model.grid, w)


def perturbation(kind: str, model: ModelGeometry, seed: int = 0, decay: float = 1.0,
                 u=None, X=None, amplitude: float = 1.0) -> SymTensorField:
    geom = model.geom
    grid = model.grid
    if kind == "metric_itself":
        return SymTensorField.from_full(grid, geom.g)
    if kind == "ricci_tensor":
        return SymTensorField.from_full(grid, geom.ricci)
    if kind == "conformal":
        if u is None:
            u = model.random_field(seed, 0, decay)
        uu = u.full() if hasattr(u, "full") else np.asarray(u)
        return SymTensorField.from_full(grid, amplitude * uu * geom.g)
    if kind == "factor_difference":
        if len(model.blocks) != 2:
            raise ModelError("factor_difference needs a product with two factors")
        h = np.zeros_like(geom.g)
        (s1, d1), (s2, d2) = model.blocks
        h[s1:s1 + d1, s1:s1 + d1] = geom.g[s1:s1 + d1, s1:s1 + d1]
        h[s2:s2 + d2, s2:s2 + d2] = -geom.g[s2:s2 + d2, s2:s2 + d2]
        return SymTensorField.from_full(grid, amplitude * h)
    if kind == "lie_derivative":
        if X is None or (isinstance(X, str) and X == "random"):
            X = model.random_field(seed, 1, decay)
        elif isinstance(X, str) and X == "killing":
            X = killing_field(model)
        return amplitude * cv.lie_derivative_metric(geom, X)
    if kind == "random_smooth":
        return model.random_field(seed, 2, decay, amplitude=amplitude)
    raise ModelError(f"unknown perturbation kind {kind!r}")


# ---------------------------------------------------------------------------
# descriptors

def parse_descriptor(desc: str, backend: str = "analytic", grid: str | None = None,
                     fd_order: int = 4) -> ModelGeometry:
    """Parse ``sphere2:r=1:grid=48x96``, ``torus2:grid=64x64`` or
    ``product:sphere2(r=1)xsphere2(r=1):grid=16x32x16x32``."""
    parts = desc.split(":")
    kind, opts = parts[0], {}
    body = []
    for p in parts[1:]:
        if "=" in p and "(" not in p:
            k, v = p.split("=", 1)
            opts[k.strip()] = v.strip()
        else:
            body.append(p)
    if grid is not None:
        opts["grid"] = grid
    res = [int(x) for x in opts["grid"].lower().split("x")] if "grid" in opts else None
    try:
        if kind == "sphere2":
            r = float(opts.get("r", 1.0))
            res = res or [24, 48]
            if len(res) != 2:
                raise ModelError("sphere2 needs a 2-axis grid")
            return round_sphere2(r, res[0], res[1], backend, fd_order)
        if kind.startswith("torus"):
            dim = int(kind[5:] or 2)
            res = res or [32] * dim
            if len(res) != dim:
                raise ModelError(f"{kind} needs a {dim}-axis grid")
            tb = "spectral" if backend == "analytic" else backend
            return flat_torus(*res, backend=tb, fd_order=fd_order)
        if kind == "product":
            if len(body) != 1:
                raise ModelError("product descriptor needs factor list")
            factors = _split_factors(body[0])
            if len(factors) != 2:
                raise ModelError("product needs exactly two factors")
            res = res or [12, 24, 12, 24]
            if len(res) != 4:
                raise ModelError("product of 2-spheres needs a 4-axis grid")
            models = []
            for i, (fk, fo) in enumerate(factors):
                if fk != "sphere2":
                    raise ModelError(f"unsupported factor {fk!r}")
                models.append(round_sphere2(float(fo.get("r", 1.0)), res[2 * i],
                                            res[2 * i + 1], "analytic"))
            return product(models[0], models[1], backend, fd_order)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"cannot parse geometry descriptor {desc!r}: {exc}") from exc
    raise ModelError(f"unknown geometry kind {kind!r} in {desc!r}")


def _split_factors(s):
    out = []
    for tok in s.split(")x"):
        tok = tok.rstrip(")")
        name, _, args = tok.partition("(")
        opts = dict(a.split("=", 1) for a in args.split(",") if a)
        out.append((name, opts))
    return out
