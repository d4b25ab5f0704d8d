"""Matrix-free Krylov solvers and a block Lanczos eigensolver in a supplied inner product.

Vectors are plain numpy arrays of any shape (component arrays of fields).
Inner products are callables ``inner(a, b)``, conjugate-linear in ``a``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

Inner = Callable[[np.ndarray, np.ndarray], complex]


def euclidean(a, b):
    return np.vdot(a, b)


@dataclass
class LinearOperatorHandle:
    """A linear map on arrays of ``shape``.

    ``project`` (optional) maps onto the constraint subspace the operator is
    restricted to; ``adjoint`` is needed only by the least-squares path.
    """
    apply: Callable[[np.ndarray], np.ndarray]
    shape: tuple
    symmetric: bool = True
    project: Callable[[np.ndarray], np.ndarray] | None = None
    adjoint: Callable[[np.ndarray], np.ndarray] | None = None
    dtype: type = float
    description: str = ""

    def __call__(self, x):
        y = self.apply(x)
        return self.project(y) if self.project is not None else y

    def constrain(self, x):
        return self.project(x) if self.project is not None else x

    def check_linearity(self, seed: int = 0, inner: Inner = euclidean, tol: float = 1e-10) -> float:
        """Relative defect of apply(a x + y) against a apply(x) + apply(y)."""
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal(self.shape), rng.standard_normal(self.shape)
        a = 1.7
        lhs = self.apply(a * x + y)
        rhs = a * self.apply(x) + self.apply(y)
        num = np.sqrt(abs(inner(lhs - rhs, lhs - rhs)))
        den = np.sqrt(abs(inner(rhs, rhs))) or 1.0
        defect = float(num / den)
        if defect > tol:
            log.warning("operator %s fails linearity probe: %.3e", self.description, defect)
        return defect


@dataclass
class KrylovConfig:
    tol: float = 1e-10
    max_iter: int = 1000
    method: str = "cg"  # cg | cgls
    stagnation_window: int = 50

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter <= 0:
            raise ValueError("tolerance and max_iter must be positive")
        if self.method not in ("cg", "cgls"):
            raise ValueError(f"unknown Krylov method {self.method!r}")


@dataclass
class KrylovResult:
    x: np.ndarray
    residual: float
    iterations: int
    converged: bool
    flag: str = ""
    trace: list = field(default_factory=list, repr=False)

    def __iter__(self):
        yield self.x
        yield self.residual


def _norm(inner, x):
    return float(np.sqrt(abs(inner(x, x))))


def krylov_solve(op: LinearOperatorHandle, rhs, inner: Inner = euclidean,
                 config: KrylovConfig | None = None, x0=None,
                 inner_range: Inner | None = None) -> KrylovResult:
    """Solve ``op x = rhs``.

    ``cg``: ``op`` self-adjoint and semidefinite in ``inner``; consistent
    singular systems converge on the range.  With ``op.project`` set the
    iteration runs on the constraint subspace (projected CG).
    ``cgls``: least squares min ||rhs - op x|| in ``inner_range``; the returned
    ``residual`` is the relative normal-equation residual and ``x`` the
    minimizer of least norm when started from zero.
    """
    config = config or KrylovConfig()
    if config.method == "cgls":
        return _cgls(op, rhs, inner, inner_range or inner, config, x0)
    b = op.constrain(np.asarray(rhs))
    bnorm = _norm(inner, b)
    x = np.zeros_like(b) if x0 is None else op.constrain(np.array(x0, dtype=b.dtype))
    if bnorm == 0:
        return KrylovResult(np.zeros_like(b), 0.0, 0, True)
    r = b - op(x) if x0 is not None else b.copy()
    p = r.copy()
    rr = inner(r, r).real
    trace, best = [], np.inf
    since_best = 0
    for it in range(1, config.max_iter + 1):
        Ap = op(p)
        pAp = inner(p, Ap).real
        if pAp <= 0:
            rel = np.sqrt(rr) / bnorm
            return KrylovResult(x, rel, it, rel <= config.tol, "breakdown: non-positive curvature", trace)
        alpha = rr / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = inner(r, r).real
        rel = np.sqrt(rr_new) / bnorm
        trace.append(rel)
        if rel <= config.tol:
            return KrylovResult(x, rel, it, True, "", trace)
        if rel < 0.5 * best:
            best, since_best = rel, 0
        else:
            since_best += 1
            if since_best >= config.stagnation_window:
                return KrylovResult(x, rel, it, False, "stagnation", trace)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return KrylovResult(x, rel, config.max_iter, False, "max_iter", trace)


def _cgls(op, rhs, inner_d, inner_r, config, x0):
    if op.adjoint is None:
        raise ValueError("cgls needs op.adjoint")
    b = np.asarray(rhs)
    x = None if x0 is None else np.array(x0)
    r = b.copy() if x is None else b - op.apply(x)
    s = op.constrain(op.adjoint(r))
    if x is None:
        x = np.zeros_like(s)
    snorm0 = _norm(inner_d, s)
    if snorm0 == 0:
        return KrylovResult(x, 0.0, 0, True)
    p = s.copy()
    gamma = inner_d(s, s).real
    trace, best, since_best = [], np.inf, 0
    for it in range(1, config.max_iter + 1):
        q = op.apply(p)
        qq = inner_r(q, q).real
        if qq <= 0:
            return KrylovResult(x, np.sqrt(gamma) / snorm0, it, False, "breakdown", trace)
        alpha = gamma / qq
        x = x + alpha * p
        r = r - alpha * q
        s = op.constrain(op.adjoint(r))
        gamma_new = inner_d(s, s).real
        rel = np.sqrt(gamma_new) / snorm0
        trace.append(rel)
        if rel <= config.tol:
            return KrylovResult(x, rel, it, True, "", trace)
        if rel < 0.5 * best:
            best, since_best = rel, 0
        else:
            since_best += 1
            if since_best >= config.stagnation_window:
                return KrylovResult(x, rel, it, False, "stagnation", trace)
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return KrylovResult(x, rel, config.max_iter, False, "max_iter", trace)


# ---------------------------------------------------------------------------
# eigensolver

@dataclass
class EigenConfig:
    tol: float = 1e-8
    max_iter: int = 40          # restarts
    block_size: int = 4
    basis_size: int = 60
    shift: float | None = None  # shift-invert about this value
    which: str = "largest"      # largest | smallest (algebraic)
    seed: int = 0
    cluster_tol: float = 1e-3
    inner_krylov: KrylovConfig = field(default_factory=lambda: KrylovConfig(tol=1e-12, max_iter=2000))

    def __post_init__(self):
        if self.tol <= 0 or self.cluster_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.which not in ("largest", "smallest"):
            raise ValueError("which must be 'largest' or 'smallest'")
        if self.block_size < 1 or self.basis_size < 2 * self.block_size:
            raise ValueError("basis_size must hold at least two blocks")


@dataclass
class EigenPair:
    value: float
    vector: np.ndarray
    residual: float


@dataclass
class EigenResult:
    pairs: list[EigenPair]
    converged: bool
    iterations: int
    flag: str = ""

    @property
    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.pairs])

    def __iter__(self):
        return iter((p.value, p.vector, p.residual) for p in self.pairs)

    def __len__(self):
        return len(self.pairs)


def _orthonormalize(block, basis, inner, tol=1e-10):
    """Two-pass Gram-Schmidt of ``block`` against ``basis`` and itself."""
    out = []
    for v in block:
        nrm0 = _norm(inner, v)
        if nrm0 == 0:
            continue
        for _ in range(2):
            for q in basis + out:
                v = v - inner(q, v) * q
        nrm = _norm(inner, v)
        if nrm > tol * nrm0:
            out.append(v / nrm)
    return out


def symmetric_eigensolve(op: LinearOperatorHandle, inner: Inner, k: int,
                         config: EigenConfig | None = None,
                         start: list | None = None) -> EigenResult:
    """Extremal eigenpairs of an operator self-adjoint in ``inner``.

    Thick-restarted block Lanczos with full reorthogonalization.  With
    ``config.shift`` set, the iteration runs on ``(op - shift)^{-1}`` through
    inner CG solves (so the shifted operator must be definite on the subspace)
    and returns eigenvalues of ``op`` nearest the shift.
    """
    config = config or EigenConfig()
    rng = np.random.default_rng(config.seed)
    dtype = np.result_type(op.dtype, float)
    shift = config.shift
    sign = 1.0 if config.which == "largest" else -1.0

    if shift is None:
        def apply(x):
            return op(x)
    else:
        shifted = LinearOperatorHandle(lambda x: op.apply(x) - shift * x, op.shape,
                                       project=op.project)
        definite = -1.0 if config.which == "smallest" else 1.0

        def apply(x):
            # (op - shift) is assumed definite of sign ``definite`` on the subspace
            res = krylov_solve(
                LinearOperatorHandle(lambda y: definite * shifted(y), op.shape, project=op.project),
                definite * x, inner, config.inner_krylov)
            if not res.converged:
                log.warning("shift-invert inner solve: %s (%.2e)", res.flag, res.residual)
            return res.x

    nb = config.block_size
    if start:
        block = [op.constrain(np.asarray(s, dtype=dtype)) for s in start]
    else:
        block = []
    while len(block) < nb:
        block.append(op.constrain(rng.standard_normal(op.shape).astype(dtype)))
    V = _orthonormalize(block, [], inner)
    AV = []
    pairs: list[EigenPair] = []
    for restart in range(1, config.max_iter + 1):
        # extend the block Krylov space
        while len(V) < config.basis_size:
            new = [apply(v) for v in V[len(AV):]]
            AV.extend(new)
            nxt = _orthonormalize(new, V, inner)
            if not nxt:
                # invariant subspace found; continue with fresh random directions
                fresh = [op.constrain(rng.standard_normal(op.shape).astype(dtype))
                         for _ in range(nb)]
                nxt = _orthonormalize(fresh, V, inner)
                if not nxt:
                    break
            V.extend(nxt[: config.basis_size - len(V)])
        AV.extend(apply(v) for v in V[len(AV):])
        m = len(V)
        T = np.empty((m, m), dtype=complex if np.iscomplexobj(V[0]) else float)
        for i in range(m):
            for j in range(i, m):
                T[i, j] = inner(V[i], AV[j])
                T[j, i] = np.conj(T[i, j])
        theta, S = sla.eigh(T)
        order = np.argsort(sign * theta)[::-1] if shift is None else np.argsort(-np.abs(theta))
        theta, S = theta[order], S[:, order]
        ritz = [sum(S[i, c] * V[i] for i in range(m)) for c in range(min(m, k + nb))]
        # residuals of the original operator
        pairs = []
        for c, x in enumerate(ritz[:k]):
            ax = op(x)
            lam = float(np.real(inner(x, ax)) / np.real(inner(x, x)))
            res = _norm(inner, ax - lam * x) / _norm(inner, x)
            pairs.append(EigenPair(lam, x, res))
        scale = max(1.0, max(abs(p.value) for p in pairs)) if pairs else 1.0
        if len(pairs) == k and all(p.residual <= config.tol * scale for p in pairs):
            pairs.sort(key=lambda p: -sign * p.value)
            return EigenResult(pairs, True, restart)
        if m < config.basis_size:
            # invariant subspace exhausted
            pairs.sort(key=lambda p: -sign * p.value)
            return EigenResult(pairs, len(pairs) == k, restart, "" if len(pairs) == k else "subspace exhausted")
        # thick restart on the leading Ritz vectors
        keep = _orthonormalize(ritz, [], inner)
        V, AV = keep, []
    pairs.sort(key=lambda p: -sign * p.value)
    return EigenResult(pairs, False, config.max_iter, "max_iter")


def cluster(values, tol: float) -> list[list[int]]:
    """Group indices of sorted-or-unsorted values whose neighbours differ by <= tol."""
    order = np.argsort(values)[::-1]
    groups: list[list[int]] = []
    for i in order:
        if groups and abs(values[groups[-1][-1]] - values[i]) <= tol:
            groups[-1].append(int(i))
        else:
            groups.append([int(i)])
    return groups


@dataclass
class RitzResult:
    values: np.ndarray
    coefficients: np.ndarray  # columns: eigenvectors in the trial basis
    asymmetry: float          # relative anti-Hermitian part of the projected operator
    constraint_rank: int = 0


def rayleigh_ritz(A: np.ndarray, G: np.ndarray | None = None, C: np.ndarray | None = None,
                  rtol: float = 1e-9) -> RitzResult:
    """Dense Rayleigh-Ritz on a trial space.

    ``A[i, j] = (b_i, op b_j)`` and ``G[i, j] = (b_i, b_j)``; rows of ``C`` are
    linear constraints on the coefficient vector (kept: ``C c = 0``).  The
    projected operator is Hermitized; the discarded anti-Hermitian part is
    reported as ``asymmetry``.
    """
    A = np.asarray(A)
    n = A.shape[0]
    G = np.eye(n) if G is None else np.asarray(G)
    scale = max(np.abs(A).max(), 1e-300)
    asym = float(np.abs(A - A.conj().T).max() / scale)
    A = 0.5 * (A + A.conj().T)
    G = 0.5 * (G + G.conj().T)
    rank = 0
    if C is not None and C.size:
        Z = sla.null_space(C, rcond=rtol)
        rank = n - Z.shape[1]
        A, G = Z.conj().T @ A @ Z, Z.conj().T @ G @ Z
    else:
        Z = np.eye(n)
    if A.shape[0] == 0:
        return RitzResult(np.zeros(0), np.zeros((n, 0)), asym, rank)
    vals, vecs = sla.eigh(A, G)
    order = np.argsort(vals)[::-1]
    return RitzResult(vals[order], Z @ vecs[:, order], asym, rank)
