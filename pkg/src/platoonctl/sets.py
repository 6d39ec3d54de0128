"""Interval, zonotope, and matrix-zonotope set arithmetic.

A zonotope is ``{c + G @ beta : ||beta||_inf <= 1}``; a matrix zonotope is the
same construction with matrix-valued center and generators.  These carry the
noise/attack bounds, the identified model family, and the error reachable
sets.  All operations are pure and return new objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog


class ShapeError(ValueError):
    """Operand dimensions are incompatible."""


class MembershipSolverError(RuntimeError):
    """The feasibility solve failed; distinct from a 'not contained' verdict."""


def _as_vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        v = v.reshape(-1)
    return v


@dataclass(frozen=True)
class Interval:
    """Axis-aligned box [lower, upper], componentwise."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _as_vector(self.lower)
        hi = _as_vector(self.upper)
        if lo.shape != hi.shape:
            raise ShapeError(f"interval bounds differ in dimension: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi + 1e-15):
            raise ValueError("interval lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = _as_vector(x)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


@dataclass(frozen=True)
class Zonotope:
    """Zonotope <c, G> with center c (d,) and generator matrix G (d, gamma)."""

    center: np.ndarray
    generators: np.ndarray

    def __post_init__(self):
        c = _as_vector(self.center)
        G = np.asarray(self.generators, dtype=float)
        if G.size == 0:
            G = G.reshape(c.shape[0], 0)
        if G.ndim != 2:
            raise ShapeError("generator matrix must be 2-d")
        if G.shape[0] != c.shape[0]:
            raise ShapeError(
                f"generator rows {G.shape[0]} do not match center dimension {c.shape[0]}"
            )
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", G)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def ngen(self) -> int:
        return self.generators.shape[1]

    @classmethod
    def point(cls, c) -> "Zonotope":
        c = _as_vector(c)
        return cls(c, np.zeros((c.shape[0], 0)))

    @classmethod
    def box(cls, c, radius) -> "Zonotope":
        """Axis-aligned box as a zonotope with diagonal generators."""
        c = _as_vector(c)
        r = np.broadcast_to(np.asarray(radius, dtype=float), c.shape)
        return cls(c, np.diag(r))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Draw points c + G beta with beta uniform in [-1, 1]^gamma, shape (count, d)."""
        beta = rng.uniform(-1.0, 1.0, size=(count, self.ngen))
        return self.center[None, :] + beta @ self.generators.T


@dataclass(frozen=True)
class MatrixZonotope:
    """Matrix zonotope <C, [G_1 ... G_gamma]> stored as a (gamma, n, m) stack."""

    center: np.ndarray
    generators: np.ndarray = field(default=None)

    def __post_init__(self):
        C = np.asarray(self.center, dtype=float)
        if C.ndim != 2:
            raise ShapeError("matrix zonotope center must be 2-d")
        G = self.generators
        if G is None:
            G = np.zeros((0,) + C.shape)
        else:
            G = np.asarray(G, dtype=float)
            if G.ndim == 2:
                G = G[None, :, :]
            if G.ndim != 3 or (G.shape[0] > 0 and G.shape[1:] != C.shape):
                raise ShapeError("every generator must match the center shape")
            if G.shape[0] == 0:
                G = G.reshape((0,) + C.shape)
        object.__setattr__(self, "center", C)
        object.__setattr__(self, "generators", G)

    @property
    def shape(self) -> tuple:
        return self.center.shape

    @property
    def ngen(self) -> int:
        return self.generators.shape[0]

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Draw member matrices, shape (count, n, m)."""
        beta = rng.uniform(-1.0, 1.0, size=(count, self.ngen))
        return self.center[None, :, :] + np.einsum("kg...,gnm->knm", beta, self.generators)


def linear_map(M, Z: Zonotope) -> Zonotope:
    """Image <M c, M G>; exact."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[1] != Z.dim:
        raise ShapeError(f"map columns {M.shape} incompatible with zonotope dim {Z.dim}")
    return Zonotope(M @ Z.center, M @ Z.generators)


def minkowski_sum(z1: Zonotope, z2: Zonotope) -> Zonotope:
    """Setwise sum <c1 + c2, [G1 G2]>; exact."""
    if z1.dim != z2.dim:
        raise ShapeError(f"dimension mismatch {z1.dim} vs {z2.dim}")
    return Zonotope(z1.center + z2.center, np.hstack([z1.generators, z2.generators]))


def cartesian_product(z1: Zonotope, z2: Zonotope) -> Zonotope:
    """Stacked center with block-diagonal generators."""
    c = np.concatenate([z1.center, z2.center])
    G = np.zeros((z1.dim + z2.dim, z1.ngen + z2.ngen))
    G[: z1.dim, : z1.ngen] = z1.generators
    G[z1.dim :, z1.ngen :] = z2.generators
    return Zonotope(c, G)


def interval_hull(Z: Zonotope) -> Interval:
    """Tightest axis-aligned box: [c - sum|g|, c + sum|g|]."""
    dg = np.abs(Z.generators).sum(axis=1)
    return Interval(Z.center - dg, Z.center + dg)


def matzono_map(M: MatrixZonotope, Z: Zonotope) -> Zonotope:
    """Over-approximation of {A x : A in M, x in Z}.

    Center C c; generators [C G, G_i c ..., G_i G ...] including every
    matrix-generator x zonotope-generator cross term, so the result is sound
    at the cost of gamma_M * (1 + gamma_Z) extra generators.
    """
    if M.shape[1] != Z.dim:
        raise ShapeError(f"matrix columns {M.shape[1]} do not match zonotope dim {Z.dim}")
    n = M.shape[0]
    c = M.center @ Z.center
    blocks = [M.center @ Z.generators]
    if M.ngen:
        blocks.append(np.einsum("gnm,m->ng", M.generators, Z.center))
        if Z.ngen:
            cross = np.einsum("gnm,mz->gnz", M.generators, Z.generators)
            blocks.append(cross.transpose(1, 0, 2).reshape(n, M.ngen * Z.ngen))
    return Zonotope(c, np.hstack(blocks) if blocks else np.zeros((n, 0)))


def reduce_order(Z: Zonotope, max_generators: int) -> Zonotope:
    """Cap the generator count, folding the smallest generators into a box.

    Generators are ranked by 1-norm; the smallest ones are replaced with the
    diagonal box of their summed absolute values, which preserves containment.
    """
    if max_generators < Z.dim:
        raise ValueError(f"budget {max_generators} below dimension {Z.dim}")
    if Z.ngen <= max_generators:
        return Z
    keep = max_generators - Z.dim
    norms = np.abs(Z.generators).sum(axis=0)
    order = np.argsort(norms, kind="stable")  # ascending; stable for determinism
    fold, kept = order[: Z.ngen - keep], order[Z.ngen - keep :]
    box = np.diag(np.abs(Z.generators[:, fold]).sum(axis=1))
    return Zonotope(Z.center, np.hstack([Z.generators[:, np.sort(kept)], box]))


def contains_point(Z: Zonotope, x, tol: float = 1e-7) -> bool:
    """Membership via linear feasibility: beta in [-1,1]^gamma with |c + G beta - x|_inf <= tol."""
    x = _as_vector(x)
    if x.shape[0] != Z.dim:
        raise ShapeError(f"point dim {x.shape[0]} does not match zonotope dim {Z.dim}")
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    r = x - Z.center
    if Z.ngen == 0:
        return bool(np.max(np.abs(r), initial=0.0) <= tol)
    # minimize t  s.t.  -t <= (G beta - r)_i <= t,  |beta| <= 1
    d, g = Z.dim, Z.ngen
    cobj = np.zeros(g + 1)
    cobj[-1] = 1.0
    A_ub = np.zeros((2 * d, g + 1))
    A_ub[:d, :g] = Z.generators
    A_ub[d:, :g] = -Z.generators
    A_ub[:, -1] = -1.0
    b_ub = np.concatenate([r, -r])
    bounds = [(-1.0, 1.0)] * g + [(0.0, None)]
    res = linprog(cobj, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        raise MembershipSolverError(f"membership LP failed: {res.message}")
    return bool(res.fun <= tol)


def contains_points(Z: Zonotope, X: np.ndarray, tol: float = 1e-7) -> np.ndarray:
    """Vectorized membership check for rows of X, shape (count, d).

    A projected-gradient least-squares pass produces feasible-beta
    certificates for the easy (vast) majority; unresolved points fall back to
    the exact LP in contains_point, so every verdict is LP-grade.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != Z.dim:
        raise ShapeError("point rows do not match zonotope dimension")
    R = (X - Z.center[None, :]).T  # (d, count)
    count = X.shape[0]
    if Z.ngen == 0:
        return np.max(np.abs(R), axis=0, initial=0.0) <= tol
    G = Z.generators
    gtg = G.T @ G
    lip = float(np.linalg.eigvalsh(gtg)[-1]) if Z.ngen else 0.0
    if lip <= 0.0:
        return np.max(np.abs(R), axis=0, initial=0.0) <= tol
    step = 1.0 / lip
    B = np.clip(np.linalg.lstsq(G, R, rcond=None)[0], -1.0, 1.0)
    B_prev = B.copy()
    ok = np.zeros(count, dtype=bool)
    for k in range(2000):
        Y = B + (k / (k + 3.0)) * (B - B_prev)
        B_prev = B
        B = np.clip(Y - step * (G.T @ (G @ Y - R)), -1.0, 1.0)
        if k % 25 == 0:
            ok = np.max(np.abs(G @ B - R), axis=0) <= tol
            if ok.all():
                return ok
    ok = np.max(np.abs(G @ B - R), axis=0) <= tol
    for i in np.nonzero(~ok)[0]:
        ok[i] = contains_point(Z, X[i], tol)
    return ok
