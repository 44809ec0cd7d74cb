"""Bounded-Lipschitz (flat) distance between atomic measures.

For atomic measures the supremum over test functions with ``|g| <= 1`` and
``Lip(g) <= 1`` reduces to a finite linear program over the values of ``g``
on the union of the supports: any feasible assignment extends to the whole
space (McShane extension followed by clipping to [-1, 1]) without changing
either bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .ensemble import AtomicMeasure


class SolverFault(RuntimeError):
    pass


class OracleTooLarge(ValueError):
    pass


DENSE_LIMIT = 300
BRUTEFORCE_LIMIT = 8


def signed_union(mu: AtomicMeasure, nu: AtomicMeasure):
    """Union support and the signed weight ``mu - nu`` on it (duplicates summed)."""
    parts = [m for m in (mu, nu) if m.size]
    if not parts:
        return np.zeros((0, 0)), np.zeros(0)
    dims = {m.points.shape[1] for m in parts}
    if len(dims) != 1:
        raise ValueError(f"measures live in different dimensions: {sorted(dims)}")
    pts = np.vstack([m.points for m in parts])
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    # accumulate each measure on its own so equal measures cancel exactly
    pos = np.zeros(len(uniq))
    neg = np.zeros(len(uniq))
    np.add.at(pos, inv[:mu.size], mu.weights)
    np.add.at(neg, inv[mu.size:], nu.weights)
    c = pos - neg
    keep = c != 0.0
    return uniq[keep], c[keep]


def tv_distance(mu: AtomicMeasure, nu: AtomicMeasure) -> float:
    _, c = signed_union(mu, nu)
    return float(np.abs(c).sum())


def _pair_constraints(pairs, dist, K):
    """Rows ``g_k - g_l <= D_kl`` and ``g_l - g_k <= D_kl`` for each pair."""
    k, l = pairs[:, 0], pairs[:, 1]
    m = len(pairs)
    rows = np.concatenate([np.arange(m), np.arange(m), m + np.arange(m), m + np.arange(m)])
    cols = np.concatenate([k, l, l, k])
    vals = np.concatenate([np.ones(m), -np.ones(m), np.ones(m), -np.ones(m)])
    A = coo_matrix((vals, (rows, cols)), shape=(2 * m, K)).tocsr()
    b = np.concatenate([dist, dist])
    return A, b


def _solve(c, pairs, dist):
    K = len(c)
    if len(pairs):
        A, b = _pair_constraints(pairs, dist, K)
    else:
        A, b = None, None
    res = linprog(
        -c, A_ub=A, b_ub=b, bounds=[(-1.0, 1.0)] * K, method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise SolverFault(f"LP failed: {res.message}")
    return -res.fun, res.x


def bl_distance(mu: AtomicMeasure, nu: AtomicMeasure, *, return_witness: bool = False):
    """Exact flat distance ``sup_g |int g dmu - int g dnu|``.

    Small supports are solved with every pairwise Lipschitz constraint.
    Above ``DENSE_LIMIT`` points the pair constraints are generated lazily:
    start from nearest neighbours, solve, add every violated pair, repeat.
    """
    z, c = signed_union(mu, nu)
    K = len(c)
    if K == 0:
        val, g = 0.0, np.zeros(0)
    elif K == 1:
        val, g = abs(c[0]), np.array([math.copysign(1.0, c[0])])
    elif K == 2:
        val, g = _two_point(c, float(np.linalg.norm(z[1] - z[0])))
    elif K <= DENSE_LIMIT:
        D = cdist(z, z)
        k, l = np.triu_indices(K, 1)
        # pairs farther apart than 2 are implied by the box constraints
        keep = D[k, l] < 2.0
        pairs = np.stack([k[keep], l[keep]], axis=1)
        val, g = _solve(c, pairs, D[k[keep], l[keep]])
    else:
        val, g = _constraint_generation(z, c)
    val = max(val, 0.0)
    if return_witness:
        return val, z, g
    return val


def _two_point(c, dist):
    """Closed-form optimum for a two-point support.

    Opposite signs: the heavier atom takes ``g = +-1`` and the lighter one
    trails it by at most ``min(dist, 2)``.
    """
    if c[0] * c[1] > 0:
        s = math.copysign(1.0, c[0])
        return abs(c[0]) + abs(c[1]), np.array([s, s])
    big = 0 if abs(c[0]) >= abs(c[1]) else 1
    small = 1 - big
    s = math.copysign(1.0, c[big])
    step = min(dist, 2.0)
    g = np.empty(2)
    g[big], g[small] = s, s * (1.0 - step)
    val = abs(c[big]) - abs(c[small]) + abs(c[small]) * step
    return val, g


def _constraint_generation(z, c, k_near: int = 12, max_rounds: int = 200):
    K = len(c)
    tree = cKDTree(z)
    kk = min(K, k_near + 1)
    _, nbr = tree.query(z, k=kk)
    a = np.repeat(np.arange(K), kk - 1)
    b = nbr[:, 1:].reshape(-1)
    pairs = np.unique(np.sort(np.stack([a, b], axis=1), axis=1), axis=0)
    for _ in range(max_rounds):
        dist = np.linalg.norm(z[pairs[:, 0]] - z[pairs[:, 1]], axis=1)
        val, g = _solve(c, pairs, dist)
        viol_pairs = []
        # blockwise scan of all pairs for violated Lipschitz constraints
        block = max(1, 4_000_000 // K)
        for s in range(0, K, block):
            D = cdist(z[s:s + block], z)
            gap = np.abs(g[s:s + block, None] - g[None, :]) - D
            i, j = np.nonzero(gap > 1e-11)
            i = i + s
            upper = i < j
            viol_pairs.append(np.stack([i[upper], j[upper]], axis=1))
        viol = np.concatenate(viol_pairs)
        if len(viol) == 0:
            return val, g
        pairs = np.unique(np.vstack([pairs, viol]), axis=0)
    raise SolverFault("constraint generation did not converge")


# ---------------------------------------------------------------------------
# independent oracle


def _simplex_max(c, A, b, tol=1e-12, max_iter=10_000):
    """Maximize ``c.u`` subject to ``A u <= b``, ``u >= 0``, with ``b >= 0``.

    Dense tableau, Bland's rule. The origin is feasible, so no phase one.
    """
    m, n = A.shape
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -c
    basis = list(range(n, n + m))
    for _ in range(max_iter):
        entering = next((j for j in range(n + m) if T[m, j] < -tol), None)
        if entering is None:
            return T[m, -1]
        col = T[:m, entering]
        best, leaving = None, None
        for i in range(m):
            if col[i] > tol:
                ratio = T[i, -1] / col[i]
                if best is None or ratio < best - tol or (abs(ratio - best) <= tol and basis[i] < basis[leaving]):
                    best, leaving = ratio, i
        if leaving is None:
            raise SolverFault("unbounded LP in oracle")
        T[leaving] /= T[leaving, entering]
        for i in range(m + 1):
            if i != leaving and T[i, entering] != 0.0:
                T[i] -= T[i, entering] * T[leaving]
        basis[leaving] = entering
    raise SolverFault("oracle simplex did not terminate")


def bl_distance_bruteforce(mu: AtomicMeasure, nu: AtomicMeasure) -> float:
    """Flat distance by a self-contained dense simplex (union support <= 8 points).

    Shifts ``u = g + 1`` so every constraint has a nonnegative right-hand side:
    ``u_k <= 2`` and ``u_k - u_l <= |z_k - z_l|`` for every ordered pair.
    The objective ``sum c_k g_k`` becomes ``sum c_k u_k - sum c_k``.
    """
    z, c = signed_union(mu, nu)
    K = len(c)
    if K > BRUTEFORCE_LIMIT:
        raise OracleTooLarge(f"union support has {K} points, oracle accepts at most {BRUTEFORCE_LIMIT}")
    if K == 0:
        return 0.0
    rows, rhs = [], []
    for k in range(K):
        r = np.zeros(K)
        r[k] = 1.0
        rows.append(r)
        rhs.append(2.0)
    for k in range(K):
        for l in range(K):
            if k != l:
                r = np.zeros(K)
                r[k], r[l] = 1.0, -1.0
                rows.append(r)
                rhs.append(math.dist(z[k], z[l]))
    val = _simplex_max(c, np.array(rows), np.array(rhs)) - c.sum()
    return abs(val)


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class LipschitzObservable:
    """Bounded Lipschitz test function on phase space.

    ``evaluator`` maps ``(M, 2d)`` arrays to ``M`` values; ``grad`` (optional)
    maps them to ``(M, 2d)`` gradients.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    sup_bound: float
    lip_bound: float
    grad: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        for name in ("sup_bound", "lip_bound"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v!r}")

    def __call__(self, z):
        return np.asarray(self.evaluator(np.atleast_2d(z)), dtype=float)

    def gradient(self, z, eps: float = 1e-6):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if self.grad is not None:
            return np.asarray(self.grad(z), dtype=float)
        out = np.empty_like(z)
        for k in range(z.shape[1]):
            e = np.zeros(z.shape[1])
            e[k] = eps
            out[:, k] = (self(z + e) - self(z - e)) / (2 * eps)
        return out

    def spot_check(self, points, rng=None, n_pairs: int = 200, slack: float = 1e-9) -> bool:
        rng = np.random.default_rng(rng)
        pts = np.atleast_2d(points)
        vals = self(pts)
        if np.any(np.abs(vals) > self.sup_bound + slack):
            return False
        i = rng.integers(0, len(pts), n_pairs)
        j = rng.integers(0, len(pts), n_pairs)
        dz = np.linalg.norm(pts[i] - pts[j], axis=1)
        return bool(np.all(np.abs(vals[i] - vals[j]) <= self.lip_bound * dz + slack))


def clamped_projection(coord: int, scale: float = 1.0) -> LipschitzObservable:
    """``g(z) = clip(scale * z[coord], -1, 1)``."""

    def f(z):
        return np.clip(scale * z[:, coord], -1.0, 1.0)

    def grad(z):
        out = np.zeros_like(z)
        out[:, coord] = np.where(np.abs(scale * z[:, coord]) < 1.0, scale, 0.0)
        return out

    return LipschitzObservable(f, 1.0, abs(scale), grad)


def constant(value: float) -> LipschitzObservable:
    return LipschitzObservable(lambda z: np.full(len(z), value), abs(value), 0.0,
                               lambda z: np.zeros_like(z))


def pairing_bound_check(g: LipschitzObservable, mu: AtomicMeasure, nu: AtomicMeasure, slack: float = 1e-9):
    """``|int g dmu - int g dnu| <= max(sup g, Lip g) * d(mu, nu)``; returns ``(lhs, rhs, holds)``."""
    lhs = abs(mu.integrate(g) - nu.integrate(g))
    rhs = max(g.sup_bound, g.lip_bound) * bl_distance(mu, nu)
    return lhs, rhs, bool(lhs <= rhs + slack)
