"""Particle ensembles, their empirical measures, quantization and merging."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

MASS_TOL = 1e-12


class InvalidEnsemble(ValueError):
    pass


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Ensemble:
    """N weighted particles ``(m_i, x_i, v_i)`` in R^d x R^d at time ``time``.

    Arrays are copied on construction and marked read-only, so an ensemble
    can be shared freely.
    """

    masses: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        m = np.array(self.masses, dtype=float).reshape(-1)
        x = np.array(self.positions, dtype=float)
        v = np.array(self.velocities, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        n = m.shape[0]
        if n < 1:
            raise InvalidEnsemble("ensemble needs at least one particle")
        if x.shape[0] != n or v.shape[0] != n or x.shape != v.shape:
            raise InvalidEnsemble(
                f"shape mismatch: masses {m.shape}, positions {x.shape}, velocities {v.shape}"
            )
        if np.any(m <= 0.0):
            raise InvalidEnsemble("masses must be positive")
        if abs(m.sum() - 1.0) > MASS_TOL:
            raise InvalidEnsemble(f"total mass {m.sum()!r} is not 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v)) and np.all(np.isfinite(m))):
            raise InvalidEnsemble("non-finite coordinates")
        if not (math.isfinite(self.time) and self.time >= 0.0):
            raise InvalidEnsemble(f"invalid time {self.time!r}")
        for arr in (m, x, v):
            arr.setflags(write=False)
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "velocities", v)
        object.__setattr__(self, "time", float(self.time))

    @property
    def n(self) -> int:
        return self.masses.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def momentum(self) -> np.ndarray:
        return self.masses @ self.velocities

    def with_state(self, positions, velocities, time) -> "Ensemble":
        return Ensemble(self.masses, positions, velocities, time)

    def same_as(self, other: "Ensemble") -> bool:
        return (
            self.time == other.time
            and np.array_equal(self.masses, other.masses)
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.velocities, other.velocities)
        )

    # serialization

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "masses": self.masses.tolist(),
            "positions": self.positions.tolist(),
            "velocities": self.velocities.tolist(),
            "time": self.time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        dim = int(d["dim"])
        x = np.asarray(d["positions"], dtype=float).reshape(-1, dim)
        v = np.asarray(d["velocities"], dtype=float).reshape(-1, dim)
        return cls(d["masses"], x, v, float(d.get("time", 0.0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Ensemble":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        d = self.dim
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "m"] + [f"x{k}" for k in range(d)] + [f"v{k}" for k in range(d)])
        for i in range(self.n):
            row = [self.masses[i], *self.positions[i], *self.velocities[i]]
            w.writerow([i] + [fmt_float(a) for a in row])
        return buf.getvalue()


def fmt_float(a: float) -> str:
    return format(float(a), ".17g")


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Finite nonnegative weighted point set on phase space R^{2d}."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        p = np.array(self.points, dtype=float)
        if p.size == 0:
            p = p.reshape(0, max(p.shape[-1] if p.ndim == 2 else 0, 0))
        elif p.ndim == 1:
            p = p.reshape(1, -1) if w.shape[0] == 1 else p.reshape(-1, 1)
        if p.shape[0] != w.shape[0]:
            raise ValueError(f"{p.shape[0]} points but {w.shape[0]} weights")
        if np.any(w < 0.0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if not np.all(np.isfinite(p)):
            raise ValueError("points must be finite")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def canonical(self) -> "AtomicMeasure":
        """Sum duplicate points and drop zero weights; points sorted lexicographically."""
        if self.size == 0:
            return self
        uniq, inv = np.unique(self.points, axis=0, return_inverse=True)
        w = np.zeros(uniq.shape[0])
        np.add.at(w, inv.reshape(-1), self.weights)
        keep = w > 0.0
        return AtomicMeasure(uniq[keep], w[keep])

    def integrate(self, g: Callable[[np.ndarray], np.ndarray]) -> float:
        if self.size == 0:
            return 0.0
        return float(np.dot(self.weights, np.asarray(g(self.points), dtype=float)))

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AtomicMeasure":
        pts = d["points"]
        if len(pts) == 0:
            return cls(np.zeros((0, 0)), np.zeros(0))
        return cls(np.asarray(pts, dtype=float), d["weights"])


def empirical_measure(e: Ensemble) -> AtomicMeasure:
    return AtomicMeasure(np.hstack([e.positions, e.velocities]), e.masses.copy())


def support_radius(e: Ensemble) -> float:
    """``max_i max(|x_i|, |v_i|)``."""
    rx = np.linalg.norm(e.positions, axis=1)
    rv = np.linalg.norm(e.velocities, axis=1)
    return float(max(rx.max(), rv.max()))


# ---------------------------------------------------------------------------
# merging


def merge_clusters(e: Ensemble, clusters: Sequence[Iterable[int]]) -> Ensemble:
    """Replace each cluster by one particle carrying its mass and momentum.

    The merged particle takes the slot of the smallest index in its cluster;
    the other members are removed and the remaining order is preserved.
    """
    n = e.n
    seen: set[int] = set()
    groups = []
    for c in clusters:
        idx = sorted(set(int(i) for i in c))
        if len(idx) < 2:
            raise ValueError(f"cluster {idx} has fewer than two particles")
        if idx[0] < 0 or idx[-1] >= n:
            raise IndexError(f"cluster {idx} out of range for N={n}")
        if seen.intersection(idx):
            raise ValueError("clusters must be disjoint")
        seen.update(idx)
        groups.append(idx)

    m = e.masses.copy()
    x = e.positions.copy()
    v = e.velocities.copy()
    drop = np.zeros(n, dtype=bool)
    for idx in groups:
        mi = e.masses[idx]
        M = mi.sum()
        x[idx[0]] = mi @ e.positions[idx] / M
        v[idx[0]] = mi @ e.velocities[idx] / M
        m[idx[0]] = M
        drop[idx[1:]] = True
    keep = ~drop
    return _renormalized(m[keep], x[keep], v[keep], e.time)


def merge(e: Ensemble, cluster: Iterable[int]) -> Ensemble:
    return merge_clusters(e, [cluster])


def _renormalized(m, x, v, t) -> Ensemble:
    # merged sums can round a few ulps away from 1
    s = m.sum()
    if s != 1.0 and abs(s - 1.0) < 1e-13:
        m = m / s
    return Ensemble(m, x, v, t)


# ---------------------------------------------------------------------------
# quantization of initial data


@dataclass(frozen=True)
class DensitySource:
    """Bounded density on the phase-space box ``[lo, hi]`` (length 2d each).

    ``density`` maps an ``(M, 2d)`` array of phase points to ``M`` values.
    """

    lo: Sequence[float]
    hi: Sequence[float]
    density: Callable[[np.ndarray], np.ndarray]
    radius: float | None = None
    quad_order: int = 4

    @property
    def phase_dim(self) -> int:
        return len(self.lo)


@dataclass(frozen=True)
class SampleSource:
    """Finite list of weighted phase-space samples, shape ``(M, 2d)``."""

    points: np.ndarray
    weights: np.ndarray | None = None
    radius: float | None = None

    @property
    def phase_dim(self) -> int:
        return np.asarray(self.points).reshape(len(self.points), -1).shape[1]


def uniform_box(lo, hi, radius=None) -> DensitySource:
    lo = tuple(float(a) for a in lo)
    hi = tuple(float(a) for a in hi)
    return DensitySource(lo, hi, lambda z: np.ones(len(z)), radius=radius)


def cosine_bump(lo, hi, radius=None) -> DensitySource:
    """Smooth density prod_k sin^2(pi (z_k - lo_k) / (hi_k - lo_k)) on the box."""
    lo_a = np.asarray(lo, dtype=float)
    span = np.asarray(hi, dtype=float) - lo_a

    def rho(z):
        return np.prod(np.sin(np.pi * (z - lo_a) / span) ** 2, axis=1)

    return DensitySource(tuple(lo_a), tuple(lo_a + span), rho, radius=radius)


def cell_side(h: float, phase_dim: int) -> float:
    """Grid spacing giving cells of Euclidean diameter at most ``h``.

    Spacing is ``h / ceil(sqrt(phase_dim))`` so grids for h and h/2 are nested.
    """
    return h / math.ceil(math.sqrt(phase_dim))


def _grid(lo, hi, s):
    # one extra cell on each side so support never touches the grid boundary
    lo = np.asarray(lo, dtype=float) - s
    hi = np.asarray(hi, dtype=float) + s
    counts = np.maximum(np.ceil((hi - lo) / s - 1e-9).astype(int), 1)
    return lo, counts


def _cell_index(points, origin, counts, s):
    k = np.floor((points - origin) / s).astype(np.int64)
    return np.clip(k, 0, counts - 1)


def quantize(source, h: float) -> Ensemble:
    """Atomic approximation of an initial datum on a grid of cell diameter <= h.

    Density sources put one atom at the centre of every cell with positive
    mass. Sample sources put the atom at the mass-weighted centroid of the
    samples in the cell, which is still inside the cell. Masses are
    renormalized to one, so the flat distance to the (normalized) source is
    at most h/2.
    """
    if not h > 0.0:
        raise ValueError(f"cell size must be positive, got {h!r}")
    if isinstance(source, SampleSource):
        return _quantize_samples(source, h)
    if isinstance(source, DensitySource):
        return _quantize_density(source, h)
    raise TypeError(f"unsupported source {source!r}")


def _to_ensemble(points, masses) -> Ensemble:
    masses = np.asarray(masses, dtype=float)
    masses = masses / masses.sum()
    d = points.shape[1] // 2
    return Ensemble(masses, points[:, :d], points[:, d:], 0.0)


def _quantize_samples(source: SampleSource, h: float) -> Ensemble:
    pts = np.asarray(source.points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.shape[0] == 0:
        raise ValueError("empty support")
    if pts.shape[1] % 2:
        raise ValueError("phase points need even dimension 2d")
    w = np.ones(pts.shape[0]) if source.weights is None else np.asarray(source.weights, float)
    keep = w > 0.0
    if not keep.any():
        raise ValueError("empty support")
    pts, w = pts[keep], w[keep]
    s = cell_side(h, pts.shape[1])
    origin, counts = _grid(pts.min(axis=0), pts.max(axis=0), s)
    idx = _cell_index(pts, origin, counts, s)
    cells, inv = np.unique(idx, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    mass = np.zeros(len(cells))
    np.add.at(mass, inv, w)
    centroid = np.zeros((len(cells), pts.shape[1]))
    np.add.at(centroid, inv, w[:, None] * pts)
    centroid /= mass[:, None]
    # a single-sample cell must reproduce the sample exactly
    single = np.bincount(inv, minlength=len(cells)) == 1
    if single.any():
        first = np.full(len(cells), -1)
        first[inv[::-1]] = np.arange(len(inv))[::-1]
        centroid[single] = pts[first[single]]
    return _to_ensemble(centroid, mass)


def _quantize_density(source: DensitySource, h: float) -> Ensemble:
    lo = np.asarray(source.lo, dtype=float)
    hi = np.asarray(source.hi, dtype=float)
    D = lo.shape[0]
    if D % 2 or hi.shape != lo.shape or np.any(hi < lo):
        raise ValueError("density box must be [lo, hi] in R^{2d}")
    s = cell_side(h, D)
    origin, counts = _grid(lo, hi, s)

    nodes, qw = np.polynomial.legendre.leggauss(source.quad_order)
    nodes = 0.5 * (nodes + 1.0)  # on [0, 1]
    qw = 0.5 * qw
    # tensor-product rule on the unit cube
    mesh = np.stack(np.meshgrid(*([nodes] * D), indexing="ij"), axis=-1).reshape(-1, D)
    wmesh = np.prod(np.stack(np.meshgrid(*([qw] * D), indexing="ij"), axis=-1).reshape(-1, D), axis=1)

    # only cells meeting the box can carry mass
    k_lo = np.floor((lo - origin) / s).astype(int)
    k_hi = np.minimum(np.ceil((hi - origin) / s).astype(int), counts)
    k_hi = np.maximum(k_hi, k_lo + 1)
    ranges = [np.arange(a, b) for a, b in zip(k_lo, k_hi)]
    cells = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, D)

    centres = []
    masses = []
    chunk = max(1, 200_000 // len(mesh))
    for start in range(0, len(cells), chunk):
        block = cells[start:start + chunk]
        c_lo = np.maximum(origin + block * s, lo)
        c_hi = np.minimum(origin + (block + 1) * s, hi)
        width = np.clip(c_hi - c_lo, 0.0, None)
        vol = np.prod(width, axis=1)
        z = c_lo[:, None, :] + width[:, None, :] * mesh[None, :, :]
        vals = np.asarray(source.density(z.reshape(-1, D)), dtype=float).reshape(len(block), -1)
        if not np.all(np.isfinite(vals)):
            raise QuadratureError("density evaluator returned non-finite values")
        if np.any(vals < 0.0):
            raise QuadratureError("density evaluator returned negative values")
        mass = vol * (vals @ wmesh)
        centres.append(origin + (block + 0.5) * s)
        masses.append(mass)
    centres = np.concatenate(centres)
    masses = np.concatenate(masses)
    keep = masses > 0.0
    if not keep.any() or not math.isfinite(masses.sum()):
        raise QuadratureError("density integrates to zero or is not integrable")
    return _to_ensemble(centres[keep], masses[keep])
