"""Time integration of the Cucker-Smale particle system with sticking.

The state is advanced with the Dormand-Prince 5(4) embedded pair. After each
accepted step, particles whose positions and velocities are both within the
sticking thresholds are merged into one particle carrying their mass and
momentum, and the integration continues from the merged state.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import kernel
from .ensemble import Ensemble, fmt_float, merge_clusters
from .kernel import WeightSpec


class CollisionAtSingularity(RuntimeError):
    """Two particles with different velocities sit at distance zero under a singular weight."""


class StiffnessFailure(RuntimeError):
    """The step size fell below the underflow floor."""


@dataclass(frozen=True)
class SimOptions:
    weight: WeightSpec
    t_end: float
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    stick_dx: float = 1e-6
    stick_dv: float = 1e-6
    max_dt: float = 0.1
    output_stride: float = 0.05
    seed: int = 0
    max_steps: int = 5_000_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not (self.stick_dx >= 0 and self.stick_dv >= 0):
            raise ValueError("sticking thresholds must be nonnegative")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not (self.max_dt > 0 and self.output_stride > 0):
            raise ValueError("max_dt and output_stride must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("weight")
        d.update(kernel.to_dict(self.weight))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimOptions":
        names = {f for f in cls.__dataclass_fields__ if f != "weight"}
        kw = {k: d[k] for k in names if k in d}
        return cls(weight=kernel.from_dict(d), **kw)


@dataclass(frozen=True, eq=False)
class MergeEvent:
    time: float
    clusters: tuple[tuple[int, ...], ...]
    pre: Ensemble
    post: Ensemble


@dataclass(eq=False)
class Trajectory:
    snapshots: list[Ensemble]
    events: list[MergeEvent]
    options: SimOptions
    n_steps: int = 0
    n_rejected: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def final(self) -> Ensemble:
        return self.snapshots[-1]

    def snapshot_at(self, t: float) -> Ensemble:
        for s in self.snapshots:
            if s.time == t:
                return s
        raise KeyError(f"no snapshot at t={t!r}")

    def segments(self) -> list[list[Ensemble]]:
        """Time-ordered states grouped into pieces without merge events.

        Each merge closes the running piece with the pre-merge state and
        opens the next with the post-merge state.
        """
        items = [(s.time, 1, "snap", s) for s in self.snapshots]
        for ev in self.events:
            items.append((ev.time, 0, "pre", ev.pre))
            items.append((ev.time, 0.5, "post", ev.post))
        items.sort(key=lambda it: (it[0], it[1]))
        out: list[list[Ensemble]] = []
        cur: list[Ensemble] = []
        for t, _, kind, e in items:
            if kind == "pre":
                if not cur or cur[-1].time < t:
                    cur.append(e)
                out.append(cur)
                cur = []
            elif kind == "post":
                cur = [e]
            else:
                if cur and cur[-1].time == t:
                    continue
                cur.append(e)
        if cur:
            out.append(cur)
        return [seg for seg in out if seg]


# ---------------------------------------------------------------------------
# right-hand side


def _pair_geometry(x):
    diff = x[None, :, :] - x[:, None, :]  # diff[i, j] = x_j - x_i
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return diff, r


def pair_weights(e: Ensemble, w: WeightSpec, r=None) -> np.ndarray:
    """Matrix ``psi(|x_i - x_j|)`` with a zero diagonal."""
    if r is None:
        _, r = _pair_geometry(e.positions)
    psi = kernel.evaluate(w, r)
    np.fill_diagonal(psi, 0.0)
    return psi


def _accelerations(m, x, v, w: WeightSpec) -> np.ndarray:
    _, r = _pair_geometry(x)
    psi = np.asarray(kernel.evaluate(w, r), dtype=float)
    np.fill_diagonal(psi, 0.0)
    dv = v[None, :, :] - v[:, None, :]  # dv[i, j] = v_j - v_i
    inf = np.isinf(psi)
    if inf.any():
        gap = np.abs(dv).max(axis=2)
        if np.any(gap[inf] > 0.0):
            i, j = np.argwhere(inf & (gap > 0.0))[0]
            raise CollisionAtSingularity(f"particles {i} and {j} collide with different velocities")
        # coincident states: v_j - v_i = 0, so the pair contributes nothing
        psi[inf] = 0.0
    # summing differences keeps aligned pairs exactly force-free
    return np.einsum("ij,ijk->ik", psi * m[None, :], dv)


def alignment_rhs(e: Ensemble, w: WeightSpec) -> np.ndarray:
    """Accelerations ``a_i = sum_j m_j (v_j - v_i) psi(|x_j - x_i|)``."""
    return _accelerations(e.masses, e.positions, e.velocities, w)


# ---------------------------------------------------------------------------
# stepping

# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B4

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


def separation_limit(e: Ensemble, stick_dx: float = 0.0) -> float:
    """Largest step over which no approaching pair closes more than half its gap.

    Uses the closing speed ``-(x_j - x_i).(v_j - v_i) / r_ij``; separating and
    coincident pairs impose no limit. Gaps below ``stick_dx`` are treated as
    ``stick_dx`` so a crossing pair inside the contact tube cannot stall the
    integrator.
    """
    if e.n < 2:
        return math.inf
    diff, r = _pair_geometry(e.positions)
    dv = e.velocities[None, :, :] - e.velocities[:, None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        closing = -np.einsum("ijk,ijk->ij", diff, dv) / r
    mask = (r > 0.0) & (closing > 0.0)
    if not mask.any():
        return math.inf
    gap = np.maximum(r[mask], stick_dx)
    return float(0.5 * np.min(gap / closing[mask]))


def _error_norm(err, y0, y1, opts: SimOptions) -> float:
    scale = opts.abs_tol + opts.rel_tol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.max(np.abs(err) / scale)) if err.size else 0.0


def step(e: Ensemble, opts: SimOptions, dt_suggest: float):
    """Advance ``e`` by one accepted Dormand-Prince step.

    Returns ``(new_ensemble, dt_used, dt_next)``.
    """
    new, used, nxt, _ = _step(e, opts, dt_suggest)
    return new, used, nxt


def _step(e: Ensemble, opts: SimOptions, dt_suggest: float, dt_floor: float | None = None):
    if not dt_suggest > 0:
        raise ValueError("dt_suggest must be positive")
    floor = 1e-14 * opts.t_end if dt_floor is None else dt_floor
    dt = min(dt_suggest, opts.max_dt)
    if kernel.is_singular(opts.weight):
        dt = min(dt, separation_limit(e, opts.stick_dx))

    m = e.masses
    n, d = e.positions.shape
    y0 = np.concatenate([e.positions, e.velocities], axis=1)  # (N, 2d)

    def f(y):
        return np.concatenate([y[:, d:], _accelerations(m, y[:, :d], y[:, d:], opts.weight)], axis=1)

    k1 = f(y0)
    rejected = 0
    while True:
        if dt < floor and dt < dt_suggest:
            raise StiffnessFailure(f"step size {dt:.3e} below floor {floor:.3e} at t={e.time!r}")
        try:
            ks = [k1]
            for s in range(1, 7):
                ys = y0 + dt * sum(a * k for a, k in zip(_A[s], ks) if a != 0.0)
                ks.append(f(ys))
        except CollisionAtSingularity:
            dt *= 0.5
            continue
        y1 = y0 + dt * sum(b * k for b, k in zip(_B, ks) if b != 0.0)
        err = dt * sum(c * k for c, k in zip(_E, ks))
        if not np.all(np.isfinite(y1)):
            dt *= _MIN_FACTOR
            continue
        en = _error_norm(err, y0, y1, opts)
        if en <= 1.0:
            factor = _MAX_FACTOR if en == 0.0 else min(_MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * en ** -0.2))
            new = Ensemble(m, y1[:, :d], y1[:, d:], e.time + dt)
            return new, dt, dt * factor, rejected
        dt *= max(_MIN_FACTOR, _SAFETY * en ** -0.2)
        rejected += 1


# ---------------------------------------------------------------------------
# sticking


def detect_sticking(e: Ensemble, stick_dx: float, stick_dv: float) -> list[tuple[int, ...]]:
    """Connected components (size >= 2) of the graph joining particles that are
    within ``stick_dx`` in position and ``stick_dv`` in velocity."""
    if stick_dx < 0 or stick_dv < 0:
        raise ValueError("thresholds must be nonnegative")
    n = e.n
    if n < 2:
        return []
    _, r = _pair_geometry(e.positions)
    _, s = _pair_geometry(e.velocities)
    adj = (r <= stick_dx) & (s <= stick_dv)
    np.fill_diagonal(adj, False)
    if not adj.any():
        return []
    i, j = np.nonzero(adj)
    g = coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    ncomp, labels = connected_components(g, directed=False)
    out = []
    for c in range(ncomp):
        members = np.flatnonzero(labels == c)
        if len(members) >= 2:
            out.append(tuple(int(k) for k in members))
    out.sort()
    return out


# ---------------------------------------------------------------------------
# driver


def _output_times(t0: float, t_end: float, stride: float) -> list[float]:
    k0 = math.floor(t0 / stride + 1e-9) + 1
    out = []
    k = k0
    while k * stride < t_end - 1e-12 * max(1.0, t_end):
        out.append(round(k * stride, 12))
        k += 1
    out.append(t_end)
    return out


def _merge_if_stuck(e: Ensemble, opts: SimOptions, events: list[MergeEvent]) -> Ensemble:
    clusters = detect_sticking(e, opts.stick_dx, opts.stick_dv)
    if not clusters:
        return e
    post = merge_clusters(e, clusters)
    events.append(MergeEvent(e.time, tuple(clusters), e, post))
    return post


def simulate(e0: Ensemble, opts: SimOptions) -> Trajectory:
    """Integrate from ``e0.time`` to ``opts.t_end`` with merging on sticking.

    Snapshots are taken at ``e0.time``, at every multiple of
    ``opts.output_stride`` and at ``t_end``; steps are shortened to land on
    these times exactly.
    """
    if e0.time >= opts.t_end:
        raise ValueError("initial time must precede t_end")
    events: list[MergeEvent] = []
    snapshots = [e0]
    e = _merge_if_stuck(e0, opts, events)
    targets = _output_times(e0.time, opts.t_end, opts.output_stride)
    dt = min(opts.max_dt, opts.output_stride, 1e-3 * (opts.t_end - e0.time))
    n_steps = 0
    n_rejected = 0
    for target in targets:
        while e.time < target:
            remaining = target - e.time
            if remaining <= 1e-13 * max(1.0, abs(target)):
                e = replace(e, time=target)
                break
            # avoid leaving a sliver of the interval for a separate tiny step
            clipped = dt >= remaining * (1.0 - 1e-6)
            dt_try = remaining if clipped else dt
            new, used, dt_next, rej = _step(e, opts, dt_try)
            n_rejected += rej
            if clipped and used == dt_try:
                new = replace(new, time=target) if new.time != target else new
                dt_next = max(dt_next, dt)
            e = new
            dt = dt_next
            n_steps += 1
            if n_steps > opts.max_steps:
                raise StiffnessFailure(f"exceeded max_steps={opts.max_steps} at t={e.time!r}")
            e = _merge_if_stuck(e, opts, events)
        snapshots.append(e)
    return Trajectory(snapshots, events, opts, n_steps, n_rejected)


# ---------------------------------------------------------------------------
# persistence


def _snapshot_rows(traj: Trajectory) -> Iterator[list[str]]:
    for s in traj.snapshots:
        for i in range(s.n):
            vals = [s.time, s.masses[i], *s.positions[i], *s.velocities[i]]
            yield [fmt_float(vals[0]), str(i)] + [fmt_float(a) for a in vals[1:]]


def write_trajectory(traj: Trajectory, out_dir, stem: str = "trajectory") -> dict[str, Path]:
    """Write ``<stem>.json`` (metadata and events), ``<stem>_snapshots.csv``
    and ``<stem>_events.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = traj.snapshots[0].dim
    meta = {
        "dim": d,
        "options": traj.options.to_dict(),
        "n_snapshots": len(traj.snapshots),
        "n_steps": traj.n_steps,
        "n_rejected": traj.n_rejected,
        "events": [
            {
                "time": ev.time,
                "clusters": [list(c) for c in ev.clusters],
                "pre": ev.pre.to_dict(),
                "post": ev.post.to_dict(),
            }
            for ev in traj.events
        ],
    }
    paths = {
        "json": out / f"{stem}.json",
        "snapshots": out / f"{stem}_snapshots.csv",
        "events": out / f"{stem}_events.csv",
    }
    paths["json"].write_text(json.dumps(meta, indent=1))
    with paths["snapshots"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "i", "m"] + [f"x{k}" for k in range(d)] + [f"v{k}" for k in range(d)])
        w.writerows(_snapshot_rows(traj))
    with paths["events"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "indices", "mass_after"])
        for ev in traj.events:
            for c in ev.clusters:
                w.writerow([fmt_float(ev.time), " ".join(map(str, c)), fmt_float(ev.post.masses[c[0]])])
    return paths


def read_trajectory(json_path, snapshots_csv=None) -> Trajectory:
    json_path = Path(json_path)
    meta = json.loads(json_path.read_text())
    if snapshots_csv is None:
        snapshots_csv = json_path.with_name(json_path.stem + "_snapshots.csv")
    d = int(meta["dim"])
    rows: dict[float, list[list[float]]] = {}
    order: list[float] = []
    with Path(snapshots_csv).open() as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            t = float(row[0])
            if t not in rows:
                rows[t] = []
                order.append(t)
            rows[t].append([float(a) for a in row[2:]])
    snaps = []
    for t in order:
        arr = np.array(rows[t])
        snaps.append(Ensemble(arr[:, 0], arr[:, 1:1 + d], arr[:, 1 + d:], t))
    events = [
        MergeEvent(
            ev["time"],
            tuple(tuple(c) for c in ev["clusters"]),
            Ensemble.from_dict(ev["pre"]),
            Ensemble.from_dict(ev["post"]),
        )
        for ev in meta["events"]
    ]
    return Trajectory(snaps, events, SimOptions.from_dict(meta["options"]),
                      meta.get("n_steps", 0), meta.get("n_rejected", 0))
