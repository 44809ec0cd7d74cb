"""Quantitative a-priori estimates evaluated on recorded trajectories."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import Trajectory, alignment_rhs, pair_weights
from .ensemble import Ensemble, empirical_measure, support_radius
from .flat_metric import LipschitzObservable, clamped_projection

MIN_SNAPSHOTS = 8


class SparseGrid(ValueError):
    pass


@dataclass
class DiagnosticsReport:
    mass_drift: float
    momentum_drift: float
    support_max: float
    support_bound: float
    dissipation_p: float
    coupling_p: float
    coupling_pp: float
    modulus_lp: float
    p_used: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


def _states(traj: Trajectory):
    yield from traj.snapshots
    for ev in traj.events:
        yield ev.pre
        yield ev.post


def _require_grid(traj: Trajectory):
    if len(traj.snapshots) < MIN_SNAPSHOTS:
        raise SparseGrid(f"need at least {MIN_SNAPSHOTS} snapshots, got {len(traj.snapshots)}")


def _integrate(traj: Trajectory, fn) -> float:
    """Trapezoid rule of ``fn(ensemble)`` over each merge-free segment, summed."""
    total = 0.0
    for seg in traj.segments():
        if len(seg) < 2:
            continue
        t = np.array([e.time for e in seg])
        y = np.array([fn(e) for e in seg])
        total += float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))
    return total


def support_bound_check(traj: Trajectory, R0: float):
    """Largest support radius along the run against ``2 R0 (T + 1)``."""
    r_init = support_radius(traj.snapshots[0])
    if r_init > R0:
        raise ValueError(f"initial support radius {r_init} exceeds R0={R0}")
    smax = max(support_radius(e) for e in _states(traj))
    bound = 2.0 * R0 * (traj.options.t_end + 1.0)
    return smax, bound, bool(smax <= bound)


def _coupling(e: Ensemble, w, p: float, vel_power: float) -> float:
    psi = pair_weights(e, w)
    gap = np.linalg.norm(e.velocities[None, :, :] - e.velocities[:, None, :], axis=2)
    mm = np.outer(e.masses, e.masses)
    with np.errstate(invalid="ignore"):
        terms = mm * psi ** p * gap ** vel_power
    # stuck pairs: infinite weight times zero velocity gap
    terms[(gap == 0.0)] = 0.0
    return float(terms.sum())


def _dissipation(e: Ensemble, w, p: float) -> float:
    a = alignment_rhs(e, w)
    return float(e.masses @ np.linalg.norm(a, axis=1) ** p)


def dissipation_integrals(traj: Trajectory, p: float = 1.05):
    """Returns ``(dissipation_p, coupling_pp, coupling_p)``:

    * ``int sum_i m_i |dv_i/dt|^p dt``
    * ``int sum_ij m_i m_j psi^p |v_i - v_j|^p dt``
    * ``int sum_ij m_i m_j psi^p |v_i - v_j| dt``
    """
    if not p > 1.0:
        raise ValueError("p must exceed 1")
    _require_grid(traj)
    w = traj.options.weight
    diss = _integrate(traj, lambda e: _dissipation(e, w, p))
    cpp = _integrate(traj, lambda e: _coupling(e, w, p, p))
    cp = _integrate(traj, lambda e: _coupling(e, w, p, 1.0))
    return diss, cpp, cp


def observable_value(e: Ensemble, g: LipschitzObservable) -> float:
    return empirical_measure(e).integrate(g)


def observable_rate(e: Ensemble, g: LipschitzObservable, w) -> float:
    """``d/dt int g df`` along the particle flow, by the chain rule."""
    z = np.hstack([e.positions, e.velocities])
    grad = g.gradient(z)
    d = e.dim
    a = alignment_rhs(e, w)
    per = np.einsum("ik,ik->i", e.velocities, grad[:, :d]) + np.einsum("ik,ik->i", a, grad[:, d:])
    return float(e.masses @ per)


def observable_series(traj: Trajectory, g: LipschitzObservable):
    """Snapshot times, ``int g df(t)`` and its chain-rule derivative."""
    w = traj.options.weight
    t = traj.times
    vals = np.array([observable_value(e, g) for e in traj.snapshots])
    rates = np.array([observable_rate(e, g, w) for e in traj.snapshots])
    return t, vals, rates


def time_modulus(traj: Trajectory, g: LipschitzObservable, p: float = 1.05) -> float:
    """``L^p(0, T)`` norm of ``t -> d/dt int g df(t)``."""
    _require_grid(traj)
    w = traj.options.weight
    return _integrate(traj, lambda e: abs(observable_rate(e, g, w)) ** p) ** (1.0 / p)


def uniform_time_modulus(traj: Trajectory, p: float = 1.05) -> float:
    """``L^p`` norm of ``sum_i m_i |(v_i, dv_i/dt)|``.

    Bounds ``|d/dt int g df|`` for every g with ``Lip(g) <= 1``, hence
    ``d(f(s), f(t)) <= (t - s)^(1 - 1/p) * uniform_time_modulus``.
    """
    _require_grid(traj)
    w = traj.options.weight

    def speed(e):
        a = alignment_rhs(e, w)
        return float(e.masses @ np.sqrt((e.velocities ** 2).sum(1) + (a ** 2).sum(1)))

    return _integrate(traj, lambda e: speed(e) ** p) ** (1.0 / p)


def cone_radius(R: float, v0) -> float:
    """``sqrt(2 R (R + |v0|))``, the cone aperture for velocity wander ``R``."""
    return math.sqrt(2.0 * R * (R + float(np.linalg.norm(v0))))


def _atom_path(traj: Trajectory, atom: int, t_star: float):
    """(time, x, v) of one particle over snapshots up to ``t_star``, following
    index shifts caused by merges and stopping if the particle is absorbed."""
    t0 = traj.snapshots[0].time
    if not 0 <= atom < traj.snapshots[0].n:
        raise IndexError(f"atom {atom} out of range")
    events = sorted(traj.events, key=lambda ev: ev.time)
    k = 0
    idx = atom
    out = []
    for n, s in enumerate(traj.snapshots):
        # the first snapshot is recorded before any merge at the start time
        while n > 0 and k < len(events) and events[k].time <= s.time:
            ev = events[k]
            for c in ev.clusters:
                if idx in c:
                    return out
            removed = [j for c in ev.clusters for j in c[1:]]
            idx -= sum(1 for j in removed if j < idx)
            k += 1
        if s.time - t0 > t_star:
            break
        out.append((s.time - t0, s.positions[idx], s.velocities[idx]))
    return out


def velocity_wander(traj: Trajectory, atom: int, v0, t_star: float) -> float:
    path = _atom_path(traj, atom, t_star)
    return max(float(np.linalg.norm(v - np.asarray(v0, float))) for _, _, v in path)


def cone_containment(traj: Trajectory, atom: int, x0, v0, eps: float, t_star: float) -> float:
    """``max_t |x(t) - x0 - v0 t| - eps t`` over snapshot times in ``(0, t_star]``."""
    x0 = np.asarray(x0, float)
    v0 = np.asarray(v0, float)
    path = [(t, x, v) for t, x, v in _atom_path(traj, atom, t_star) if t > 0.0]
    if not path:
        raise ValueError("no snapshot inside (0, t_star]")
    return max(float(np.linalg.norm(x - x0 - v0 * t)) - eps * t for t, x, _ in path)


def report(traj: Trajectory, R0: float, p: float = 1.05, g: LipschitzObservable | None = None) -> DiagnosticsReport:
    if g is None:
        g = clamped_projection(traj.snapshots[0].dim)
    states = list(_states(traj))
    p0 = traj.snapshots[0].momentum()
    smax, bound, _ = support_bound_check(traj, R0)
    diss, cpp, cp = dissipation_integrals(traj, p)
    return DiagnosticsReport(
        mass_drift=max(abs(e.masses.sum() - 1.0) for e in states),
        momentum_drift=max(float(np.linalg.norm(e.momentum() - p0)) for e in states),
        support_max=smax,
        support_bound=bound,
        dissipation_p=diss,
        coupling_p=cp,
        coupling_pp=cpp,
        modulus_lp=time_modulus(traj, g, p),
        p_used=p,
    )
