"""Mean-field Cauchy studies and uniqueness-consistency experiments.

The limit measure is not computable, so convergence is judged by flat
distances between consecutive resolutions. Uniqueness of atomic solutions is
checked through its computable consequences: trajectories that agree across
caps (where the cap is inactive), across tolerances, and across restarts
from post-merge states.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernel
from .dynamics import SimOptions, Trajectory, simulate
from .ensemble import Ensemble, empirical_measure, quantize
from .flat_metric import bl_distance


def worker_count(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("FLOCK_THREADS", default)))
    except ValueError:
        return default


def state_at(traj: Trajectory, t: float, tol: float = 1e-9) -> Ensemble:
    times = traj.times
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > tol:
        raise KeyError(f"no snapshot within {tol} of t={t}")
    return traj.snapshots[k]


def _map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# convergence in h


@dataclass
class ConvergenceRow:
    h: float
    N: int
    D: float                    # distance to the next finer resolution (nan for the last)
    per_time: list[float] = field(default_factory=list)
    error: str | None = None


def convergence_study(source, h_list, opts: SimOptions, sample_times, workers: int | None = None):
    """Quantize at each h, simulate, and record
    ``D(h) = max_t d(f_h(t), f_h'(t))`` with h' the next entry of ``h_list``."""
    h_list = [float(h) for h in h_list]
    if len(h_list) < 2 or any(b >= a for a, b in zip(h_list, h_list[1:])):
        raise ValueError("h_list must be strictly decreasing with at least two entries")
    sample_times = sorted(float(t) for t in sample_times)
    if sample_times[-1] > opts.t_end:
        raise ValueError("sample times exceed t_end")
    workers = worker_count() if workers is None else workers

    # make sure every sample time is a snapshot time
    stride = opts.output_stride
    for t in sample_times:
        if t > 0 and abs(round(t / stride) * stride - t) > 1e-12 and t != opts.t_end:
            raise ValueError(f"sample time {t} is not a multiple of output_stride {stride}")

    def run(h):
        e0 = quantize(source, h)
        try:
            return e0, simulate(e0, opts), None
        except Exception as exc:  # annotated per row
            return e0, None, f"{type(exc).__name__}: {exc}"

    runs = _map(run, h_list, workers)

    def measures(traj):
        return [empirical_measure(state_at(traj, t)) for t in sample_times]

    emp = [measures(tr) if tr is not None else None for _, tr, _ in runs]
    rows = []
    for k, h in enumerate(h_list):
        e0, traj, err = runs[k]
        row = ConvergenceRow(h, e0.n, math.nan, error=err)
        if k + 1 < len(h_list):
            if emp[k] is None or emp[k + 1] is None:
                row.error = row.error or runs[k + 1][2]
            else:
                row.per_time = [bl_distance(a, b) for a, b in zip(emp[k], emp[k + 1])]
                row.D = max(row.per_time)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# cap consistency


def _alpha(w) -> float:
    if isinstance(w, (kernel.Singular, kernel.Capped)):
        return w.alpha
    raise TypeError("cap consistency needs a power-law weight")


def _state_diff(a: Ensemble, b: Ensemble) -> float:
    return float(max(np.abs(a.positions - b.positions).max(), np.abs(a.velocities - b.velocities).max()))


def _min_gap(e: Ensemble) -> float:
    if e.n < 2:
        return math.inf
    diff = e.positions[None, :, :] - e.positions[:, None, :]
    r = np.linalg.norm(diff, axis=2)
    np.fill_diagonal(r, np.inf)
    return float(r.min())


@dataclass
class CapComparison:
    cap_a: float
    cap_b: float
    rel_tol_a: float
    rel_tol_b: float
    deviation: float            # max state difference inside the separated window
    window_end: float
    after_window: float         # max state difference after the window (informational)
    note: str = ""


def compare_runs(ta: Trajectory, tb: Trajectory, radius: float):
    """Max state difference over the common snapshot times at which both
    runs have the same particle count and every pair is farther apart than
    ``radius``. Returns ``(deviation, window_end, after_window)``."""
    tbt = {round(s.time, 12): s for s in tb.snapshots}
    dev, end, after = 0.0, math.nan, 0.0
    open_ = True
    for sa in ta.snapshots:
        sb = tbt.get(round(sa.time, 12))
        if sb is None:
            continue
        inside = sa.n == sb.n and min(_min_gap(sa), _min_gap(sb)) > radius
        if open_ and inside:
            dev = max(dev, _state_diff(sa, sb))
            end = sa.time
        else:
            open_ = False
            if sa.n == sb.n:
                after = max(after, _state_diff(sa, sb))
    return dev, end, after


def cap_consistency(e0: Ensemble, caps, opts: SimOptions, rel_tols=None, workers: int | None = None):
    """Run one trajectory per (cap, tolerance) and compare every run with
    the first inside the window where all gaps exceed ``min(caps)**(-1/alpha)``."""
    caps = [float(c) for c in caps]
    if len(caps) < 2:
        raise ValueError("need at least two caps")
    alpha = _alpha(opts.weight)
    rel_tols = [opts.rel_tol] if rel_tols is None else [float(r) for r in rel_tols]
    configs = [(c, r) for c in caps for r in rel_tols]
    workers = worker_count() if workers is None else workers

    def run(cfg):
        c, r = cfg
        o = replace(opts, weight=kernel.Capped(alpha, c), rel_tol=r, abs_tol=opts.abs_tol * r / opts.rel_tol)
        return simulate(e0, o)

    trajs = _map(run, configs, workers)
    radius = min(caps) ** (-1.0 / alpha)
    out = []
    (ca, ra), ta = configs[0], trajs[0]
    for (cb, rb), tb in zip(configs[1:], trajs[1:]):
        dev, end, after = compare_runs(ta, tb, radius)
        note = "window empty" if math.isnan(end) else ""
        out.append(CapComparison(ca, cb, ra, rb, dev if not note else math.nan, end, after, note))
    return out


def max_cap_deviation(rows) -> float:
    vals = [r.deviation for r in rows if not math.isnan(r.deviation)]
    return max(vals) if vals else math.nan


# ---------------------------------------------------------------------------
# restart consistency


@dataclass
class RestartCheck:
    time: float
    deviation: float
    compared: int
    skipped: int


@dataclass
class PreservationReport:
    rel_tol: float
    first_merge_time: float
    pre_merge_deviation: float
    restarts: list[RestartCheck]
    passed: bool
    first_divergence: float | None = None

    @property
    def tolerance(self) -> float:
        return 10.0 * self.rel_tol


def atomic_preservation_experiment(e0: Ensemble, opts: SimOptions) -> PreservationReport:
    """Step-refinement agreement before the first merge, and agreement of
    fresh restarts from every post-merge state with the continued run."""
    tol = 10.0 * opts.rel_tol
    fine = replace(opts, rel_tol=opts.rel_tol / 10, abs_tol=opts.abs_tol / 10)
    ta = simulate(e0, opts)
    tb = simulate(e0, fine)
    firsts = [t.events[0].time for t in (ta, tb) if t.events]
    t1 = min(firsts) if firsts else opts.t_end

    divergence = None
    pre = 0.0
    tbt = {round(s.time, 12): s for s in tb.snapshots}
    for sa in ta.snapshots:
        if sa.time >= t1 and firsts:
            break
        sb = tbt.get(round(sa.time, 12))
        if sb is None or sb.n != sa.n:
            continue
        d = _state_diff(sa, sb)
        pre = max(pre, d)
        if d > tol and divergence is None:
            divergence = sa.time

    restarts = []
    for ev in ta.events:
        if ev.time >= opts.t_end:
            continue
        tr = simulate(ev.post, opts)
        trt = {round(s.time, 12): s for s in tr.snapshots}
        dev, n_cmp, n_skip = 0.0, 0, 0
        for sa in ta.snapshots:
            if sa.time <= ev.time:
                continue
            sr = trt.get(round(sa.time, 12))
            if sr is None:
                continue
            if sr.n != sa.n:
                n_skip += 1
                continue
            d = _state_diff(sa, sr)
            dev = max(dev, d)
            n_cmp += 1
            if d > tol and divergence is None:
                divergence = sa.time
        restarts.append(RestartCheck(ev.time, dev, n_cmp, n_skip))

    passed = pre <= tol and all(r.deviation <= tol for r in restarts)
    return PreservationReport(opts.rel_tol, t1, pre, restarts, passed, divergence)
