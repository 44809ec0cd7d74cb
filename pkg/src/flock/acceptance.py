"""Acceptance suite: thirteen numbered checks over the bundled fixtures.

Each ``criterion_*`` function returns a :class:`CriterionResult`. ``run_all``
executes them in order; ``fast=True`` loosens the integrator tolerance of the
convergence study, which dominates the runtime.
"""
from __future__ import annotations

import functools
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fixtures, kernel
from .diagnostics import cone_containment, cone_radius, support_bound_check, velocity_wander
from .dynamics import SimOptions, Trajectory, simulate
from .ensemble import AtomicMeasure, Ensemble, merge, quantize
from .flat_metric import (
    LipschitzObservable,
    bl_distance,
    bl_distance_bruteforce,
    pairing_bound_check,
)
from .meanfield import (
    atomic_preservation_experiment,
    cap_consistency,
    convergence_study,
    max_cap_deviation,
)

ALPHA = fixtures.ALPHA
SINGULAR = kernel.Singular(ALPHA)
CAPPED_100 = kernel.Capped(ALPHA, 100.0)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    value: float
    threshold: str
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:2d} {self.name}: {self.value:.6g} ({self.threshold}, {self.seconds:.1f}s)"


def _timed(number: int, name: str):
    def wrap(fn):
        @functools.wraps(fn)
        def inner(*args, **kwargs):
            t0 = time.perf_counter()
            res = fn(*args, **kwargs)
            res.number, res.name = number, name
            res.seconds = time.perf_counter() - t0
            return res
        inner.number = number
        return inner
    return wrap


# ---------------------------------------------------------------------------
# bundled runs


@functools.lru_cache(maxsize=None)
def bundled_runs() -> dict[str, Trajectory]:
    """Every fixture run shared by the conservation and monotonicity checks."""
    runs = {
        "two_body_flocking": simulate(fixtures.two_body(fixtures.FLOCKING_W0), SimOptions(SINGULAR, 20.0)),
        "two_body_sticking": simulate(fixtures.two_body(fixtures.STICKING_W0), SimOptions(SINGULAR, 5.0)),
        "three_body_sticking": simulate(fixtures.three_body_sticking(), SimOptions(SINGULAR, 6.0)),
        "colocated_pair": simulate(fixtures.colocated_pair(),
                                   SimOptions(kernel.Capped(ALPHA, 1e6), 0.1, output_stride=0.005)),
        "random_cloud": simulate(fixtures.random_cloud(50, 2, seed=0), SimOptions(SINGULAR, 5.0)),
        "equal_velocity_cloud": simulate(fixtures.equal_velocity_cloud(10, 2, seed=0), SimOptions(SINGULAR, 2.0)),
        "uniform_box": simulate(quantize(fixtures.uniform_box_source(), 0.25),
                                SimOptions(CAPPED_100, 1.0, rel_tol=1e-6, abs_tol=1e-8)),
    }
    return runs


def _all_states(traj: Trajectory):
    yield from traj.snapshots
    for ev in traj.events:
        yield ev.pre
        yield ev.post


# ---------------------------------------------------------------------------
# criteria


@_timed(1, "mass conservation")
def criterion_mass() -> CriterionResult:
    runs = bundled_runs()
    drift = {k: max(abs(float(s.masses.sum()) - 1.0) for s in _all_states(tr)) for k, tr in runs.items()}
    merges = sum(len(tr.events) for tr in runs.values())
    worst = max(drift.values())
    return CriterionResult(1, "", worst <= 1e-12 and merges >= 1, worst, "<= 1e-12, >= 1 merge",
                           {"per_run": drift, "merge_events": merges})


@_timed(2, "momentum conservation")
def criterion_momentum() -> CriterionResult:
    runs = bundled_runs()
    e0 = fixtures.random_cloud(50, 2, seed=0)
    tr = runs["random_cloud"]
    p0 = e0.momentum()
    drift = max(float(np.linalg.norm(s.momentum() - p0)) for s in _all_states(tr))
    # merges in isolation: fixture events plus a dyadic-mass synthetic merge
    jumps = [float(np.abs(ev.pre.momentum() - ev.post.momentum()).max())
             for t in runs.values() for ev in t.events]
    e = Ensemble([0.25, 0.25, 0.5], [[0.0], [1.0], [2.0]], [[1.0], [-3.0], [0.5]])
    jumps.append(float(np.abs(e.momentum() - merge(e, [0, 2]).momentum()).max()))
    worst_jump = max(jumps)
    ok = drift <= 1e-8 and worst_jump == 0.0 and tr.final.time == 5.0
    return CriterionResult(2, "", ok, drift, "<= 1e-8 on [0,5], merge jump == 0",
                           {"n": e0.n, "merge_jump": worst_jump, "merges_checked": len(jumps)})


@_timed(3, "support bound")
def criterion_support() -> CriterionResult:
    tr = bundled_runs()["uniform_box"]
    R0 = math.sqrt(2.0)
    smax, bound, holds = support_bound_check(tr, R0)
    return CriterionResult(3, "", holds, smax, f"<= 2 R0 (T+1) = {bound:.6g}",
                           {"N": tr.snapshots[0].n, "weight": kernel.to_dict(tr.options.weight)})


@_timed(4, "two-body first integral")
def criterion_first_integral() -> CriterionResult:
    tr = simulate(fixtures.two_body(fixtures.FLOCKING_W0), SimOptions(SINGULAR, 1.0, output_stride=0.01))
    E = np.array([fixtures.first_integral(s) for s in tr.snapshots])
    drift = float(np.abs(E - E[0]).max())
    return CriterionResult(4, "", drift < 1e-6, drift, "< 1e-6 on [0,1]", {"E0": float(E[0])})


@_timed(5, "flocking separation")
def criterion_flocking() -> CriterionResult:
    tr = bundled_runs()["two_body_flocking"]
    r_star = fixtures.terminal_separation(5.0 / 6.0)
    r = float(tr.final.positions[1, 0] - tr.final.positions[0, 0])
    err = abs(r - r_star)
    return CriterionResult(5, "", err <= 1e-3 and tr.final.time == 20.0, err, "<= 1e-3",
                           {"r_final": r, "r_star": r_star})


@_timed(6, "finite-time sticking")
def criterion_sticking() -> CriterionResult:
    tr = bundled_runs()["two_body_sticking"]
    times = [ev.time for ev in tr.events]
    t_pred = fixtures.sticking_time()
    err = abs(times[0] - t_pred) if times else math.inf
    opts = tr.options
    # The exact solution has w = w0 ((t* - t)/t*)^3; the relative velocity
    # drops below stick_dv once (t* - t) <= t* (stick_dv / |w0|)^(1/3).
    t_threshold = t_pred - t_pred * (opts.stick_dv / abs(fixtures.STICKING_W0)) ** (1.0 / 3.0)
    return CriterionResult(6, "", len(times) == 1 and err <= 0.02, err, "one merge, |t - 3| <= 0.02",
                           {"merge_times": times, "t_closed_form": t_pred,
                            "t_threshold_entry": t_threshold,
                            "stick_dx": opts.stick_dx, "stick_dv": opts.stick_dv})


def _random_measure(rng, dim, n_max=4):
    k = int(rng.integers(1, n_max + 1))
    w = rng.uniform(0.1, 1.0, k)
    if rng.random() < 0.5:
        w /= w.sum()
    return AtomicMeasure(rng.uniform(-1.5, 1.5, (k, dim)), w)


@_timed(7, "flat-metric correctness")
def criterion_flat_metric(n_instances: int = 200, seed: int = 7) -> CriterionResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        dim = int(rng.integers(1, 4))
        mu, nu = _random_measure(rng, dim), _random_measure(rng, dim)
        worst = max(worst, abs(bl_distance(mu, nu) - bl_distance_bruteforce(mu, nu)))

    def delta(x, a=1.0):
        return AtomicMeasure(np.atleast_2d(x), [a])

    closed = []
    for s in [0.0, 0.1, 0.5, 1.0, 1.999, 2.0, 3.0, 10.0]:
        closed.append(bl_distance(delta([0.0, 0.0]), delta([s, 0.0])) == min(s, 2.0))
    for a, b in [(1.0, 0.5), (0.25, 0.75), (0.3, 0.3), (2.0, 0.125)]:
        closed.append(bl_distance(delta([0.5, -0.5], a), delta([0.5, -0.5], b)) == abs(a - b))
    ineq = 0
    for _ in range(n_instances):
        x1, x2 = rng.normal(size=(2, 3))
        ineq += bl_distance(delta(x1), delta(x2)) > 2.0 * float(np.linalg.norm(x1 - x2)) + 1e-12
    ok = worst <= 1e-9 and all(closed) and ineq == 0
    return CriterionResult(7, "", ok, worst, "<= 1e-9 vs oracle, closed forms exact",
                           {"closed_forms_exact": sum(closed), "closed_forms": len(closed),
                            "inequality_violations": int(ineq)})


def random_observable(rng, dim: int) -> LipschitzObservable:
    """``a sin(k.z + phi)``: sup ``|a|``, Lipschitz constant ``|a| |k|``."""
    a = float(rng.uniform(0.1, 2.0))
    k = rng.normal(size=dim) * float(rng.uniform(0.2, 3.0))
    phi = float(rng.uniform(0, 2 * math.pi))
    return LipschitzObservable(
        lambda z: a * np.sin(z @ k + phi), a, a * float(np.linalg.norm(k)),
        lambda z: a * np.cos(z @ k + phi)[:, None] * k[None, :],
    )


@_timed(8, "pairing bound")
def criterion_pairing(n_triples: int = 100, seed: int = 8) -> CriterionResult:
    rng = np.random.default_rng(seed)
    worst = -math.inf
    fails = 0
    for _ in range(n_triples):
        dim = int(rng.integers(1, 5))
        mu = _random_measure(rng, dim, 6)
        nu = _random_measure(rng, dim, 6)
        g = random_observable(rng, dim)
        lhs, rhs, holds = pairing_bound_check(g, mu, nu)
        fails += not holds
        worst = max(worst, lhs - rhs)
    return CriterionResult(8, "", fails == 0, worst, "lhs - rhs <= 0", {"violations": fails})


@_timed(9, "mean-field Cauchy trend")
def criterion_cauchy(fast: bool = False, workers: int | None = None) -> CriterionResult:
    rel = 1e-4 if fast else 1e-5
    opts = SimOptions(CAPPED_100, 1.0, rel_tol=rel, abs_tol=rel / 100)
    # the finest entry only supplies the comparison partner for h = 0.125
    rows = convergence_study(fixtures.uniform_box_source(), [0.5, 0.25, 0.125, 0.0625], opts,
                             [0.0, 0.5, 1.0], workers)
    D = {r.h: r.D for r in rows}
    t0 = {r.h: r.per_time[0] for r in rows if r.per_time}
    errors = [r.error for r in rows if r.error]
    trend = D[0.125] < D[0.25] < D[0.5]
    quant = all(t0[h] <= h / 2 for h in (0.5, 0.25, 0.125))
    return CriterionResult(9, "", trend and quant and not errors, D[0.125], "D(.125) < D(.25) < D(.5), D0(h) <= h/2",
                           {"rows": [asdict(r) for r in rows], "rel_tol": rel})


@_timed(10, "cap/step consistency")
def criterion_cap_consistency() -> CriterionResult:
    rows = cap_consistency(fixtures.two_body(fixtures.FLOCKING_W0), [10.0, 1000.0],
                           SimOptions(SINGULAR, 20.0), rel_tols=[1e-8, 1e-9])
    dev = max_cap_deviation(rows)
    return CriterionResult(10, "", dev < 1e-6, dev, "< 1e-6", {"rows": [asdict(r) for r in rows]})


@_timed(11, "cone propagation")
def criterion_cone() -> CriterionResult:
    tr = bundled_runs()["colocated_pair"]
    e0 = tr.snapshots[0]
    t_star = 0.1
    viol, eps = [], []
    for a in range(e0.n):
        v0 = e0.velocities[a]
        R = velocity_wander(tr, a, v0, t_star)
        eps.append(cone_radius(R, v0))
        viol.append(cone_containment(tr, a, e0.positions[a], v0, eps[-1], t_star))
    # cones x0 + t B(v0_i, eps_i) sharing x0 are disjoint iff |v0_1 - v0_2| > eps_1 + eps_2
    gap = float(np.linalg.norm(e0.velocities[0] - e0.velocities[1])) - sum(eps)
    worst = max(viol)
    return CriterionResult(11, "", worst <= 1e-9 and gap > 0, worst, "<= 1e-9, cones disjoint",
                           {"eps": eps, "cone_gap": gap})


@_timed(12, "restart consistency")
def criterion_restart() -> CriterionResult:
    cases = {
        "two_body_sticking": (fixtures.two_body(fixtures.STICKING_W0), 5.0),
        "three_body_sticking": (fixtures.three_body_sticking(), 6.0),
    }
    detail, ok, worst = {}, True, 0.0
    for name, (e0, T) in cases.items():
        rep = atomic_preservation_experiment(e0, SimOptions(SINGULAR, T))
        dev = max([rep.pre_merge_deviation] + [r.deviation for r in rep.restarts])
        worst = max(worst, dev / rep.tolerance)
        ok &= rep.passed and len(rep.restarts) >= 1
        detail[name] = {"passed": rep.passed, "merges": len(rep.restarts), "max_deviation": dev,
                        "tolerance": rep.tolerance, "first_divergence": rep.first_divergence}
    return CriterionResult(12, "", ok, worst, "deviation / (10 rel_tol) <= 1", detail)


def extremum_violation(traj: Trajectory) -> float:
    """Largest increase of a per-coordinate velocity max (or decrease of a min)
    between consecutive recorded states, merges included."""
    states = sorted(_all_states(traj), key=lambda s: s.time)
    worst = 0.0
    for a, b in zip(states, states[1:]):
        worst = max(worst,
                    float((b.velocities.max(0) - a.velocities.max(0)).max()),
                    float((a.velocities.min(0) - b.velocities.min(0)).max()))
    return worst


@_timed(13, "velocity extremum monotonicity")
def criterion_extrema() -> CriterionResult:
    per = {k: extremum_violation(tr) for k, tr in bundled_runs().items()}
    worst = max(per.values())
    return CriterionResult(13, "", worst <= 1e-10, worst, "<= 1e-10 per step", {"per_run": per})


CRITERIA = [
    criterion_mass, criterion_momentum, criterion_support, criterion_first_integral,
    criterion_flocking, criterion_sticking, criterion_flat_metric, criterion_pairing,
    criterion_cauchy, criterion_cap_consistency, criterion_cone, criterion_restart,
    criterion_extrema,
]


def run_all(fast: bool = False, echo=None) -> list[CriterionResult]:
    out = []
    for fn in CRITERIA:
        res = fn(fast=fast) if fn is criterion_cauchy else fn()
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out


def to_json(results) -> str:
    def clean(o):
        if isinstance(o, float) and not math.isfinite(o):
            return str(o)
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, np.generic):
            return clean(o.item())
        return o

    body = {
        "all_passed": all(r.passed for r in results),
        "criteria": [clean(asdict(r)) for r in results],
    }
    return json.dumps(body, indent=1)
