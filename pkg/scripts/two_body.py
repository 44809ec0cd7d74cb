"""Two-body regimes against their closed forms.

Sweeps the initial relative velocity w0 (r0 = 1, alpha = 0.25) and prints,
for each run, the first integral, the predicted outcome and what the
integrator did. With ``--threshold-sweep`` it instead varies the sticking
thresholds on the E = 0 case and shows the merge time approaching 3.
"""
import argparse
import math

from flock import fixtures
from flock.dynamics import SimOptions, simulate
from flock.kernel import Singular


def predicted(E):
    if E > 0:
        return f"flock at r* = {fixtures.terminal_separation(E):.6f}"
    if E == 0:
        return f"stick at t = {fixtures.sticking_time():.6f}"
    return "cross"


def sweep(w0s, t_end):
    print(f"{'w0':>10} {'E':>10}  {'prediction':<28} observed")
    for w0 in w0s:
        e0 = fixtures.two_body(w0)
        E = fixtures.first_integral(e0)
        tr = simulate(e0, SimOptions(Singular(fixtures.ALPHA), t_end))
        if tr.events:
            seen = f"merged at t = {tr.events[0].time:.6f}"
        else:
            r = tr.final.positions[1, 0] - tr.final.positions[0, 0]
            seen = f"r(T) = {r:.6f}"
        label = predicted(0.0 if abs(E) < 1e-12 else E)
        print(f"{w0:>10.5f} {E:>10.5f}  {label:<28} {seen}")


def threshold_sweep(t_end):
    t_star = fixtures.sticking_time()
    print(f"{'threshold':>10} {'merge time':>12} {'tube entry':>12} {'3 - t':>10}")
    for k in range(3, 13):
        thr = 10.0 ** -k
        opts = SimOptions(Singular(fixtures.ALPHA), t_end, rel_tol=1e-10, abs_tol=1e-13,
                          stick_dx=thr, stick_dv=thr)
        tr = simulate(fixtures.two_body(fixtures.STICKING_W0), opts)
        t = tr.events[0].time if tr.events else math.nan
        entry = t_star * (1 - (thr / abs(fixtures.STICKING_W0)) ** (1 / 3))
        print(f"{thr:>10.0e} {t:>12.6f} {entry:>12.6f} {t_star - t:>10.2e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--t-end", type=float, default=20.0)
    ap.add_argument("--threshold-sweep", action="store_true")
    args = ap.parse_args()
    if args.threshold_sweep:
        threshold_sweep(min(args.t_end, 5.0))
    else:
        sweep([-0.25, fixtures.FLOCKING_W0, -1.0, fixtures.STICKING_W0, -1.5], args.t_end)


if __name__ == "__main__":
    main()
