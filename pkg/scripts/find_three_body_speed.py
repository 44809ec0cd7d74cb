"""Bisect the inward speed of the three-body fixture onto the sticking window.

Too slow and the pair flocks at a positive distance; too fast and it crosses
with a nonzero relative velocity. In between lies a thin band where the pair
enters the sticking tube and merges.
"""
import argparse

from flock.dynamics import SimOptions, simulate
from flock.fixtures import ALPHA, three_body_sticking
from flock.kernel import Singular


def outcome(speed, t_end=8.0):
    opts = SimOptions(Singular(ALPHA), t_end, rel_tol=1e-10, abs_tol=1e-12, output_stride=0.5)
    traj = simulate(three_body_sticking(speed), opts)
    if traj.events:
        return "stick", traj.events[0].time
    e = traj.final
    gap = e.positions[1, 0] - e.positions[0, 0]
    return ("cross" if gap < 0 else "flock"), gap


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lo", type=float, default=0.3)
    ap.add_argument("--hi", type=float, default=1.0)
    ap.add_argument("--iters", type=int, default=40)
    args = ap.parse_args()
    lo, hi = args.lo, args.hi
    for _ in range(args.iters):
        mid = 0.5 * (lo + hi)
        kind, info = outcome(mid)
        print(f"{mid:.16f} {kind} {info}")
        if kind == "stick":
            print(f"THREE_BODY_SPEED = {mid!r}")
            return
        if kind == "flock":
            lo = mid
        else:
            hi = mid
    print("no sticking speed found")


if __name__ == "__main__":
    main()
