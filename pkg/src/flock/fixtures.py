"""Reference configurations with closed-form or engineered behaviour."""
from __future__ import annotations

import math

import numpy as np

from .ensemble import Ensemble, uniform_box

ALPHA = 0.25
FLOCKING_W0 = -0.5          # first integral E = 5/6, flocks
STICKING_W0 = -4.0 / 3.0    # E = 0, sticks at t = 3

# Inward speed of each outer particle in three_body_sticking, found by
# bisection between crossing and flocking (scripts/find_three_body_speed.py)
# and centred in the sticking band, which spans about [0.617195, 0.617225].
THREE_BODY_SPEED = 0.61721


def two_body(w0: float, r0: float = 1.0) -> Ensemble:
    """d=1, m=(1/2, 1/2), x=(0, r0), v=(0, w0)."""
    return Ensemble([0.5, 0.5], [[0.0], [r0]], [[0.0], [w0]])


def first_integral(e: Ensemble, alpha: float = ALPHA) -> float:
    """``w + sign(r) |r|^(1-alpha) / (1-alpha)`` for a two-particle d=1 ensemble."""
    r = float(e.positions[1, 0] - e.positions[0, 0])
    w = float(e.velocities[1, 0] - e.velocities[0, 0])
    return w + math.copysign(abs(r) ** (1 - alpha) / (1 - alpha), r)


def terminal_separation(E: float, alpha: float = ALPHA) -> float:
    return ((1 - alpha) * E) ** (1 / (1 - alpha))


def sticking_time(r0: float = 1.0, alpha: float = ALPHA) -> float:
    return (1 - alpha) * r0 ** alpha / alpha


def colocated_pair() -> Ensemble:
    """Two atoms at the origin with velocities +1 and -1 (d=1)."""
    return Ensemble([0.5, 0.5], [[0.0], [0.0]], [[1.0], [-1.0]])


def three_body_sticking(speed: float = THREE_BODY_SPEED) -> Ensemble:
    """d=2 mirror-symmetric triple: an approaching pair on the x-axis and a
    spectator on the y-axis at rest. The pair sticks near t = 3.44."""
    return Ensemble(
        [0.4, 0.4, 0.2],
        [[-0.5, 0.0], [0.5, 0.0], [0.0, 2.0]],
        [[speed, 0.0], [-speed, 0.0], [0.0, 0.0]],
    )


def uniform_box_source():
    """Uniform density on [0, 1] x [0, 1] (d=1 phase space), inside B(sqrt 2)."""
    return uniform_box([0.0, 0.0], [1.0, 1.0], radius=math.sqrt(2.0))


def equal_velocity_cloud(n: int = 10, dim: int = 2, seed: int = 0, speed=None) -> Ensemble:
    rng = np.random.default_rng(seed)
    v = np.asarray(speed if speed is not None else rng.uniform(-1, 1, dim), dtype=float)
    x = rng.uniform(-1, 1, (n, dim))
    m = rng.uniform(0.5, 1.5, n)
    return Ensemble(m / m.sum(), x, np.tile(v, (n, 1)))


def random_cloud(n: int = 20, dim: int = 2, seed: int = 0, radius: float = 1.0) -> Ensemble:
    """Random particles with positions and velocities in the ball of ``radius``
    (sup over both), masses uniform in [0.5, 1.5] before normalisation."""
    rng = np.random.default_rng(seed)

    def ball(k):
        z = rng.normal(size=(k, dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        return z * radius * rng.uniform(0, 1, (k, 1)) ** (1 / dim)

    m = rng.uniform(0.5, 1.5, n)
    return Ensemble(m / m.sum(), ball(n), ball(n))
