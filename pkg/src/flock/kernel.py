"""Communication weights for Cucker-Smale alignment.

Three variants are supported:

* ``Singular(alpha)``      psi(s) = s**-alpha, with psi(0) = inf
* ``Capped(alpha, cap)``   psi_n(s) = min(s**-alpha, n)
* ``RegularCS(K, beta)``   psi(s) = K / (1 + s**2)**(beta / 2)

All weights are pure functions of the distance. ``evaluate`` accepts scalars
or numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np


class InvalidWeight(ValueError):
    pass


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha < 0.5):
        raise InvalidWeight(f"alpha must lie in (0, 1/2), got {alpha!r}")


@dataclass(frozen=True)
class Singular:
    alpha: float

    def __post_init__(self):
        _check_alpha(self.alpha)


@dataclass(frozen=True)
class Capped:
    alpha: float
    cap: float

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not (self.cap > 0.0 and math.isfinite(self.cap)):
            raise InvalidWeight(f"cap must be positive and finite, got {self.cap!r}")


@dataclass(frozen=True)
class RegularCS:
    K: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if not self.K > 0.0:
            raise InvalidWeight(f"K must be positive, got {self.K!r}")
        if not self.beta >= 0.0:
            raise InvalidWeight(f"beta must be nonnegative, got {self.beta!r}")


WeightSpec = Union[Singular, Capped, RegularCS]


def _power_law(alpha, s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(s > 0.0, np.power(np.where(s > 0.0, s, 1.0), -alpha), np.inf)


def evaluate(spec: WeightSpec, s):
    """Weight value at distance ``s`` (scalar or array, ``s >= 0``)."""
    scalar = np.ndim(s) == 0
    if isinstance(spec, Singular):
        out = _power_law(spec.alpha, s)
    elif isinstance(spec, Capped):
        out = np.minimum(_power_law(spec.alpha, s), spec.cap)
    elif isinstance(spec, RegularCS):
        s = np.asarray(s, dtype=float)
        out = spec.K / np.power(1.0 + s * s, 0.5 * spec.beta)
    else:
        raise TypeError(f"unknown weight spec {spec!r}")
    return float(out) if scalar else out


def cap_activation_radius(spec: Capped) -> float:
    """Distance below which the cap is active, ``cap**(-1/alpha)``."""
    if not isinstance(spec, Capped):
        raise TypeError("cap_activation_radius needs a Capped weight")
    return spec.cap ** (-1.0 / spec.alpha)


def is_singular(spec: WeightSpec) -> bool:
    return isinstance(spec, Singular)


def to_dict(spec: WeightSpec) -> dict:
    if isinstance(spec, Singular):
        return {"weight": "singular", "alpha": spec.alpha}
    if isinstance(spec, Capped):
        return {"weight": "capped", "alpha": spec.alpha, "cap": spec.cap}
    return {"weight": "regular", "K": spec.K, "beta": spec.beta}


def from_dict(d: dict) -> WeightSpec:
    kind = d.get("weight", "singular")
    if kind == "singular":
        return Singular(float(d["alpha"]))
    if kind == "capped":
        return Capped(float(d["alpha"]), float(d["cap"]))
    if kind == "regular":
        return RegularCS(float(d.get("K", 1.0)), float(d.get("beta", 0.0)))
    raise InvalidWeight(f"unknown weight kind {kind!r}")
