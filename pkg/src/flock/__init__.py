"""Cucker-Smale flocking with a singular communication weight.

Particle engine with sticking and merging, a bounded-Lipschitz (flat)
distance between atomic measures, run diagnostics and mean-field studies.
"""
from .dynamics import SimOptions, Trajectory, simulate
from .ensemble import AtomicMeasure, Ensemble, empirical_measure, quantize
from .flat_metric import bl_distance
from .kernel import Capped, RegularCS, Singular

__all__ = [
    "AtomicMeasure", "Capped", "Ensemble", "RegularCS", "SimOptions", "Singular",
    "Trajectory", "bl_distance", "empirical_measure", "quantize", "simulate",
]
__version__ = "0.1.0"
