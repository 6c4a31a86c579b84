"""Numerical laboratory for convex billiards: orbits, jets, curvature perturbations and saddle connections."""

__version__ = "0.1.0"

from .domain import RadiusProfile, check_admissibility, eval_boundary, make_bump
from .billiard import PhasePoint, next_hit, one_step_differential, map_jet
from .orbits import PeriodicOrbit, find_birkhoff_orbit, classify
from .errors import BjlError

__all__ = [
    "RadiusProfile",
    "check_admissibility",
    "eval_boundary",
    "make_bump",
    "PhasePoint",
    "next_hit",
    "one_step_differential",
    "map_jet",
    "PeriodicOrbit",
    "find_birkhoff_orbit",
    "classify",
    "BjlError",
]
