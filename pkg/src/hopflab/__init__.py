"""Monte Carlo and grid tools for Hopf-type lower bounds of Lévy-type operators on bounded domains."""

from .domain import Ball, Box, Interval, domain_from_dict
from .estimate import Estimate
from .generator import CompoundPoisson, GeneratorSpec, IsotropicStable, NoJumps, uniform_ball_jumps
from .sampler import PathConfig, simulate_batch, simulate_exit

__version__ = "0.1.0"

__all__ = [
    "Ball",
    "Box",
    "Interval",
    "domain_from_dict",
    "Estimate",
    "GeneratorSpec",
    "IsotropicStable",
    "CompoundPoisson",
    "NoJumps",
    "uniform_ball_jumps",
    "PathConfig",
    "simulate_batch",
    "simulate_exit",
]
