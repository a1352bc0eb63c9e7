"""Orbital stabilization of underactuated mechanical systems.

Plans a periodic orbit through virtual constraints, projects states onto it,
linearizes the transverse dynamics, solves the projected periodic Riccati
equation for a stabilizing gain and checks the closed loop in simulation.
"""

__version__ = "0.1.0"

from .configuration import RunConfig
from .errors import OrbistabError
from .mechanics import MechanicalSystem, build_system, cart_pendulum
from .orbit import OrbitParameterization, plan_orbit
from .projection import ProjectionOperator, project
from .riccati import GainSchedule, SolverConfig
from .sim import SimConfig, SimulationTrace, simulate
from .tvlin import TransverseLinearization

__all__ = [
    "GainSchedule",
    "MechanicalSystem",
    "OrbistabError",
    "OrbitParameterization",
    "ProjectionOperator",
    "RunConfig",
    "SimConfig",
    "SimulationTrace",
    "SolverConfig",
    "TransverseLinearization",
    "build_system",
    "cart_pendulum",
    "plan_orbit",
    "project",
    "simulate",
]
