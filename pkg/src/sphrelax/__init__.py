"""Total-Lagrangian SPH for elastic solids with random-choice implicit damping."""

from .cases import CaseSpec, builtin_cases, make_case
from .damping import DampingConfig, DampingOperator, artificial_viscosity, strang_damping_sweep
from .kernel import WendlandC2
from .neighbors import build_reference_neighborhoods
from .simulation import RunReport, Simulation, SolverFailure, run
from .state import Material, ParticleSystem, material_from_young_poisson

__all__ = [
    "CaseSpec",
    "DampingConfig",
    "DampingOperator",
    "Material",
    "ParticleSystem",
    "RunReport",
    "Simulation",
    "SolverFailure",
    "WendlandC2",
    "artificial_viscosity",
    "build_reference_neighborhoods",
    "builtin_cases",
    "make_case",
    "material_from_young_poisson",
    "run",
    "strang_damping_sweep",
]

__version__ = "0.1.0"
