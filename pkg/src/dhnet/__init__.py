"""District heating network simulation: hydraulics, upwind advection with a
port-Hamiltonian embedding, implicit midpoint time stepping and a GENERIC
pipe-operator check suite."""

from ._accel import BACKEND
from .materials import (
    WATER,
    DomainError,
    FrictionMode,
    FrictionModel,
    MaterialModel,
    density_of_energy,
    energy_of_temperature,
    friction_factor,
    temperature_of_energy,
    viscosity_of_energy,
)
from .network import (
    Network,
    NetworkError,
    OperationalBounds,
    flow_partition,
    load_network,
    path_network,
    star_network,
    two_loop_network,
)
from .hydraulics import HydraulicClosure, solve_hydraulics
from .thermal import assemble_system, build_mesh
from .ph import build_ph, check_lyapunov, dissipation_audit
from .integrator import TimeGrid, simulate, step_midpoint
from .scenario import Scenario, TimeTable

__version__ = "0.1.0"
