"""Wave front propagation and normal shift verification for general Lagrangian dynamics."""

from .dynamics import (IntegratorConfig, PhasePoint, Trajectory, integrate, integrate_batch,
                       modified_rhs, phase_integral, standard_rhs)
from .errors import InputError, ModelError, WavefrontError
from .field import DiffConfig, ExtendedScalarField, parse_field
from .front import (GridAxis, Hypersurface, init_front, normal_covector, pfaff_residual,
                    propagate_front, solve_nu, tangent_frame)
from .legendre import (ExplicitHamiltonian, LagrangianModel, LegendreHamiltonian, NewtonConfig,
                       hamiltonian_value, lagrangian_value, momentum_of, omega_p, omega_v,
                       velocity_of)
from .scenario import Scenario, load_scenario

__all__ = [
    "DiffConfig", "ExplicitHamiltonian", "ExtendedScalarField", "GridAxis", "Hypersurface",
    "InputError", "IntegratorConfig", "LagrangianModel", "LegendreHamiltonian", "ModelError",
    "NewtonConfig", "PhasePoint", "Scenario", "Trajectory", "WavefrontError", "hamiltonian_value",
    "init_front", "integrate", "integrate_batch", "lagrangian_value", "load_scenario",
    "modified_rhs", "momentum_of", "normal_covector", "omega_p", "omega_v", "parse_field",
    "pfaff_residual", "phase_integral", "propagate_front", "solve_nu", "standard_rhs",
    "tangent_frame", "velocity_of",
]
