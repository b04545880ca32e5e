"""Kinetic SIR model with viral load: moment ODEs, Fokker-Planck solver, Monte Carlo and oracles."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    COMPARTMENTS,
    Density,
    Grid,
    MomentState,
    Params,
    make_delta_density,
    make_uniform_density,
    moment,
    moments_of,
    variance,
)
from .equilibria import InverseGamma, quasi_equilibrium  # noqa: E402
from .errors import (  # noqa: E402
    ConfigError,
    DomainError,
    InfeasibleParametersError,
    KinsirError,
    NumericalError,
    OutputError,
)
from .fokker_planck import FpState, fp_step, run_fp  # noqa: E402
from .macro import equilibrium, integrate  # noqa: E402
from .scenario import Scenario, load_scenario  # noqa: E402

__all__ = [
    "COMPARTMENTS",
    "ConfigError",
    "Density",
    "DomainError",
    "FpState",
    "Grid",
    "InfeasibleParametersError",
    "InverseGamma",
    "KinsirError",
    "MomentState",
    "NumericalError",
    "OutputError",
    "Params",
    "Scenario",
    "equilibrium",
    "fp_step",
    "integrate",
    "load_scenario",
    "make_delta_density",
    "make_uniform_density",
    "moment",
    "moments_of",
    "quasi_equilibrium",
    "run_fp",
    "variance",
]
