"""Exact dynamics and thermodynamics of quadratic open quantum systems.

A system of bosonic or fermionic levels coupled linearly to thermal
reservoirs is solved through its nonequilibrium Green functions. The
package builds the exact master-equation coefficients, reduced states,
renormalized thermodynamic series and steady states from them.
"""

from .model import (
    ConfigurationError,
    NoThermalizationError,
    QthermError,
    ReservoirSpec,
    SolverError,
    Statistics,
    SystemSpec,
    TimeGrid,
    be_fd,
)
from .spectral import Lorentzian, Ohmic, Tabulated, find_bound_states, self_energy, spectral_function
from .greenfn import GreenFunctionSet, solve, steady_occupation
from .mastereq import CoefficientSeries, coefficients, propagate_master_equation
from .states import ReducedState, closed_form_rho_boson, set_rho_fermion, trace_distance
from .thermo import (
    boson_thermodynamics,
    fermion_thermodynamics,
    specific_heat_sweep,
    steady_state_boson,
    steady_state_fermion,
)

__version__ = "0.1.0"
