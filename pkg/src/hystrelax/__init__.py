"""Hysteretic vegetation-prey-predator reaction-diffusion systems with
feedback control constraints: simulation, relaxation by chattering and
empirical stability checks."""

__version__ = "0.1.0"

from .controls import (
    ControlField,
    ControlSet,
    OpenLoopControl,
    RelaxedControl,
    chatter,
    chatter_bound,
    hausdorff_distance,
    nearest_selection,
    weak_norm_defect,
)
from .experiments import (
    OracleError,
    lipschitz_check,
    ode_oracle,
    oracle_agreement,
    relaxation_run,
    stop_recovery,
)
from .geometry import Field, GridMismatchError, GridSpec, neumann_laplacian, solve_helmholtz
from .hysteresis import (
    BandInvariantError,
    BranchTag,
    BranchTagError,
    ConstraintBand,
    branch_rate,
    clamp_M,
    scalar_stop_reference,
    sigma_step,
)
from .models import InitialData, ModelSpec, PRESETS, eval_bounds, preset, validate_hypotheses
from .solver import (
    SolverConfig,
    StabilityError,
    State,
    Trajectory,
    energy_budget,
    grid_refinement_report,
    simulate,
    step,
)

__all__ = [name for name in dir() if not name.startswith("_")]
