"""Nash equilibria of two-player nonzero-sum stochastic impulse games on the real line."""

from .basis import PhiBasis, eval_phi, make_basis, particular_solution
from .model import (
    EquilibriumParams,
    GameSpec,
    OrderConditionError,
    PiecewiseValue,
    SpecError,
    StrategyError,
    ThresholdStrategy,
    bundled_spec,
    eval_value,
    eval_value_deriv,
    load_params,
    load_spec,
    strategies_from_params,
    validate_spec,
    value_functions,
)
from .qvi import (
    PastingResidual,
    SolverError,
    VerificationReport,
    intervention_operator,
    solve,
    solve_system,
    system_residual,
    verify_candidate,
)
from .simulate import (
    SimConfig,
    SimulationError,
    SimulationEstimate,
    calibrate_bias,
    nash_deviation_test,
    path_diagnostics,
    select_horizon,
    simulate_paths,
    simulate_trace,
)
from .symmetric import (
    DerivedCoefficients,
    asymptotic_limits,
    closed_form_equilibrium,
    solve_xi,
    xi_derivatives,
)

__version__ = "0.1.0"

__all__ = [
    "DerivedCoefficients",
    "EquilibriumParams",
    "GameSpec",
    "OrderConditionError",
    "PastingResidual",
    "PhiBasis",
    "PiecewiseValue",
    "SimConfig",
    "SimulationError",
    "SimulationEstimate",
    "SolverError",
    "SpecError",
    "StrategyError",
    "ThresholdStrategy",
    "VerificationReport",
    "asymptotic_limits",
    "bundled_spec",
    "calibrate_bias",
    "closed_form_equilibrium",
    "eval_phi",
    "eval_value",
    "eval_value_deriv",
    "intervention_operator",
    "load_params",
    "load_spec",
    "make_basis",
    "nash_deviation_test",
    "particular_solution",
    "path_diagnostics",
    "select_horizon",
    "simulate_paths",
    "simulate_trace",
    "solve",
    "solve_system",
    "solve_xi",
    "strategies_from_params",
    "system_residual",
    "validate_spec",
    "value_functions",
    "verify_candidate",
    "xi_derivatives",
]
