"""Discrete kinetic models of wealth and opinion dynamics in active-particle populations."""
from ._backend import BACKEND
from .core import (
    ActivityGrid,
    InvalidParameterError,
    MomentWeights,
    OpinionLattice,
    PopulationState,
    build_opinion_lattice,
    build_wealth_grid,
    mass,
    mean_wealth,
    moment,
    rhs_multi,
    rhs_single,
)
from .earlywarning import (
    DbsSeries,
    NormSpec,
    ReferenceDistribution,
    StationarityError,
    TurnroundSignal,
    build_reference_constant_gamma,
    dbs,
    dbs_series,
    detect_turnround,
    weighted_l1,
)
from .integrator import (
    IntegratorConfig,
    Method,
    Model,
    NumericalFailure,
    Trajectory,
    build_model,
    conservation_report,
    detect_stationary,
    integrate,
    step,
)
from .politics import (
    CombinedKernel,
    OpinionKernel,
    PoliticsParams,
    build_opinion_kernel,
    combined_kernel_entry,
    verify_opinion_normalization,
)
from .scenario import (
    ConfigError,
    ScenarioConfig,
    SweepSpec,
    emit_scenario,
    load_scenario,
    parse_scenario,
    parse_sweep,
    preset,
    run_scenario,
    run_sweep,
)
from .wealth import (
    Control,
    WealthGameParams,
    alpha,
    build_encounter_rate,
    build_wealth_kernel,
    critical_distance,
    social_gap,
    verify_conservation_conditions,
)

__all__ = [name for name in dir() if not name.startswith("_")]
