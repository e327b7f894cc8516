"""Exit problems for one-dimensional SDEs driven by symmetric alpha-stable noise.

Mean exit times and escape probabilities are computed by a finite-difference
discretization of the nonlocal generator, drift and noise parameters are fitted
to observed profiles, and a Monte Carlo simulator provides independent checks.
"""
from .drift_dsl import DriftParseError, eval_drift, free_parameters, parse_drift, to_text
from .estimator import (
    EstimateResult,
    EstimationError,
    EstimationProblem,
    FreeParameter,
    ObservationSet,
    estimate_parameters,
    minimize_multi,
    minimize_scalar,
    relative_l2_objective,
)
from .linear import ConvergenceError, LinearSystem, SingularSystemError, solve_linear
from .mc_oracle import (
    CensoringWarning,
    ExitRecord,
    SimConfig,
    empirical_statistics,
    sample_standard_stable,
    simulate_exit,
)
from .nonlocal_solver import (
    EP,
    MET,
    AssemblyError,
    Domain,
    Profile,
    SchemeQualityWarning,
    SystemParams,
    TargetSet,
    assemble_ep_system,
    assemble_met_system,
    build_grid,
    escape_probability,
    exterior_mass,
    mean_exit_time,
)
from .stable_math import (
    StabilityIndexError,
    reference_met_f0,
    riemann_zeta,
    stable_intensity_constant,
)

__version__ = "0.1.0"
