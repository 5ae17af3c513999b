"""Verified power-series integration of quadratic chaotic ODE systems.

Firmly grounded backward-forward integration: truncated Taylor expansions
with a guaranteed-convergence step size, bounding-ball containment, backward
re-integration checks, and Lyapunov spectra over the variational extension.
"""

from .numerics import (
    ConfigurationError,
    PrecisionConfig,
    format_mpfr,
    machine_epsilon,
    make_context,
)
from .systems import (
    DefinitionError,
    QuadraticSystem,
    evaluate_rhs,
    extend_with_variational,
    load_system,
    lorenz_system,
    mu,
    one_norm,
    tumor_system,
)
from .taylor import (
    AccuracyError,
    StepBudget,
    TaylorStep,
    cauchy_products,
    compute_coefficients,
    evaluate,
    step_size,
)
from .trajectory import (
    BallEscapeError,
    BoundingBall,
    Trajectory,
    VerificationReport,
    ball_contains,
    construct_trajectory,
    dense_sample,
    estimate_ball,
    verify_round_trip,
)
from .analysis import (
    ReturnEvent,
    RK4Comparison,
    distance_series,
    find_returns,
    rk4_error,
    rk4_integrate,
)
from .lyapunov import (
    LinearDependenceError,
    LyapunovResult,
    PerturbationGroup,
    benettin,
    builtin_groups,
    divergence_average,
    gram_schmidt_pass,
    kaplan_yorke,
)

__version__ = "0.1.0"
