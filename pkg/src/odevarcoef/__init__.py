"""Two-step local polynomial estimation of time-varying ODE coefficients.

The first step smooths every noisy state (and the slope of the first state)
with local polynomials; the second step regresses the smoothed slope on the
smoothed states with a locally weighted polynomial expansion of the
coefficients. The :mod:`~odevarcoef.quadform` and
:mod:`~odevarcoef.asymptotics` modules check the finite-sample behaviour of
the estimator by exact quadratic-form identities and Monte Carlo rate fits.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    InsufficientLocalDataError,
    NonfiniteStateError,
    OdeVarCoefError,
    RegimeNotCoveredError,
    SingularMatrixError,
)
from .kernels import Kernel, equivalent_kernel, get_kernel, kernel_moment, moment_matrix
from .locpoly import (
    SmoothedState,
    SmootherConfig,
    TimeDesign,
    equivalent_kernel_gap,
    local_fit,
    smooth_all,
    weight_w_nu,
)
from .sim import (
    FunctionSpec,
    ObservationSet,
    Scenario,
    TrajectorySet,
    default_scenario,
    observe,
    sample_design,
    solve_trajectories,
)
from .estimator import (
    BetaEstimate,
    StageTwoInput,
    build_z,
    estimate_beta,
    estimate_beta_curve,
    stage_two_input,
    ztwz_limit_gap,
)
from .quadform import build_a_r, lemma3_suite, quad_moments, traces
from .asymptotics import (
    RateReport,
    SweepPlan,
    fit_exponent,
    run_sweep,
    verify_lemma2,
    verify_lemma3,
    verify_theorem1,
)


def data_path(name: str):
    """Path of a bundled file such as ``"acceptance_theorem1.json"``."""
    from importlib.resources import files

    return files(__name__) / "data" / name
