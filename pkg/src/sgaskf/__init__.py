"""Robust Kalman filtering under sub-Gaussian alpha-stable measurement noise."""

__version__ = "0.1.0"

from .estimators import (
    EstimateOutcome,
    GammaSeriesConfig,
    LaguerreRule,
    ScalePosterior,
    estimate_glq,
    estimate_gs,
    estimate_hybrid,
    estimate_is,
    is_inverse_mean,
    laguerre_rule,
    slash_scale_mean,
    student_t_scale_mean,
    vg_scale_mean,
)
from .filters import (
    EstimatorSpec,
    GaussianBelief,
    IWParams,
    StateSpaceModel,
    StepFailure,
    VbConfig,
    VbStepReport,
    filter_step,
    fixed_point_converged,
    kalman_step,
    kf_update,
    predict,
)
from .noise import NoiseFamily, sample_measurement_noise, true_covariance
from .stable import (
    MixingLaw,
    StableLaw,
    mixing_law,
    pdf_series_partial,
    positive_stable_logpdf,
    positive_stable_pdf,
    sample_positive_stable,
)
from .tracking import (
    FilterSetup,
    MonteCarloReport,
    RunResult,
    ScenarioConfig,
    constant_velocity_model,
    effectiveness,
    run_monte_carlo,
    simulate_track,
)

__all__ = [s for s in dir() if not s.startswith("_")]
