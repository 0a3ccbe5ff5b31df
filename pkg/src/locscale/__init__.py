"""Location-scale models for panels of spectra sharing one baseline curve."""

from .bandwidth import CVConfig, CVReport, assign_folds, cv_select, fold_mspe
from .errors import (
    AllCellsInvalid,
    AllZeroWeights,
    DataError,
    DegenerateCurve,
    EmptyWindow,
    InsufficientOverlap,
    InvalidFolds,
    LocScaleError,
    NonFinite,
    NonMonotonic,
    NumericalError,
    OutOfRange,
    ParseError,
)
from .inference import (
    BandwidthWindowWarning,
    BetaInference,
    all_beta_cis,
    beta_ci,
    beta_variance,
    default_bandwidths,
    ci_bandwidth_window,
    smoother_bias_probe,
)
from .ingest import RawSpectra, load_panel, panel_to_csv, read_long_csv, read_spectra, read_wide_csv, register
from .kernel import EPANECHNIKOV, KernelFamily, KernelSpec, eval_kernel, make_kernel, moment
from .model import (
    BASELINE,
    Bandwidths,
    FitOptions,
    LocationScale,
    ModelFit,
    SpectraPanel,
    fit_location_scale,
    fit_to_dict,
    fit_to_json,
    initial_curve,
    multi_step_fit,
    plug_in_sigma2,
    predict,
    renormalize,
    update_curve,
)
from .smoother import CurveEstimate, SmoothingPlan, evaluate_curve, local_linear_fit, pooled_weighted_fit
from .synth import MCResult, SimConfig, generate, run_mc

__version__ = "0.1.0"
