"""Outlier-robust Gaussian-process emulation of distribution-feeder power flow.

The emulator's quadratic trend is fitted by a Schweppe-type generalized
M-estimator whose leverage weights come from projection statistics, so
training data contaminated by vertical outliers or bad leverage points
(up to roughly a quarter of the sample) still yields a usable surrogate.
A radial power-flow solver, a stochastic scenario generator, and an
outlier-injection harness provide the experiment pipeline; the ``gridgp``
CLI drives it end to end.
"""

from .emulator import (
    EmulatorModel,
    EvalReport,
    Prediction,
    evaluate,
    load_model,
    predict,
    predict_batch,
    save_model,
    train,
)
from .estimator import RobustFit, irls_solve, robust_scale
from .exceptions import (
    DatasetFormatError,
    FeederFormatError,
    NumericalError,
    PowerFlowError,
)
from .feeder import FeederModel, load_feeder, load_ieee33
from .kernel import (
    CovarianceFactor,
    KernelParams,
    Standardizer,
    assemble_covariance,
    factorize,
    quadratic_basis,
    se_correlation,
)
from .likelihood import (
    FitConfig,
    LikelihoodEvaluation,
    OptimizerConfig,
    alternate_fit,
    negative_log_likelihood,
    optimize_hyperparameters,
)
from .powerflow import PowerFlowSolution, Scenario, solve_power_flow
from .robust import (
    HuberConfig,
    LeverageDiagnostics,
    chi2_quantile,
    huber_psi,
    huber_q,
    huber_rho,
    projection_statistics,
    robust_location_scale,
    shgm_weights,
)
from .scenarios import (
    ContaminationSpec,
    Dataset,
    build_dataset,
    contaminate,
    generate_scenarios,
    load_dataset,
    save_dataset,
    synthetic_res_series,
)

__version__ = "0.1.0"
