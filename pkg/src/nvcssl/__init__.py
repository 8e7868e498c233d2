"""Sparse nonparametric varying-coefficient models for longitudinal data.

MAP-EM fitting under a spike-and-slab group lasso prior with structured
(AR(1)/CS), working-fixed (fractional posterior), and unstructured error
covariances, plus frequentist group-penalty baselines and a benchmark
harness.
"""

from .data_model import (
    LongitudinalDataset,
    center_response,
    load_long_csv,
    split_new_subjects,
    write_long_csv,
)
from .spline_basis import BasisSpec, DesignExpansion, build_design, eval_basis, eval_beta, make_basis
from .correlation import CovarianceSpec, WhitenedSystem, ar1_matrix, cs_matrix, whiten
from .ssgl_math import SSGLConfig
from .group_solver import GroupProblem, backend_name, kkt_residual, solve_group_lasso
from .em_fitters import (
    FitResult,
    aicc,
    eb_working_covariance,
    fit_nvcssl,
    fit_robustified,
    fit_unstructured,
    load_model,
    predict,
    save_model,
    select_df,
    select_xi,
)
from .baselines import PenaltySpec, fit_penalized
from .simbench import BenchConfig, MetricsReport, Scenario, generate, run_benchmark, score

__version__ = "0.1.0"
