"""Cross-fitted doubly robust estimation of two-stage dynamic treatment effects."""

from .data import CONTROL, TREATED, Dataset, Schema, load_dataset, make_folds, read_csv
from .errors import (ConfigError, ConvergenceWarning, DegenerateResponseError, DyndrError,
                     EstimationError, SchemaError)
from .estimator import (DrConfig, DrEstimate, estimate_dynamic_ate, estimate_empdiff,
                        estimate_ipw, estimate_wipw)
from .lasso import PenaltySpec, SolverOptions, fit_lasso, fit_logistic_lasso
from .simulation import DgpSpec, generate, robust_metrics, run_monte_carlo

__version__ = "0.1.0"
