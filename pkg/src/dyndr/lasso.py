"""L1-penalized least squares and logistic regression.

Objectives, with the intercept (column 0 of ``x``) unpenalized::

    gaussian:  (1/M) sum (y_i - x_i'b)^2                      + lam * P(b)
    binomial:  (1/M) sum [log(1 + exp(x_i'b)) - a_i x_i'b]     + lam * P(b)

    P(b) = mix * |b_{-0}|_1 + (1 - mix) / 2 * |b_{-0}|_2^2

Columns are centered and scaled internally for conditioning; the penalty is
applied to the original-scale coefficients, so the returned fit solves the
objective above exactly (up to ``tol``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import _kernels
from .data import make_folds
from .errors import ConfigError, ConvergenceWarning, DegenerateResponseError, SchemaError

GAUSSIAN = "gaussian"
BINOMIAL = "binomial"
FAMILIES = (GAUSSIAN, BINOMIAL)
DEFAULT_RATIO = {GAUSSIAN: 1e-3, BINOMIAL: 1e-2}
LAMBDA_FLOOR = 1e-12


@dataclass(frozen=True)
class PenaltySpec:
    lam: float
    mix: float = 1.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        if not 0 < self.mix <= 1:
            raise ConfigError(f"penalty mix must lie in (0, 1], got {self.mix}")


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-7
    max_sweeps: int = 100_000
    max_outer: int = 100
    standardize: bool = True
    weight_floor: float = 1e-5

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.max_sweeps < 1 or self.max_outer < 1:
            raise ConfigError("iteration caps must be at least 1")


@dataclass(frozen=True, eq=False)
class GlmFit:
    """A fitted penalized GLM; ``coefficients[0]`` is the intercept."""

    coefficients: np.ndarray
    lambda_used: float
    sweeps: int
    converged: bool
    family: str
    mix: float = 1.0
    kkt_violation: float = float("nan")

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def slopes(self) -> np.ndarray:
        return self.coefficients[1:]


def soft_threshold(z: float, t: float) -> float:
    if t < 0:
        raise ConfigError("threshold must be nonnegative")
    return float(np.sign(z) * max(abs(z) - t, 0.0))


def _check_inputs(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise SchemaError(f"incompatible shapes x{x.shape} and y{y.shape}")
    if x.shape[0] < 1:
        raise SchemaError("need at least one row")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise SchemaError("non-finite values in the inputs")
    if not np.all(x[:, 0] == 1.0):
        raise SchemaError("column 0 of the design must be the all-ones intercept column")
    return x, y


def _check_binary(a):
    if not np.all((a == 0) | (a == 1)):
        raise SchemaError("binomial response must be 0/1")
    if a.min() == a.max():
        raise DegenerateResponseError("degenerate response: all values equal")


def _column_stats(X, standardize):
    means = X.mean(axis=0)
    sd = X.std(axis=0)
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(means))
    scale = np.where(const, 0.0, sd if standardize else 1.0)
    return means, scale


def _standardized(X, means, scale):
    safe = np.where(scale > 0, scale, 1.0)
    Z = (X - means) / safe
    Z[:, scale == 0] = 0.0
    return np.asfortranarray(Z)


def _to_original(b0_std, b_std, means, scale):
    beta = np.zeros_like(b_std)
    nz = scale > 0
    beta[nz] = b_std[nz] / scale[nz]
    return b0_std - means @ beta, beta


def kkt_violation(fit: GlmFit, x, y) -> float:
    """Largest KKT residual of ``fit`` on data (x, y), original scale.

    Covers the intercept stationarity and, for each penalized coordinate, the
    subgradient condition of the fit's own penalty.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    M = x.shape[0]
    eta = x @ fit.coefficients
    if fit.family == GAUSSIAN:
        neg_grad = 2.0 / M * (x.T @ (y - eta))
    else:
        neg_grad = x.T @ (y - expit(eta)) / M
    lam, mix = fit.lambda_used, fit.mix
    beta = fit.coefficients[1:]
    g = neg_grad[1:]
    viol = np.where(beta != 0,
                    np.abs(g - lam * (1 - mix) * beta - lam * mix * np.sign(beta)),
                    np.maximum(np.abs(g) - lam * mix, 0.0))
    return float(max(abs(neg_grad[0]), viol.max(initial=0.0)))


def _gaussian_path(x, y, lams, mix, opts):
    X = x[:, 1:]
    M = X.shape[0]
    means, scale = _column_stats(X, opts.standardize)
    Z = _standardized(X, means, scale)
    ybar = y.mean()
    G = Z.T @ Z / M
    c0 = Z.T @ (y - ybar) / M
    b = np.zeros(X.shape[1])
    coefs, sweeps, conv = _kernels.gaussian_path(
        G, c0, scale, np.asarray(lams, dtype=float), float(mix), opts.tol, opts.tol,
        opts.max_sweeps, b)
    out = []
    for k in range(len(lams)):
        b0, beta = _to_original(ybar, coefs[k], means, scale)
        out.append((np.concatenate([[b0], beta]), int(sweeps[k]), bool(conv[k])))
    return out


def _binomial_path(x, a, lams, mix, opts):
    X = x[:, 1:]
    means, scale = _column_stats(X, opts.standardize)
    Z = _standardized(X, means, scale)
    abar = a.mean()
    b0 = float(np.log(abar / (1 - abar)))
    b = np.zeros(X.shape[1])
    icpts, coefs, sweeps, outers, conv = _kernels.logistic_path(
        Z, a, means, scale, np.asarray(lams, dtype=float), float(mix), opts.tol, opts.tol,
        opts.max_outer, opts.max_sweeps, opts.weight_floor, b0, b)
    out = []
    for k in range(len(lams)):
        # Z is centered, so the original intercept absorbs the column means.
        c0, beta = _to_original(icpts[k], coefs[k], means, scale)
        out.append((np.concatenate([[c0], beta]), int(sweeps[k]), bool(conv[k])))
    return out


def glm_path(x, y, family: str, lambdas, mix: float = 1.0,
             opts: SolverOptions | None = None, check_kkt: bool = True) -> list[GlmFit]:
    """Warm-started fits along a descending lambda sequence."""
    opts = opts or SolverOptions()
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}")
    x, y = _check_inputs(x, y)
    PenaltySpec(0.0, mix)
    lams = np.asarray(lambdas, dtype=float)
    if lams.ndim != 1 or lams.size == 0 or (lams < 0).any():
        raise ConfigError("lambdas must be a nonempty sequence of nonnegative values")
    if family == BINOMIAL:
        _check_binary(y)
        raw = _binomial_path(x, y, lams, mix, opts)
    else:
        raw = _gaussian_path(x, y, lams, mix, opts)
    fits = []
    for lam, (coef, sweeps, conv) in zip(lams, raw):
        fit = GlmFit(coef, float(lam), sweeps, conv, family, float(mix))
        if check_kkt:
            fit = GlmFit(coef, float(lam), sweeps, conv, family, float(mix),
                         kkt_violation(fit, x, y))
        fits.append(fit)
    return fits


def _single(x, y, family, penalty, opts):
    fit = glm_path(x, y, family, [penalty.lam], penalty.mix, opts)[0]
    if not fit.converged:
        warnings.warn(f"{family} solver did not converge at lambda={penalty.lam:g} "
                      f"(KKT residual {fit.kkt_violation:.3g})", ConvergenceWarning, stacklevel=3)
    return fit


def fit_lasso(x, y, penalty: PenaltySpec, opts: SolverOptions | None = None) -> GlmFit:
    return _single(x, y, GAUSSIAN, penalty, opts)


def fit_logistic_lasso(x, a, penalty: PenaltySpec, opts: SolverOptions | None = None) -> GlmFit:
    return _single(x, a, BINOMIAL, penalty, opts)


def lambda_max(x, y, family: str, mix: float = 1.0) -> float:
    """Smallest lambda at which every slope is zero."""
    x, y = _check_inputs(x, y)
    M = x.shape[0]
    centered = y - y.mean()
    scale = 2.0 if family == GAUSSIAN else 1.0
    lmax = scale * np.abs(x[:, 1:].T @ centered).max(initial=0.0) / M / mix
    return float(lmax) if lmax > 0 else LAMBDA_FLOOR


def lambda_grid(x, y, family: str, count: int = 100, ratio: float | None = None,
                mix: float = 1.0) -> np.ndarray:
    """Log-spaced descending grid from lambda_max down to ratio * lambda_max."""
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}")
    ratio = DEFAULT_RATIO[family] if ratio is None else ratio
    if count < 2 or not 0 < ratio < 1:
        raise ConfigError("grid needs count >= 2 and 0 < ratio < 1")
    top = lambda_max(x, y, family, mix)
    return top * ratio ** (np.arange(count) / (count - 1))


def heldout_loss(family, x, y, coefs):
    """Per-lambda summed held-out loss; ``coefs`` is (L, p)."""
    eta = x @ coefs.T
    if family == GAUSSIAN:
        return ((y[:, None] - eta) ** 2).sum(axis=0)
    return (np.logaddexp(0.0, eta) - y[:, None] * eta).sum(axis=0)


def cross_validate_lambda(x, y, family: str, grid, cv_folds: int = 10, seed: int = 0,
                          mix: float = 1.0, opts: SolverOptions | None = None):
    """K-fold CV over ``grid``; returns (lambda_star, mean held-out loss per lambda).

    The selected lambda minimizes the pooled held-out loss; ties go to the
    larger lambda. Folds whose training response is constant (binomial) are
    dropped with a warning.
    """
    x, y = _check_inputs(x, y)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ConfigError("lambda grid is empty")
    if cv_folds < 2:
        raise ConfigError("cv_folds must be at least 2")
    if grid.size == 1:
        return float(grid[0]), np.array([np.nan])
    plan = make_folds(x.shape[0], cv_folds, seed)
    total = np.zeros(grid.size)
    count = 0
    dropped = 0
    for k in range(cv_folds):
        tr, te = plan.complement(k), plan.fold(k)
        if family == BINOMIAL and y[tr].min() == y[tr].max():
            dropped += 1
            continue
        fits = glm_path(x[tr], y[tr], family, grid, mix, opts, check_kkt=False)
        coefs = np.array([f.coefficients for f in fits])
        total += heldout_loss(family, x[te], y[te], coefs)
        count += te.size
    if count == 0:
        raise DegenerateResponseError("every cross-validation fold has a degenerate response")
    if dropped:
        warnings.warn(f"dropped {dropped} of {cv_folds} CV folds with a degenerate response",
                      stacklevel=2)
    curve = total / count
    return float(grid[int(np.argmin(curve))]), curve


def predict_linear(fit: GlmFit, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != fit.coefficients.shape[0]:
        raise SchemaError(f"design has {x.shape[-1]} columns, fit has {fit.coefficients.shape[0]}")
    return x @ fit.coefficients


def predict_logistic(fit: GlmFit, x) -> np.ndarray:
    return expit(predict_linear(fit, x))
