"""Nuisance models for the two-stage doubly robust score.

For a path c = (c1, c2) the four nuisances are

* nu_c(S1, S2)  stage-2 outcome mean, fitted on observations following path c;
* mu_c(S1)      stage-1 outcome mean, fitted on arm A1 = c1 against the
                imputed response U'alpha_c (the stage-2 fit evaluated in-sample);
* pi(S1)        P(A1 = 1 | S1), fitted on all training observations;
* rho_c(S1, S2) P(A2 = 1 | S1, S2, A1 = c1), fitted on arm A1 = c1.

Subgroups are realized as row subsets rather than indicator-zeroed rows.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .data import CONTROL, TREATED, Dataset, subgroup_indices
from .errors import ConfigError, EstimationError
from .lasso import (BINOMIAL, GAUSSIAN, GlmFit, PenaltySpec, SolverOptions,
                    cross_validate_lambda, glm_path, lambda_grid, predict_linear,
                    predict_logistic)

PATHS = (TREATED, CONTROL)
MIN_SUBGROUP = 20


@dataclass(frozen=True)
class LambdaPolicy:
    """How a nuisance fit picks its penalty level.

    ``fixed`` bypasses cross-validation. Otherwise a ``n_lambda`` grid is
    searched by ``cv_folds``-fold CV on the fit's own training rows.
    """

    cv_folds: int = 10
    n_lambda: int = 100
    ratio: float | None = None
    fixed: float | None = None
    mix: float = 1.0
    opts: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        PenaltySpec(0.0 if self.fixed is None else self.fixed, self.mix)
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be at least 2")

    @property
    def min_rows(self) -> int:
        return max(MIN_SUBGROUP, 2 * self.cv_folds)


def fit_with_policy(x, y, family, policy: LambdaPolicy, seed: int = 0) -> tuple[GlmFit, dict]:
    """Fit one penalized GLM, choosing lambda per ``policy``; returns (fit, record)."""
    record = {"family": family, "rows": int(x.shape[0])}
    if policy.fixed is not None:
        fit = glm_path(x, y, family, [policy.fixed], policy.mix, policy.opts)[0]
        record["lambda"] = fit.lambda_used
        return fit, record
    grid = lambda_grid(x, y, family, policy.n_lambda, policy.ratio, policy.mix)
    lam, curve = cross_validate_lambda(x, y, family, grid, policy.cv_folds, seed,
                                       policy.mix, policy.opts)
    stop = int(np.searchsorted(-grid, -lam)) + 1
    fit = glm_path(x, y, family, grid[:stop], policy.mix, policy.opts)[-1]
    record.update({"lambda": lam, "lambda_max": float(grid[0]),
                   "cv_loss": float(np.nanmin(curve))})
    return fit, record


def _rows(ds, train, a1=None, a2=None):
    train = np.asarray(train)
    if a1 is None:
        return train
    return np.intersect1d(train, subgroup_indices(ds, a1, a2), assume_unique=True)


def _guard(rows, policy, what):
    if rows.size < policy.min_rows:
        raise EstimationError(f"{what} has {rows.size} training observations, "
                              f"need at least {policy.min_rows}")


def fit_stage2_outcome(ds: Dataset, train, path, policy: LambdaPolicy, seed: int = 0):
    """Lasso of Y on U over training rows that follow ``path`` exactly."""
    rows = _rows(ds, train, *path)
    _guard(rows, policy, f"path {tuple(path)}")
    return fit_with_policy(ds.design.u[rows], ds.y[rows], GAUSSIAN, policy, seed)


def imputed_response(ds: Dataset, rows, alpha_fit: GlmFit) -> np.ndarray:
    return predict_linear(alpha_fit, ds.design.u[rows])


def fit_stage1_outcome_imputed(ds: Dataset, train, arm: int, alpha_fit: GlmFit,
                               policy: LambdaPolicy, seed: int = 0):
    """Lasso of the imputed response U'alpha_hat on V over training rows with A1 = arm."""
    rows = _rows(ds, train, arm)
    _guard(rows, policy, f"arm A1={arm}")
    return fit_with_policy(ds.design.v[rows], imputed_response(ds, rows, alpha_fit),
                           GAUSSIAN, policy, seed)


def fit_stage1_propensity(ds: Dataset, train, policy: LambdaPolicy, seed: int = 0):
    """Logistic Lasso of A1 on V over all training rows."""
    rows = _rows(ds, train)
    return fit_with_policy(ds.design.v[rows], ds.a1[rows].astype(float), BINOMIAL, policy, seed)


def fit_stage2_propensity(ds: Dataset, train, arm: int, policy: LambdaPolicy, seed: int = 0):
    """Logistic Lasso of A2 on U over training rows with A1 = arm."""
    rows = _rows(ds, train, arm)
    _guard(rows, policy, f"arm A1={arm}")
    return fit_with_policy(ds.design.u[rows], ds.a2[rows].astype(float), BINOMIAL, policy, seed)


@dataclass(frozen=True, eq=False)
class NuisanceFits:
    alpha: dict  # path -> GlmFit on U
    beta: dict   # arm -> GlmFit on V
    gamma: GlmFit
    delta: dict  # arm -> GlmFit on U
    tuning: dict

    def all_fits(self) -> list[GlmFit]:
        return [*self.alpha.values(), *self.beta.values(), self.gamma, *self.delta.values()]


class NuisanceValues(NamedTuple):
    """Nuisance evaluations for one observation and one path."""

    nu: float
    mu: float
    pi: float
    rho: float


@dataclass(frozen=True, eq=False)
class NuisancePredictions:
    """Nuisance evaluations on a set of rows.

    ``pi`` is P(A1 = 1); ``rho[c]`` is P(A2 = 1 | A1 = c1) for path c.
    """

    index: np.ndarray
    nu: dict
    mu: dict
    pi: np.ndarray
    rho: dict
    clip_eps: float = 0.0

    def entry(self, pos: int, path) -> NuisanceValues:
        path = tuple(path)
        return NuisanceValues(float(self.nu[path][pos]), float(self.mu[path][pos]),
                              float(self.pi[pos]), float(self.rho[path][pos]))


def _check_clip(clip_eps):
    if not 0 < clip_eps < 0.5:
        raise ConfigError(f"clip_eps must lie in (0, 0.5), got {clip_eps}")


def clip_probability(p, clip_eps):
    return np.clip(p, clip_eps, 1.0 - clip_eps)


def predict_nuisances(fits: NuisanceFits, ds: Dataset, evaluate, clip_eps: float = 0.01
                      ) -> NuisancePredictions:
    _check_clip(clip_eps)
    idx = np.asarray(evaluate)
    u = ds.design.u[idx]
    v = ds.design.v[idx]
    nu, mu, rho = {}, {}, {}
    for path in PATHS:
        nu[path] = predict_linear(fits.alpha[path], u)
        mu[path] = predict_linear(fits.beta[path[0]], v)
        rho[path] = clip_probability(predict_logistic(fits.delta[path[0]], u), clip_eps)
    pi = clip_probability(predict_logistic(fits.gamma, v), clip_eps)
    return NuisancePredictions(idx, nu, mu, pi, rho, clip_eps)


class NuisanceProvider(ABC):
    """Source of nuisance evaluations for the doubly robust score.

    ``cross_fit`` may learn from rows ``train`` only and must return
    evaluations on rows ``evaluate`` with probabilities strictly inside (0, 1).
    The second return value carries the fitted models (or None).
    """

    requires_fitting = True

    @abstractmethod
    def cross_fit(self, ds: Dataset, train, evaluate, seed: int = 0):
        ...


def fit_nuisances(ds: Dataset, train, policy: LambdaPolicy, seed: int = 0,
                  propensity_policy: LambdaPolicy | None = None) -> NuisanceFits:
    """All seven fits on ``train``: two alpha, two beta, gamma and two delta."""
    ppolicy = propensity_policy or policy
    alpha, beta, delta, tuning = {}, {}, {}, {}
    for k, path in enumerate(PATHS):
        arm = path[0]
        alpha[path], tuning[f"alpha{path}"] = fit_stage2_outcome(ds, train, path, policy, seed + 10 * k + 1)
        beta[arm], tuning[f"beta[{arm}]"] = fit_stage1_outcome_imputed(
            ds, train, arm, alpha[path], policy, seed + 10 * k + 2)
        delta[arm], tuning[f"delta[{arm}]"] = fit_stage2_propensity(ds, train, arm, ppolicy, seed + 10 * k + 3)
    gamma, tuning["gamma"] = fit_stage1_propensity(ds, train, ppolicy, seed + 7)
    return NuisanceFits(alpha, beta, gamma, delta, tuning)


@dataclass
class LassoProvider(NuisanceProvider):
    """Lasso / logistic-Lasso nuisances with per-fit cross-validated lambda."""

    policy: LambdaPolicy = field(default_factory=LambdaPolicy)
    clip_eps: float = 0.01
    propensity_policy: LambdaPolicy | None = None

    def __post_init__(self):
        _check_clip(self.clip_eps)

    def cross_fit(self, ds, train, evaluate, seed=0):
        fits = fit_nuisances(ds, train, self.policy, seed, self.propensity_policy)
        return predict_nuisances(fits, ds, evaluate, self.clip_eps), fits


@dataclass
class ZeroOutcomeProvider(NuisanceProvider):
    """Wraps a provider and forces both outcome nuisances to zero.

    With nu = mu = 0 the doubly robust score reduces to inverse probability
    weighting.
    """

    inner: NuisanceProvider

    @property
    def requires_fitting(self):
        return self.inner.requires_fitting

    def cross_fit(self, ds, train, evaluate, seed=0):
        pred, fits = self.inner.cross_fit(ds, train, evaluate, seed)
        zeros = {path: np.zeros_like(pred.nu[path]) for path in PATHS}
        return NuisancePredictions(pred.index, zeros, dict(zeros), pred.pi, pred.rho,
                                   pred.clip_eps), fits


@dataclass
class FixedProvider(NuisanceProvider):
    """Serves precomputed full-sample nuisance arrays (for injected nuisances)."""

    nu: dict
    mu: dict
    pi: np.ndarray
    rho: dict
    requires_fitting = False

    def cross_fit(self, ds, train, evaluate, seed=0):
        idx = np.asarray(evaluate)
        pick = lambda d: {tuple(k): np.asarray(v, dtype=float)[idx] for k, v in d.items()}
        return NuisancePredictions(idx, pick(self.nu), pick(self.mu),
                                   np.asarray(self.pi, dtype=float)[idx], pick(self.rho)), None
