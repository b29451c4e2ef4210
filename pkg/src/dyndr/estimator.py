"""Cross-fitted doubly robust estimation of the dynamic treatment effect.

For a path c = (c1, c2) the per-observation score is

    psi_c = mu_c + tau_c * (nu_c - mu_c) + omega_c * (Y - nu_c)

with tau_c = 1{A1 = c1} / P(A1 = c1 | S1) and
omega_c = 1{A1 = c1, A2 = c2} / (P(A1 = c1 | S1) * P(A2 = c2 | S1, S2, A1 = c1)).
The effect of (1, 1) against (0, 0) is the mean of psi_(1,1) - psi_(0,0),
cross-fitted over K folds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .data import CONTROL, TREATED, Dataset, Observation, make_folds, subgroup_indices
from .errors import ConfigError, EstimationError
from .nuisance import (LambdaPolicy, LassoProvider, NuisancePredictions, NuisanceProvider,
                       NuisanceValues)


def _arm_probability(p, value):
    return p if value == 1 else 1.0 - p


def path_score(y, a1, a2, nu, mu, pi, rho, path):
    """Vectorized score psi_c; ``pi`` and ``rho`` are P(A1=1) and P(A2=1 | A1=c1)."""
    c1, c2 = path
    p1 = _arm_probability(pi, c1)
    p2 = _arm_probability(rho, c2)
    on_arm = a1 == c1
    on_path = on_arm & (a2 == c2)
    tau = np.where(on_arm, 1.0 / p1, 0.0)
    omega = np.where(on_path, 1.0 / (p1 * p2), 0.0)
    return mu + tau * (nu - mu) + omega * (y - nu)


def dr_score(obs: Observation, pred: NuisanceValues, path) -> float:
    return float(path_score(obs.y, obs.a1, obs.a2, pred.nu, pred.mu, pred.pi, pred.rho,
                            tuple(path)))


def contrast_scores(ds: Dataset, pred: NuisancePredictions) -> np.ndarray:
    """psi_(1,1) - psi_(0,0) on the rows of ``pred``."""
    idx = pred.index
    y, a1, a2 = ds.y[idx], ds.a1[idx], ds.a2[idx]
    out = []
    for path in (TREATED, CONTROL):
        out.append(path_score(y, a1, a2, pred.nu[path], pred.mu[path], pred.pi,
                              pred.rho[path], path))
    return out[0] - out[1]


def normal_quantile(level: float) -> float:
    """Two-sided standard-normal critical value for a ``level`` interval."""
    if not 0 < level < 1:
        raise ConfigError(f"confidence level must lie in (0, 1), got {level}")
    return float(ndtri(0.5 + level / 2.0))


def confidence_interval(theta: float, sigma_hat: float, n: int, level: float = 0.95):
    half = normal_quantile(level) * sigma_hat / np.sqrt(n)
    return (theta - half, theta + half)


@dataclass
class DrConfig:
    k_folds: int = 5
    seed: int = 42
    clip_eps: float = 0.01
    level: float = 0.95
    penalty_mix: float = 1.0
    cv_folds: int = 10
    provider: NuisanceProvider | None = None

    def __post_init__(self):
        if self.k_folds < 2:
            raise ConfigError("k_folds must be at least 2")
        normal_quantile(self.level)
        if not 0 < self.clip_eps < 0.5:
            raise ConfigError("clip_eps must lie in (0, 0.5)")

    def make_provider(self) -> NuisanceProvider:
        if self.provider is not None:
            return self.provider
        policy = LambdaPolicy(cv_folds=self.cv_folds, mix=self.penalty_mix)
        return LassoProvider(policy, self.clip_eps)


@dataclass(frozen=True, eq=False)
class DrEstimate:
    theta_hat: float
    per_fold: np.ndarray
    sigma_hat2: float
    std_error: float
    ci: tuple
    n: int
    k_folds: int
    level: float
    scores: np.ndarray
    folds: np.ndarray
    tuning: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat,
            "std_error": self.std_error,
            "sigma_hat2": self.sigma_hat2,
            "ci": list(self.ci),
            "level": self.level,
            "n": self.n,
            "k_folds": self.k_folds,
            "per_fold": self.per_fold.tolist(),
            "tuning": self.tuning,
            "diagnostics": self.diagnostics,
        }


def _kkt_summary(fits_by_fold):
    worst, count, nonconv = 0.0, 0, 0
    for fits in fits_by_fold:
        if fits is None:
            continue
        for fit in fits.all_fits():
            count += 1
            if not fit.converged:
                nonconv += 1
                continue
            worst = max(worst, fit.kkt_violation)
    return {"fits": count, "nonconverged": nonconv, "kkt_max": worst}


def estimate_dynamic_ate(ds: Dataset, cfg: DrConfig | None = None) -> DrEstimate:
    """Cross-fitted doubly robust estimate of E[Y(1,1)] - E[Y(0,0)]."""
    cfg = cfg or DrConfig()
    provider = cfg.make_provider()
    plan = make_folds(ds.n, cfg.k_folds, cfg.seed)
    scores = np.empty(ds.n)
    per_fold = np.empty(cfg.k_folds)
    tuning, all_fits = [], []
    for k in range(cfg.k_folds):
        test, train = plan.fold(k), plan.complement(k)
        try:
            pred, fits = provider.cross_fit(ds, train, test, seed=cfg.seed * 1000 + 100 * k)
        except EstimationError as exc:
            raise type(exc)(f"fold {k}: {exc}") from exc
        psi = contrast_scores(ds, pred)
        scores[test] = psi
        per_fold[k] = psi.mean()
        all_fits.append(fits)
        if fits is not None:
            tuning.append({"fold": k, **fits.tuning})
    theta = float(per_fold.mean())
    sigma2 = float(np.mean((scores - theta) ** 2))
    se = float(np.sqrt(sigma2 / ds.n))
    ci = confidence_interval(theta, np.sqrt(sigma2), ds.n, cfg.level)
    diagnostics = _kkt_summary(all_fits)
    diagnostics["fold_sizes"] = plan.sizes().tolist()
    est = DrEstimate(theta, per_fold, sigma2, se, ci, ds.n, cfg.k_folds, cfg.level,
                     scores, plan.assignment, tuning, diagnostics)
    diagnostics["identity_residual"] = aggregation_residual(est)
    return est


def aggregation_residual(est: DrEstimate) -> float:
    """Largest deviation from the aggregation identities, recomputed from scores.

    theta_hat is the mean of the per-fold score means, sigma_hat2 the mean
    squared deviation of all scores from theta_hat, and the standard error
    sqrt(sigma_hat2 / N).
    """
    fold_means = np.array([est.scores[est.folds == k].mean() for k in range(est.k_folds)])
    theta = fold_means.mean()
    sigma2 = np.mean((est.scores - theta) ** 2)
    return float(max(abs(est.theta_hat - theta),
                     np.max(np.abs(est.per_fold - fold_means)),
                     abs(est.sigma_hat2 - sigma2),
                     abs(est.std_error - np.sqrt(sigma2 / est.n))))


@dataclass(frozen=True)
class SimpleEstimate:
    theta_hat: float
    method: str
    counts: dict
    std_error: float = float("nan")


def estimate_empdiff(ds: Dataset) -> SimpleEstimate:
    """Difference of mean outcomes on path (1,1) and path (0,0)."""
    treated = subgroup_indices(ds, *TREATED)
    control = subgroup_indices(ds, *CONTROL)
    if treated.size == 0 or control.size == 0:
        raise EstimationError("empirical difference needs observations on both paths")
    y1, y0 = ds.y[treated], ds.y[control]
    var = 0.0
    if treated.size > 1:
        var += y1.var(ddof=1) / treated.size
    if control.size > 1:
        var += y0.var(ddof=1) / control.size
    return SimpleEstimate(float(y1.mean() - y0.mean()), "empdiff",
                          {"treated": int(treated.size), "control": int(control.size)},
                          float(np.sqrt(var)))


def _ipw_weights(ds, provider, seed):
    everyone = np.arange(ds.n)
    pred, _ = provider.cross_fit(ds, everyone, everyone, seed=seed)
    weights = []
    for path in (TREATED, CONTROL):
        c1, c2 = path
        on_path = (ds.a1 == c1) & (ds.a2 == c2)
        p = _arm_probability(pred.pi, c1) * _arm_probability(pred.rho[path], c2)
        weights.append(np.where(on_path, 1.0 / p, 0.0))
    return weights


def estimate_ipw(ds: Dataset, provider: NuisanceProvider, seed: int = 0) -> SimpleEstimate:
    w1, w0 = _ipw_weights(ds, provider, seed)
    terms = (w1 - w0) * ds.y
    counts = {"treated": int((w1 > 0).sum()), "control": int((w0 > 0).sum())}
    return SimpleEstimate(float(terms.mean()), "ipw", counts,
                          float(terms.std() / np.sqrt(ds.n)))


def estimate_wipw(ds: Dataset, provider: NuisanceProvider, seed: int = 0) -> SimpleEstimate:
    """Weight-normalized IPW; the standard error is the linearized (Hajek) one."""
    w1, w0 = _ipw_weights(ds, provider, seed)
    s1, s0 = w1.sum(), w0.sum()
    if s1 <= 0 or s0 <= 0:
        raise EstimationError("weighted IPW needs a positive weight sum on both paths")
    m1, m0 = (w1 * ds.y).sum() / s1, (w0 * ds.y).sum() / s0
    infl = w1 * (ds.y - m1) / w1.mean() - w0 * (ds.y - m0) / w0.mean()
    counts = {"treated": int((w1 > 0).sum()), "control": int((w0 > 0).sum())}
    return SimpleEstimate(float(m1 - m0), "wipw", counts,
                          float(infl.std() / np.sqrt(ds.n)))
