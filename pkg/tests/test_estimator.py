import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dyndr.data import CONTROL, TREATED, Dataset, Observation
from dyndr.errors import ConfigError, EstimationError
from dyndr.estimator import (DrConfig, aggregation_residual, confidence_interval,
                             contrast_scores, dr_score, estimate_dynamic_ate, estimate_empdiff,
                             estimate_ipw, estimate_wipw, normal_quantile, path_score)
from dyndr.nuisance import FixedProvider, LambdaPolicy, LassoProvider, NuisanceValues
from dyndr.simulation import DgpSpec, OracleProvider, generate


def _obs(y, a1, a2):
    return Observation(y, a1, a2, np.zeros(1), np.zeros(1))


def _randomized(n, seed):
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=n) + 1, rng.integers(0, 2, n), rng.integers(0, 2, n),
                   rng.normal(size=(n, 2)), rng.normal(size=(n, 2)))


def _constant_provider(n, nu=0.0, mu=0.0, pi=0.5, rho=0.5):
    full = lambda v: np.full(n, float(v))
    return FixedProvider({c: full(nu) for c in (TREATED, CONTROL)},
                         {c: full(mu) for c in (TREATED, CONTROL)}, full(pi),
                         {c: full(rho) for c in (TREATED, CONTROL)})


# --- scores ------------------------------------------------------------------

def test_score_treated_path_substitution():
    assert dr_score(_obs(3.0, 1, 1), NuisanceValues(2.0, 1.0, 0.5, 0.5), TREATED) == 7.0


def test_score_off_arm_is_mu():
    for y, a2, nu, rho in [(100.0, 1, -5.0, 0.3), (-4.0, 0, 9.0, 0.9)]:
        assert dr_score(_obs(y, 0, a2), NuisanceValues(nu, 1.25, 0.4, rho), TREATED) == 1.25


def test_score_control_path_orientation():
    assert dr_score(_obs(2.0, 0, 0), NuisanceValues(0.0, 0.0, 0.5, 0.5), CONTROL) == 8.0


@settings(max_examples=200)
@given(st.floats(-10, 10), st.integers(0, 1), st.integers(0, 1), st.floats(-10, 10),
       st.floats(-10, 10), st.floats(0.01, 0.99), st.floats(0.01, 0.99),
       st.sampled_from([TREATED, CONTROL]))
def test_score_matches_expanded_form(y, a1, a2, nu, mu, pi, rho, path):
    c1, c2 = path
    p1 = pi if c1 == 1 else 1 - pi
    p2 = rho if c2 == 1 else 1 - rho
    on_arm = float(a1 == c1)
    on_path = on_arm * float(a2 == c2)
    expanded = mu + on_arm * nu / p1 - on_arm * mu / p1 + on_path * y / (p1 * p2) \
        - on_path * nu / (p1 * p2)
    got = path_score(y, a1, a2, nu, mu, pi, rho, path)
    assert got == pytest.approx(expanded, rel=1e-12, abs=1e-12 * (1 + abs(expanded)))


# --- confidence interval ------------------------------------------------------

def test_confidence_interval_examples():
    lo, hi = confidence_interval(0.0, 1.0, 100, 0.95)
    assert lo == pytest.approx(-0.196, abs=1e-4) and hi == pytest.approx(0.196, abs=1e-4)
    assert confidence_interval(1.5, 0.0, 10) == (1.5, 1.5)
    wide = confidence_interval(0.0, 1.0, 50, 0.99)
    narrow = confidence_interval(0.0, 1.0, 50, 0.95)
    assert wide[0] < narrow[0] and wide[1] > narrow[1]


def test_normal_quantile():
    assert normal_quantile(0.95) == pytest.approx(1.959963984540054, abs=1e-12)
    assert normal_quantile(0.5) == pytest.approx(0.6744897501960817, abs=1e-12)
    for bad in (0.0, 1.0, 1.5, -0.1):
        with pytest.raises(ConfigError):
            normal_quantile(bad)


# --- cross-fitted estimator with injected nuisances ---------------------------

def test_constant_nuisances_collapse_to_weighted_means():
    ds = _randomized(40, 1)
    est = estimate_dynamic_ate(ds, DrConfig(k_folds=2, seed=3, provider=_constant_provider(40)))
    a1, a2, y = ds.a1, ds.a2, ds.y
    direct = np.mean(4 * a1 * a2 * y - 4 * (1 - a1) * (1 - a2) * y)
    assert est.theta_hat == pytest.approx(direct, abs=1e-12)


def test_aggregation_identities():
    ds = _randomized(37, 2)
    rng = np.random.default_rng(0)
    prov = FixedProvider({c: rng.normal(size=37) for c in (TREATED, CONTROL)},
                         {c: rng.normal(size=37) for c in (TREATED, CONTROL)},
                         rng.uniform(0.2, 0.8, 37),
                         {c: rng.uniform(0.2, 0.8, 37) for c in (TREATED, CONTROL)})
    est = estimate_dynamic_ate(ds, DrConfig(k_folds=4, seed=1, provider=prov))
    assert abs(est.theta_hat - est.per_fold.mean()) <= 1e-12
    assert abs(est.sigma_hat2 - np.mean((est.scores - est.theta_hat) ** 2)) <= 1e-12
    assert est.std_error == pytest.approx(np.sqrt(est.sigma_hat2 / 37), rel=1e-14)
    assert est.ci[1] - est.theta_hat == pytest.approx(est.theta_hat - est.ci[0], abs=1e-12)
    assert aggregation_residual(est) <= 1e-12
    assert est.diagnostics["identity_residual"] <= 1e-12
    assert sorted(est.diagnostics["fold_sizes"]) == [9, 9, 9, 10]


def test_mu_shift_cancels_when_propensities_exact():
    # Under complete randomization with known pi = rho = 0.5, adding the same constant to mu
    # for both paths leaves the contrast unchanged only in expectation; on a fixed instance
    # the change equals the constant times the mean of (1 - tau) for each path.
    ds = _randomized(60, 3)
    base = estimate_dynamic_ate(ds, DrConfig(k_folds=3, provider=_constant_provider(60)))
    shifted = estimate_dynamic_ate(ds, DrConfig(k_folds=3, provider=_constant_provider(60, mu=2.5)))
    tau1 = np.where(ds.a1 == 1, 2.0, 0.0)
    tau0 = np.where(ds.a1 == 0, 2.0, 0.0)
    expected = 2.5 * np.mean((1 - tau1) - (1 - tau0))
    assert shifted.theta_hat - base.theta_hat == pytest.approx(expected, abs=1e-12)


def test_mu_shift_cancels_with_balanced_arms():
    # When exactly half the sample sits in each first-stage arm and pi = 0.5, the shift cancels.
    n = 40
    rng = np.random.default_rng(4)
    a1 = np.repeat([0, 1], n // 2)
    ds = Dataset(rng.normal(size=n), a1, rng.integers(0, 2, n), rng.normal(size=(n, 1)),
                 rng.normal(size=(n, 1)))
    base = estimate_dynamic_ate(ds, DrConfig(k_folds=2, provider=_constant_provider(n)))
    shifted = estimate_dynamic_ate(ds, DrConfig(k_folds=2, provider=_constant_provider(n, mu=3.0)))
    assert shifted.theta_hat == pytest.approx(base.theta_hat, abs=1e-12)


def test_contrast_scores_and_determinism():
    ds, truth = generate(DgpSpec("M2", 300, 20, 10, seed=5), theta=(0.0, 0.0, 0))
    cfg = DrConfig(k_folds=3, seed=11, provider=OracleProvider(truth))
    a = estimate_dynamic_ate(ds, cfg)
    b = estimate_dynamic_ate(ds, cfg)
    assert a.scores.tobytes() == b.scores.tobytes()
    pred, _ = OracleProvider(truth).cross_fit(ds, None, np.arange(ds.n))
    np.testing.assert_array_equal(contrast_scores(ds, pred), a.scores)


def test_lasso_estimator_is_deterministic():
    ds, _ = generate(DgpSpec("M2", 400, 10, 5, seed=6), theta=(0.0, 0.0, 0))
    cfg = DrConfig(k_folds=2, seed=7)
    a = estimate_dynamic_ate(ds, cfg)
    b = estimate_dynamic_ate(ds, cfg)
    assert a.theta_hat == b.theta_hat and a.scores.tobytes() == b.scores.tobytes()
    assert a.diagnostics["fits"] == 14 and a.diagnostics["nonconverged"] == 0
    assert a.diagnostics["kkt_max"] <= 1e-6
    assert len(a.tuning) == 2


def test_guard_failure_names_fold():
    ds = _randomized(50, 5)
    with pytest.raises(EstimationError, match=r"^fold 0: path"):
        estimate_dynamic_ate(ds, DrConfig(k_folds=2))


def test_config_validation():
    with pytest.raises(ConfigError):
        DrConfig(k_folds=1)
    with pytest.raises(ConfigError):
        DrConfig(level=1.0)
    with pytest.raises(ConfigError):
        DrConfig(clip_eps=0.5)
    assert isinstance(DrConfig().make_provider(), LassoProvider)
    assert DrConfig(penalty_mix=0.7).make_provider().policy.mix == 0.7


def test_report_dict():
    ds = _randomized(20, 6)
    est = estimate_dynamic_ate(ds, DrConfig(k_folds=2, provider=_constant_provider(20)))
    d = est.to_dict()
    assert d["theta_hat"] == est.theta_hat and d["ci"] == list(est.ci)
    assert len(d["per_fold"]) == 2


# --- comparison estimators ----------------------------------------------------

def test_empdiff():
    ds = Dataset([2.0, 2.0, 1.0], [1, 1, 0], [1, 1, 0], np.zeros((3, 1)), np.zeros((3, 1)))
    est = estimate_empdiff(ds)
    assert est.theta_hat == 1.0 and est.method == "empdiff"
    assert est.counts == {"treated": 2, "control": 1}
    no_control = Dataset([2.0, 1.0], [1, 1], [1, 0], np.zeros((2, 1)), np.zeros((2, 1)))
    with pytest.raises(EstimationError):
        estimate_empdiff(no_control)


def test_ipw_single_point():
    ds = Dataset([2.0], [1], [1], np.zeros((1, 1)), np.zeros((1, 1)))
    prov = _constant_provider(1)
    assert estimate_ipw(ds, prov).theta_hat == 8.0
    with pytest.raises(EstimationError):
        estimate_wipw(ds, prov)  # no control weight
    two = Dataset([2.0, 0.5], [1, 0], [1, 0], np.zeros((2, 1)), np.zeros((2, 1)))
    assert estimate_wipw(two, _constant_provider(2)).theta_hat == 1.5


def test_wipw_with_constant_weights_is_mean_difference():
    ds = _randomized(80, 7)
    est = estimate_wipw(ds, _constant_provider(80, pi=0.3, rho=0.6))
    assert est.theta_hat == pytest.approx(estimate_empdiff(ds).theta_hat, abs=1e-12)
