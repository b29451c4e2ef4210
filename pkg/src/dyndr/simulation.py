"""Data-generating processes M1-M10, oracle nuisances and Monte Carlo harness.

Every DGP draws, per call and in this order (numpy PCG64 via SeedSequence):

    1. S1           (n, d1)  N(0, 1), or Uniform(-1, 1) for M5
    2. delta1       (n,)     N(0, 1)
    3. noise        (n, q)   N(0, 1), or Uniform(-1, 1) for M5; q = d2
    4. u_a1         (n,)     Uniform(0, 1), A1 = 1{u_a1 < pi(S1)}
    5. u_bin        (n, 2)   Uniform(0, 1), binary S2 features of M8
    6. u_a2         (n,)     Uniform(0, 1), A2 = 1{u_a2 < rho(S1, S2)}
    7. zeta         (n,)     N(0, 1)

Blocks 4-6 are drawn even when a model does not use them so that the stream
layout is the same for every model. Stage-2 covariates are built for both
first-stage arms from the same noise; the observed S2 is the one of the
realized arm, and potential outcomes Y(c) = nu_c(S1, S2(c1)) + zeta share
zeta across paths. The observed outcome is
Y = A1 A2 Y(1,1) + (1 - A1)(1 - A2) Y(0,0).
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .data import CONTROL, TREATED, Dataset
from .errors import ConfigError, DyndrError, EstimationError
from .estimator import (DrConfig, estimate_dynamic_ate, estimate_empdiff, estimate_ipw,
                        estimate_wipw, normal_quantile)
from .nuisance import NuisancePredictions, NuisanceProvider, PATHS, ZeroOutcomeProvider

MODELS = tuple(f"M{i}" for i in range(1, 11))
PRNG_NAME = "numpy.random.PCG64 seeded by SeedSequence"
TRUTH_DRAWS = 1_000_000
TRUTH_MAX_SE = 0.005
TRUTH_SEED = 20_240_517
MAD_SCALE = 1.4826


def g_tilde(u):
    """Non-logistic link (|u + 1| + 0.1) / (|u + 1| + 1)."""
    t = np.abs(u + 1.0)
    return (t + 0.1) / (t + 1.0)


@dataclass(frozen=True)
class DgpSpec:
    model: str
    n: int
    d1: int = 100
    d2: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {', '.join(MODELS)}")
        if self.d2 is None:
            object.__setattr__(self, "d2", self.d1 if self.model in ("M1", "M10") else self.d1 // 2)
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if self.model in ("M1", "M10") and self.d2 != self.d1:
            raise ConfigError(f"{self.model} requires d2 == d1")
        need = 20 if self.model in ("M5", "M10") else 3
        if self.d1 < need or self.d2 < need:
            raise ConfigError(f"{self.model} requires d1, d2 >= {need}")

    def replace(self, **kw) -> "DgpSpec":
        return DgpSpec(**{**asdict(self), **kw})


def _band(d2, d1, base, width=None):
    i = np.arange(d2)[:, None]
    j = np.arange(d1)[None, :]
    gap = np.abs(i - j)
    out = base ** gap.astype(float)
    if width is not None:
        out = np.where(gap <= width, out, 0.0)
    return out


@dataclass(frozen=True, eq=False)
class Params:
    d1: int
    d2: int
    alpha: dict   # path -> (d+1,)
    gamma: np.ndarray
    eta: dict     # arm -> (d+1,)
    ws: dict      # arm -> (d2, d1)
    wd: dict
    wtd: dict

    def alpha1(self, path):
        return self.alpha[path][: self.d1 + 1]

    def alpha2(self, path):
        return self.alpha[path][self.d1 + 1:]


@lru_cache(maxsize=32)
def parameters(model: str, d1: int, d2: int) -> Params:
    def vec(head, size):
        out = np.zeros(size)
        out[: len(head)] = head
        return out

    if model == "M5":
        a3 = np.full(3, 1 / np.sqrt(3))
        a20 = np.full(20, 1 / np.sqrt(20))
        alpha = {TREATED: np.concatenate([[-1.0], vec(a3, d1), vec(a20, d2)]),
                 CONTROL: np.concatenate([[1.0], vec(-a3, d1), vec(a20, d2)])}
        gamma = np.concatenate([[0.0], vec(a20, d1)])
        eta1 = np.concatenate([[0.0], vec(a3, d1), vec(a3, d2)])
        eta = {1: eta1, 0: -eta1}
    else:
        alpha = {TREATED: np.concatenate([vec([-1, -1, 1, -1], d1 + 1), vec([-1, -1, 1], d2)]),
                 CONTROL: np.concatenate([vec([1, 1, 1, -1], d1 + 1), vec([1, 1, 1], d2)])}
        gamma = vec([0, 1, 1, 1], d1 + 1)
        eta = {1: np.concatenate([vec([0, 1, 1], d1 + 1), vec([1, -1], d2)]),
               0: np.concatenate([vec([0, 0.5, 0, -0.5], d1 + 1), vec([0.5, 0, 0.5], d2)])}
    ws = {1: _band(d2, d1, 0.8, 1), 0: _band(d2, d1, 0.7, 2)}
    wd = {1: _band(d2, d1, 0.8), 0: _band(d2, d1, 0.7)}
    keep = (np.arange(d1) >= 3).astype(float)[None, :]
    wtd = {arm: wd[arm] * keep for arm in (0, 1)}
    for arr in (*alpha.values(), gamma, *eta.values(), *ws.values(), *wd.values(), *wtd.values()):
        arr.flags.writeable = False
    return Params(d1, d2, alpha, gamma, eta, ws, wd, wtd)


def _v(s1):
    return np.hstack([np.ones((s1.shape[0], 1)), s1])


def _u(s1, s2):
    return np.hstack([np.ones((s1.shape[0], 1)), s1, s2])


class DgpOracle:
    """Closed-form nuisance functions of one DGP."""

    available = ("nu", "mu", "pi", "rho")

    def __init__(self, model: str, d1: int, d2: int):
        self.model = model
        self.p = parameters(model, d1, d2)

    def pi(self, s1):
        lin = _v(s1) @ self.p.gamma
        return g_tilde(lin) if self.model in ("M6", "M10") else expit(lin)

    def rho(self, path, s1, s2):
        """P(A2 = 1 | S1, S2, A1 = c1)."""
        lin = _u(s1, s2) @ self.p.eta[path[0]]
        return g_tilde(lin) if self.model in ("M6", "M9") else expit(lin)

    def nu(self, path, s1, s2):
        p, m = self.p, self.model
        a1, a2 = p.alpha1(path), p.alpha2(path)
        if m == "M8":
            return a1[0] + (2 * s2[:, 0] - 1) * (s1 @ a1[1:]) + s2 @ a2
        if m == "M10":
            return _v(s1) @ a1 + (np.sign(s2) * s2 ** 2) @ a2
        out = _u(s1, s2) @ p.alpha[path]
        if m == "M7":
            out = out + 0.5 * (s1 @ a1[1:]) ** 2
        return out

    def mu(self, path, s1):
        p, m = self.p, self.model
        c1 = path[0]
        a1, a2 = p.alpha1(path), p.alpha2(path)
        base = _v(s1) @ a1
        if m in ("M1", "M10"):
            return base + (s1[:, : p.d2] + c1) @ a2
        if m == "M5":
            return base + a2[0] * (3.0 if c1 else -2.0) * s1[:, 0]
        if m == "M8":
            lin = s1 @ p.ws[c1].T + c1
            prob = expit(lin[:, :2])
            return (a1[0] + (2 * prob[:, 0] - 1) * (s1 @ a1[1:])
                    + prob @ a2[:2] + lin[:, 2:] @ a2[2:])
        w = p.wd[c1] if m in ("M3", "M4") else p.ws[c1]
        mean_s2 = s1 @ w.T + c1
        if m == "M4":
            mean_s2 = mean_s2 + 0.5 * (s1 ** 2 - 1) @ p.wtd[c1].T
        if m == "M9":
            mean_s2 = mean_s2 + 0.5 * (s1 ** 2 - 1) @ p.ws[c1].T
        out = base + mean_s2 @ a2
        if m == "M7":
            out = out + 0.5 * (s1 @ a1[1:]) ** 2
        return out


def _stage2(model, p: Params, s1, arm, delta1, noise, u_bin):
    """S2 under first-stage arm ``arm`` for every row."""
    if model == "M5":
        s2 = noise.copy()
        s2[:, 0] += (3.0 if arm else -2.0) * s1[:, 0]
        return s2
    shift = arm * (1.0 + delta1)[:, None]
    if model == "M1":
        return s1 + shift + noise
    if model == "M10":
        w2 = s1 + shift + noise
        return np.sign(w2) * np.sqrt(np.abs(w2))
    if model == "M8":
        w2 = s1 @ p.ws[arm].T + arm
        s2 = w2 + arm * delta1[:, None] + noise
        s2[:, :2] = (u_bin < expit(w2[:, :2])).astype(float)
        return s2
    w = p.wd[arm] if model in ("M3", "M4") else p.ws[arm]
    s2 = s1 @ w.T + shift + noise
    if model == "M4":
        s2 += 0.5 * (s1 ** 2 - 1) @ p.wtd[arm].T
    if model == "M9":
        s2 += 0.5 * (s1 ** 2 - 1) @ p.ws[arm].T
    return s2


def draw_units(model: str, d1: int, d2: int, n: int, rng: np.random.Generator) -> dict:
    """One batch of units with every random component and both S2 counterfactuals."""
    p = parameters(model, d1, d2)
    uniform = model == "M5"
    s1 = rng.uniform(-1, 1, (n, d1)) if uniform else rng.standard_normal((n, d1))
    delta1 = rng.standard_normal(n)
    noise = rng.uniform(-1, 1, (n, d2)) if uniform else rng.standard_normal((n, d2))
    u_a1 = rng.random(n)
    u_bin = rng.random((n, 2))
    u_a2 = rng.random(n)
    zeta = rng.standard_normal(n)
    s2_arm = {arm: _stage2(model, p, s1, arm, delta1, noise, u_bin) for arm in (0, 1)}
    return {"s1": s1, "delta1": delta1, "noise": noise, "u_a1": u_a1, "u_bin": u_bin,
            "u_a2": u_a2, "zeta": zeta, "s2_treated_arm": s2_arm[1], "s2_control_arm": s2_arm[0]}


@dataclass(frozen=True, eq=False)
class DgpTruth:
    theta: float
    theta_se: float
    theta_source: str
    oracle: DgpOracle
    closed_form_theta: float | None = None
    components: dict = field(default_factory=dict, repr=False)


# Analytic effects E[mu_(1,1)(S1)] - E[mu_(0,0)(S1)] for models where the
# expectation reduces to intercepts and second moments of S1.
CLOSED_FORM_THETA = {"M1": -3.0, "M2": -3.0, "M3": -3.0, "M4": -3.0, "M5": -2.0,
                     "M6": -3.0, "M7": -3.0, "M9": -3.0, "M10": -3.0}


def potential_outcome_means(model, d1, d2, units):
    oracle = DgpOracle(model, d1, d2)
    s1 = units["s1"]
    return (oracle.nu(TREATED, s1, units["s2_treated_arm"]),
            oracle.nu(CONTROL, s1, units["s2_control_arm"]))


@lru_cache(maxsize=64)
def monte_carlo_theta(model: str, d1: int, d2: int, draws: int = TRUTH_DRAWS,
                      seed: int = TRUTH_SEED, chunk: int = 50_000,
                      max_se: float | None = TRUTH_MAX_SE) -> tuple[float, float, int]:
    """(mean, standard error, draws used) of Y(1,1) - Y(0,0) over fresh units.

    At least ``draws`` units are used; when ``max_se`` is set, further chunks
    are added until the standard error falls below it. zeta is shared by both
    potential outcomes, so it cancels from the difference.
    """
    rng = np.random.default_rng([seed, MODELS.index(model), d1, d2])
    total = total_sq = 0.0
    done = 0
    while True:
        m = chunk if done + chunk <= draws or max_se is not None else draws - done
        units = draw_units(model, d1, d2, m, rng)
        ya, yc = potential_outcome_means(model, d1, d2, units)
        diff = ya - yc
        total += diff.sum()
        total_sq += (diff ** 2).sum()
        done += m
        mean = total / done
        se = np.sqrt(max(total_sq / done - mean ** 2, 0.0) / done)
        if done >= draws and (max_se is None or se <= max_se):
            break
    return float(mean), float(se), done


def generate(spec: DgpSpec, truth_draws: int = TRUTH_DRAWS,
             theta: tuple[float, float, int] | None = None) -> tuple[Dataset, DgpTruth]:
    """One dataset of ``spec`` and its ground truth.

    ``theta`` may carry a precomputed (mean, se, draws) truth to skip the
    Monte Carlo integration.
    """
    rng = np.random.default_rng(spec.seed)
    oracle = DgpOracle(spec.model, spec.d1, spec.d2)
    units = draw_units(spec.model, spec.d1, spec.d2, spec.n, rng)
    s1 = units["s1"]
    a1 = (units["u_a1"] < oracle.pi(s1)).astype(np.int8)
    s2 = np.where(a1[:, None] == 1, units["s2_treated_arm"], units["s2_control_arm"])
    rho = np.where(a1 == 1, oracle.rho(TREATED, s1, s2), oracle.rho(CONTROL, s1, s2))
    a2 = (units["u_a2"] < rho).astype(np.int8)
    ya, yc = potential_outcome_means(spec.model, spec.d1, spec.d2, units)
    y_treated = ya + units["zeta"]
    y_control = yc + units["zeta"]
    y = a1 * a2 * y_treated + (1 - a1) * (1 - a2) * y_control
    ds = Dataset(y, a1, a2, s1, s2)
    mc_theta, se, used = theta or monte_carlo_theta(spec.model, spec.d1, spec.d2, truth_draws)
    components = {**units, "y_treated": y_treated, "y_control": y_control}
    truth = DgpTruth(mc_theta, se, f"monte_carlo({used}, {se:.6f})", oracle,
                     CLOSED_FORM_THETA.get(spec.model), components)
    return ds, truth


class OracleProvider(NuisanceProvider):
    """Exact nuisance functions of a DGP; ignores the training rows."""

    requires_fitting = False

    def __init__(self, truth: DgpTruth | DgpOracle, needs=("nu", "mu", "pi", "rho")):
        oracle = truth.oracle if isinstance(truth, DgpTruth) else truth
        missing = [k for k in needs if k not in oracle.available]
        if missing:
            raise ConfigError(f"oracle for {oracle.model} lacks {missing}; "
                              f"available: {list(oracle.available)}")
        self.oracle = oracle

    def cross_fit(self, ds, train, evaluate, seed=0):
        idx = np.asarray(evaluate)
        s1, s2 = ds.s1[idx], ds.s2[idx]
        nu = {c: self.oracle.nu(c, s1, s2) for c in PATHS}
        mu = {c: self.oracle.mu(c, s1) for c in PATHS}
        rho = {c: self.oracle.rho(c, s1, s2) for c in PATHS}
        return NuisancePredictions(idx, nu, mu, self.oracle.pi(s1), rho), None


def oracle_provider(truth: DgpTruth) -> OracleProvider:
    return OracleProvider(truth)


# --- estimators run by the harness -------------------------------------------

@dataclass(frozen=True)
class HarnessConfig:
    k_folds: int = 5
    clip_eps: float = 0.01
    level: float = 0.95
    cv_folds: int = 10
    penalty_mix: float = 1.0


def _dr(mix=None, oracle=False):
    """DR estimator; ``mix=None`` takes the harness penalty mix."""
    def run(ds, truth, seed, hc):
        provider = OracleProvider(truth) if oracle else None
        est = estimate_dynamic_ate(ds, DrConfig(hc.k_folds, seed, hc.clip_eps, hc.level,
                                                hc.penalty_mix if mix is None else mix,
                                                hc.cv_folds, provider))
        return est.theta_hat, est.std_error, est.diagnostics
    return run


def _simple(fn, provider=None):
    def run(ds, truth, seed, hc):
        if provider is None:
            est = fn(ds)
        else:
            est = fn(ds, provider(truth, hc), seed)
        return est.theta_hat, est.std_error, {}
    return run


def _lasso_propensity(truth, hc):
    from .nuisance import LambdaPolicy, LassoProvider
    return ZeroOutcomeProvider(LassoProvider(LambdaPolicy(cv_folds=hc.cv_folds, mix=hc.penalty_mix),
                                          hc.clip_eps))


ESTIMATORS = {
    "dr-lasso": _dr(),
    "dr-elasticnet": _dr(0.7),
    "oracle": _dr(oracle=True),
    "empdiff": _simple(estimate_empdiff),
    "ipw-oracle": _simple(estimate_ipw, lambda truth, hc: OracleProvider(truth)),
    "wipw-oracle": _simple(estimate_wipw, lambda truth, hc: OracleProvider(truth)),
    "ipw-lasso": _simple(estimate_ipw, _lasso_propensity),
    "wipw-lasso": _simple(estimate_wipw, _lasso_propensity),
}


@dataclass(frozen=True)
class MetricsRow:
    estimator: str
    bias: float
    rmse: float
    length: float
    coverage: float
    esd: float
    asd: float
    reps: int


def robust_metrics(theta_hats, std_errors, truth: float, level: float = 0.95,
                   estimator: str = "") -> MetricsRow:
    """Median-type summaries of replicated estimates.

    Bias = median(est) - truth; RMSE = sqrt(median((est - truth)^2));
    Length = median CI length; Coverage = share of CIs holding truth;
    ESD = 1.4826 * MAD(est); ASD = median(std_error).
    """
    est = np.asarray(theta_hats, dtype=float)
    se = np.asarray(std_errors, dtype=float)
    if est.size == 0:
        raise EstimationError("no successful replications to summarize")
    z = normal_quantile(level)
    med = np.median(est)
    covered = np.abs(est - truth) <= z * se
    return MetricsRow(estimator,
                      float(med - truth),
                      float(np.sqrt(np.median((est - truth) ** 2))),
                      float(np.median(2 * z * se)),
                      float(covered.mean()),
                      float(MAD_SCALE * np.median(np.abs(est - med))),
                      float(np.median(se)),
                      int(est.size))


def replication_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, rep]).generate_state(1)[0])


def run_replication(spec: DgpSpec, estimators, rep: int, seed: int, hc: HarnessConfig,
                    theta: tuple[float, float, int]) -> dict:
    rseed = replication_seed(seed, rep)
    ds, truth = generate(spec.replace(seed=rseed), theta=theta)
    results = {}
    for label in estimators:
        try:
            theta, se, diag = ESTIMATORS[label](ds, truth, rseed, hc)
            results[label] = {"ok": True, "theta_hat": theta, "std_error": se, **diag}
        except (EstimationError, DyndrError) as exc:
            results[label] = {"ok": False, "error": str(exc)}
    return {"rep": rep, "seed": rseed, "results": results}


def _run_replication_args(args):
    return run_replication(*args)


@dataclass(eq=False)
class SimulationReport:
    spec: DgpSpec
    estimators: list
    reps: int
    seed: int
    level: float
    theta: float
    theta_se: float
    raw: list
    rows: list
    failures: dict
    config: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    elapsed_seconds: float = float("nan")

    def estimates(self, label):
        ok = [r["results"][label] for r in self.raw if r["results"][label]["ok"]]
        return (np.array([o["theta_hat"] for o in ok]), np.array([o["std_error"] for o in ok]))

    def row(self, label) -> MetricsRow:
        return next(r for r in self.rows if r.estimator == label)

    def to_dict(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "estimators": list(self.estimators),
            "reps": self.reps,
            "seed": self.seed,
            "level": self.level,
            "theta": self.theta,
            "theta_se": self.theta_se,
            "rows": [asdict(r) for r in self.rows],
            "failures": self.failures,
            "config": self.config,
            "metadata": self.metadata,
            "raw": self.raw,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "SimulationReport":
        return cls(DgpSpec(**d["spec"]), list(d["estimators"]), d["reps"], d["seed"],
                   d["level"], d["theta"], d["theta_se"], d["raw"],
                   [MetricsRow(**r) for r in d["rows"]], d["failures"], d.get("config", {}),
                   d.get("metadata", {}))

    @classmethod
    def from_json(cls, text) -> "SimulationReport":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        cols = ["estimator", "bias", "rmse", "length", "coverage", "esd", "asd", "reps"]
        lines = [",".join(cols)]
        for r in self.rows:
            d = asdict(r)
            lines.append(",".join(repr(d[c]) if isinstance(d[c], float) else str(d[c])
                                  for c in cols))
        return "\n".join(lines) + "\n"


def summarize(spec, estimators, raw, seed, level, theta, theta_se, config, metadata):
    rows, failures = [], {}
    for label in estimators:
        ok = [r["results"][label] for r in raw if r["results"][label]["ok"]]
        failures[label] = len(raw) - len(ok)
        if ok:
            rows.append(robust_metrics([o["theta_hat"] for o in ok],
                                       [o["std_error"] for o in ok], theta, level, label))
    return SimulationReport(spec, list(estimators), len(raw), seed, level, theta, theta_se,
                            raw, rows, failures, config, metadata)


def run_monte_carlo(spec: DgpSpec, estimators, reps: int, seed: int = 42,
                    config: HarnessConfig | None = None, threads: int = 1,
                    truth_draws: int = TRUTH_DRAWS, progress=None) -> SimulationReport:
    """Replicate ``estimators`` on fresh draws of ``spec``.

    Replication r uses a child seed of (seed, r) for both data and estimator
    randomness, so results do not depend on which estimators run alongside or
    on execution order.
    """
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown:
        raise ConfigError(f"unknown estimators {unknown}; expected from {sorted(ESTIMATORS)}")
    hc = config or HarnessConfig()
    start = time.perf_counter()
    mc = monte_carlo_theta(spec.model, spec.d1, spec.d2, truth_draws)
    theta, theta_se, used = mc
    jobs = [(spec, tuple(estimators), r, seed, hc, mc) for r in range(reps)]
    raw = []
    if threads > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for res in pool.map(_run_replication_args, jobs):
                raw.append(res)
                if progress:
                    progress(len(raw), reps)
    else:
        for job in jobs:
            raw.append(run_replication(*job))
            if progress:
                progress(len(raw), reps)
    raw.sort(key=lambda r: r["rep"])
    metadata = {"prng": PRNG_NAME, "truth_draws": used, "truth_source": "monte_carlo"}
    report = summarize(spec, estimators, raw, seed, hc.level, theta, theta_se, asdict(hc),
                       metadata)
    report.elapsed_seconds = time.perf_counter() - start
    return report


TABLE_COLUMNS = ("bias", "rmse", "length", "coverage", "esd", "asd")


def format_table(report: SimulationReport) -> str:
    """Plain-text table, one row per estimator, numbers exactly as stored."""
    head = ["Estimator", "Bias", "RMSE", "Length", "Coverage", "ESD", "ASD", "Reps"]
    body = [[r.estimator, *(repr(getattr(r, c)) for c in TABLE_COLUMNS), str(r.reps)]
            for r in report.rows]
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return "\n".join(fmt.format(*line) for line in [head, *body])
