"""Synthetic data with known ground truth: the oracle for Monte Carlo checks."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import (ROLE_COVARIATE, ROLE_OUTCOME, ROLE_TREATMENT,
                      CovariateSchema, ObservationTable, TAG_SYNTHETIC)
from .errors import ConfigError
from .estimators import AttEstimate, run_estimator
from .forest import _subseed


@dataclass(frozen=True)
class EffectSpec:
    """Unit-level treatment effect as a function of the covariates."""

    kind: str = "constant"          # constant | step | linear
    value: float = 0.0              # constant level
    feature: int = 0                # step/linear driver
    threshold: float = 0.0          # step cut point
    low: float = 0.0
    high: float = 0.0
    intercept: float = 0.0
    slopes: tuple = ()

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.full(X.shape[0], self.value)
        if self.kind == "step":
            return np.where(X[:, self.feature] < self.threshold, self.low, self.high)
        if self.kind == "linear":
            slopes = np.zeros(X.shape[1])
            for j, s in enumerate(self.slopes):
                slopes[j] = s
            return self.intercept + X @ slopes
        raise ConfigError(f"unknown effect kind {self.kind!r}")


@dataclass(frozen=True)
class DgpConfig:
    """Covariate, assignment, and outcome law for the synthetic oracle.

    Covariates are independent standard normals followed by Bernoulli(1/2)
    binaries.  Treatment log-odds are linear in the covariates with the
    implied propensities clipped into [eps, 1 - eps]; eps is the overlap
    control.  The outcome adds the effect for treated units plus gaussian
    noise on a dollar scale.
    """

    n: int = 5000
    p_continuous: int = 6
    p_binary: int = 4
    treat_intercept: float = -1.0
    treat_coefs: tuple = (0.0,) * 10
    outcome_intercept: float = 10000.0
    outcome_coefs: tuple = (0.0,) * 10
    effect: EffectSpec = field(default_factory=EffectSpec)
    noise_sd: float = 5000.0
    propensity_bound: float = 0.02
    seed: int = 0

    @property
    def p(self) -> int:
        return self.p_continuous + self.p_binary

    def validate(self):
        if self.n < 2:
            raise ConfigError("n must be at least 2")
        if self.p < 1:
            raise ConfigError("need at least one covariate")
        if len(self.treat_coefs) != self.p or len(self.outcome_coefs) != self.p:
            raise ConfigError("coefficient lengths must equal p")
        if not 0.0 < self.propensity_bound < 0.5:
            raise ConfigError("propensity bound must lie in (0, 0.5)")
        if self.noise_sd < 0:
            raise ConfigError("noise SD must be nonnegative")


@dataclass(frozen=True)
class DgpTruth:
    """Per-unit effects and the realized ATT of one generated sample."""

    tau: np.ndarray
    att_true: float
    propensity: np.ndarray


def _schema(p: int) -> CovariateSchema:
    names = ("w",) + tuple(f"x{j + 1}" for j in range(p)) + ("y",)
    roles = {n: ROLE_COVARIATE for n in names}
    roles["w"] = ROLE_TREATMENT
    roles["y"] = ROLE_OUTCOME
    return CovariateSchema(names=names, roles=roles)


def generate(config: DgpConfig) -> tuple[ObservationTable, DgpTruth]:
    """Draw one sample under unconfoundedness by construction."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, config.n]))
    X = np.empty((config.n, config.p))
    X[:, :config.p_continuous] = rng.standard_normal((config.n, config.p_continuous))
    X[:, config.p_continuous:] = rng.integers(
        0, 2, size=(config.n, config.p_binary)).astype(np.float64)
    eta = config.treat_intercept + X @ np.asarray(config.treat_coefs)
    e = 1.0 / (1.0 + np.exp(-eta))
    eps = config.propensity_bound
    e = np.clip(e, eps, 1.0 - eps)
    w = (rng.random(config.n) < e).astype(np.int8)
    if w.min() == w.max():
        raise ConfigError("generated sample has a single arm; adjust the design")
    tau = config.effect.evaluate(X)
    y = (config.outcome_intercept + X @ np.asarray(config.outcome_coefs)
         + w * tau + config.noise_sd * rng.standard_normal(config.n))
    table = ObservationTable(
        _schema(config.p), X, w, y,
        tags=np.array([TAG_SYNTHETIC] * config.n, dtype=object),
        pos=np.arange(config.n, dtype=np.int64))
    att_true = float(tau[w == 1].mean())
    return table, DgpTruth(tau=tau, att_true=att_true, propensity=e)


@dataclass(frozen=True)
class CoverageReport:
    """Bias, RMSE, and empirical 95% CI coverage over replicates."""

    bias: float
    rmse: float
    coverage: float
    replicates: int
    failures: int
    estimator: str

    def to_dict(self):
        return {"bias": self.bias, "rmse": self.rmse, "coverage": self.coverage,
                "replicates": self.replicates, "failures": self.failures,
                "estimator": self.estimator}


def monte_carlo(config: DgpConfig, estimator_spec, replicates: int) -> CoverageReport:
    """Run the estimator across fresh draws and score it against the truth."""
    if replicates < 100:
        raise ConfigError("need at least 100 replicates")
    config.validate()
    if callable(estimator_spec):
        runner = estimator_spec
        tag = getattr(estimator_spec, "__name__", "custom")
    else:
        tag, opts = estimator_spec[0], dict(estimator_spec[1] or {})

        def runner(sample, _tag=tag, _opts=opts):
            o = dict(_opts)
            return run_estimator(_tag, sample, seed=o.pop("seed", 0), options=o)

    errors = []
    covered = []
    failures = 0
    for r in range(replicates):
        cfg = replace(config, seed=_subseed(config.seed, 1000 + r))
        table, truth = generate(cfg)
        try:
            est = runner(table)
        except Exception:
            failures += 1
            continue
        errors.append(est.point - truth.att_true)
        covered.append(est.ci_lo <= truth.att_true <= est.ci_hi)
    if not errors:
        raise ConfigError("every replicate failed")
    err = np.asarray(errors)
    return CoverageReport(
        bias=float(err.mean()), rmse=float(np.sqrt(np.mean(err ** 2))),
        coverage=float(np.mean(covered)), replicates=replicates,
        failures=failures, estimator=tag)
