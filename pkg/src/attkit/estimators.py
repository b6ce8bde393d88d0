"""The ATT estimator suite: difference-in-means, outcome models, matching,
weighting, balancing, and the doubly robust cross-fitted/out-of-bag scores."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import ObservationTable
from .errors import (BootstrapError, DomainError, InfeasibleBalanceError,
                     ConvergenceError)
from .forest import (ForestParams, fit_probability_forest,
                     fit_regression_forest, _subseed)
from .matching import bias_corrected_att, match_knn
from .overlap import PropensityFit, clamp_scores, estimate_propensity

Z95 = 1.96


@dataclass(frozen=True)
class AttEstimate:
    """Point estimate, standard error, and 95% CI for the effect on the treated."""

    point: float
    se: float
    ci_lo: float
    ci_hi: float
    estimator: str
    sample: str
    n_treated: int
    n_control: int
    ci_method: str = "analytic"
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.ci_lo < self.ci_hi:
            raise DomainError("confidence interval must have positive width")

    @classmethod
    def analytic(cls, point, se, estimator, sample, n_treated, n_control,
                 diagnostics=None):
        se = float(se)
        half = Z95 * se if se > 0 else 1e-12
        return cls(point=float(point), se=se, ci_lo=float(point) - half,
                   ci_hi=float(point) + half, estimator=estimator, sample=sample,
                   n_treated=int(n_treated), n_control=int(n_control),
                   diagnostics=diagnostics or {})

    @property
    def ci95(self):
        return (self.ci_lo, self.ci_hi)

    def significant(self) -> bool:
        """True when the 95% CI excludes zero."""
        return self.ci_lo > 0 or self.ci_hi < 0

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator, "sample": self.sample,
            "point": self.point, "se": self.se,
            "ci_lo": self.ci_lo, "ci_hi": self.ci_hi,
            "ci_method": self.ci_method,
            "n_treated": self.n_treated, "n_control": self.n_control,
        }


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative per-control weights normalized to sum to one."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if np.any(v < 0):
            raise DomainError("weights must be nonnegative")
        if abs(v.sum() - 1.0) > 1e-10:
            raise DomainError("weights must sum to 1")
        object.__setattr__(self, "values", v)

    @property
    def effective_sample_size(self) -> float:
        return float(1.0 / np.sum(self.values ** 2))


@dataclass(frozen=True)
class NetParams:
    """Elastic-net nuisance settings for the cross-fitted estimator."""

    alpha: float = 0.5
    n_lambda: int = 100
    lambda_decades: float = 4.0
    cv_folds: int = 5


def _split_arms(sample):
    t, c = sample.treated_idx, sample.control_idx
    if t.size == 0 or c.size == 0:
        raise DomainError("both arms must be nonempty")
    return t, c


def diff_in_means(sample: ObservationTable, sample_tag=None) -> AttEstimate:
    """mean(Y | W=1) - mean(Y | W=0) with the two-sample variance formula."""
    t, c = _split_arms(sample)
    yt, yc = sample.y[t], sample.y[c]
    point = yt.mean() - yc.mean()
    vt = yt.var(ddof=1) if yt.size > 1 else 0.0
    vc = yc.var(ddof=1) if yc.size > 1 else 0.0
    se = np.sqrt(vt / yt.size + vc / yc.size)
    return AttEstimate.analytic(point, se, "diff_in_means",
                                sample_tag or sample.source_tag, t.size, c.size)


def outcome_model_att(sample: ObservationTable, model: str = "ols",
                      seed: int | None = None,
                      forest_params: ForestParams | None = None,
                      sample_tag=None) -> AttEstimate:
    """Outcome-modeling ATT.

    "ols" regresses Y on treatment and covariates and reads off the treatment
    coefficient (HC1 standard error).  "ols_interact" and "forest" fit the
    control conditional mean and average treated residuals against it.
    """
    from .models import fit_ols

    t, c = _split_arms(sample)
    tag = sample_tag or sample.source_tag
    if model == "ols":
        D = np.column_stack([sample.w.astype(np.float64), sample.X])
        fit = fit_ols(D, sample.y,
                      column_names=("treat",) + sample.schema.covariates)
        point = fit.coef[1]
        se = np.sqrt(fit.cov[1, 1])
        return AttEstimate.analytic(point, se, "reg", tag, t.size, c.size)
    if model == "ols_interact":
        fit = fit_ols(sample.X[c], sample.y[c],
                      column_names=sample.schema.covariates)
        resid_t = sample.y[t] - fit.predict(sample.X[t])
        point = resid_t.mean()
        xbar = np.concatenate([[1.0], sample.X[t].mean(axis=0)])
        var = resid_t.var(ddof=1) / t.size + float(xbar @ fit.cov @ xbar)
        return AttEstimate.analytic(point, np.sqrt(var), "reg_interact", tag,
                                    t.size, c.size)
    if model == "forest":
        if seed is None:
            raise DomainError("the forest outcome model requires a seed")
        params = forest_params if forest_params is not None else ForestParams()
        params = replace(params, seed=_subseed(seed, 21))
        fit = fit_regression_forest(sample.X[c], sample.y[c], params)
        resid_t = sample.y[t] - fit.predict(sample.X[t])
        resid_c = sample.y[c] - fit.predict_oob()
        point = resid_t.mean()
        var = resid_t.var(ddof=1) / t.size + resid_c.var(ddof=1) / c.size
        return AttEstimate.analytic(point, np.sqrt(var), "grf", tag,
                                    t.size, c.size,
                                    diagnostics={"se_method": "plugin"})
    raise DomainError(f"unknown outcome model {model!r}")


def _weighted_att(sample, weights: WeightVector, estimator, tag,
                  extra_diag=None) -> AttEstimate:
    t, c = _split_arms(sample)
    yt, yc = sample.y[t], sample.y[c]
    wv = weights.values
    mu0 = float(wv @ yc)
    point = yt.mean() - mu0
    var = yt.var(ddof=1) / yt.size + float(np.sum(wv ** 2 * (yc - mu0) ** 2))
    diag = {"effective_sample_size": weights.effective_sample_size,
            "max_weight": float(wv.max())}
    if wv.max() > 0.5:
        diag["dominance_warning"] = "one control carries more than half the weight"
    if extra_diag:
        diag.update(extra_diag)
    return AttEstimate.analytic(point, np.sqrt(var), estimator, tag,
                                t.size, c.size, diagnostics=diag)


def ipw_att(sample: ObservationTable, fit: PropensityFit,
            sample_tag=None) -> AttEstimate:
    """Hajek inverse-propensity ATT: controls weighted by e/(1-e), normalized."""
    t, c = _split_arms(sample)
    if len(fit.scores) != sample.n:
        raise DomainError("propensity fit does not cover this sample")
    tag = sample_tag or sample.source_tag
    odds = fit.scores[c] / (1.0 - fit.scores[c])
    wv = WeightVector(odds / odds.sum())
    yt, yc = sample.y[t], sample.y[c]
    mu1, mu0 = yt.mean(), float(wv.values @ yc)
    point = mu1 - mu0
    # influence-function plug-in treating the scores as fixed
    p1 = t.size / sample.n
    omega = odds * t.size / odds.sum()
    psi = np.zeros(sample.n)
    psi[t] = (yt - mu1) / p1
    psi[c] = -omega * (yc - mu0) / p1
    se = np.sqrt(np.sum(psi ** 2)) / sample.n
    diag = {"effective_sample_size": wv.effective_sample_size,
            "max_weight": float(wv.values.max())}
    if wv.values.max() > 0.5:
        diag["dominance_warning"] = "one control carries more than half the weight"
    return AttEstimate.analytic(point, se, "ipw", tag, t.size, c.size,
                                diagnostics=diag)


def _standardize_moments(M):
    mu = M.mean(axis=0)
    sd = M.std(axis=0, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    return (M - mu) / sd, mu, sd


def _hull_check(Mc, target, names):
    viol = [names[j] for j in range(Mc.shape[1])
            if target[j] < Mc[:, j].min() or target[j] > Mc[:, j].max()]
    if viol:
        raise InfeasibleBalanceError(
            f"treated moments outside the controls' range: {viol}", viol)


def entropy_balance_weights(Mc: np.ndarray, target: np.ndarray,
                            names=None, tol: float = 1e-10,
                            max_iter: int = 200) -> tuple[np.ndarray, float]:
    """KL-minimal control weights with exact first-moment balance.

    Solves the dual by damped Newton on the log-weight natural parameters.
    Returns (weights summing to 1, max standardized imbalance at the solution).
    """
    names = list(names) if names is not None else [f"m{j}" for j in range(Mc.shape[1])]
    _hull_check(Mc, target, names)
    scale = Mc.std(axis=0, ddof=1)
    scale = np.where(scale > 0, scale, 1.0)
    Z = (Mc - target) / scale
    n, p = Z.shape
    lam = np.zeros(p)

    def dual(l):
        eta = -Z @ l
        m = eta.max()
        return m + np.log(np.sum(np.exp(eta - m)))

    f = dual(lam)
    for _ in range(max_iter):
        eta = -Z @ lam
        eta -= eta.max()
        wraw = np.exp(eta)
        w = wraw / wraw.sum()
        g = w @ Z
        if np.max(np.abs(g)) <= tol:
            break
        H = (Z * w[:, None]).T @ Z - np.outer(g, g)
        try:
            step = np.linalg.solve(H + 1e-12 * np.eye(p), g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        scale_ls = 1.0
        improved = False
        for _ in range(60):
            cand = lam + scale_ls * step
            fc = dual(cand)
            if fc < f:
                lam, f = cand, fc
                improved = True
                break
            scale_ls *= 0.5
        if not improved:
            break
    eta = -Z @ lam
    eta -= eta.max()
    w = np.exp(eta)
    w /= w.sum()
    imb = float(np.max(np.abs(w @ Z)))
    if imb > 1e-6:
        worst = [names[j] for j in np.argsort(-np.abs(w @ Z))[:3]]
        raise InfeasibleBalanceError(
            f"balance infeasible; residual imbalance {imb:.2e} on {worst}", worst)
    return w, imb


def cbps_weights(Mc: np.ndarray, target_sum: np.ndarray, n_treated: int,
                 names=None, tol: float = 1e-10,
                 max_iter: int = 200) -> tuple[np.ndarray, np.ndarray, float]:
    """Just-identified covariate-balancing propensity odds weights.

    Finds logit coefficients beta with odds exp([1 X] beta) whose weighted
    control moments reproduce the treated moment sums exactly (the balance
    equations double as the score equations).  Newton with backtracking on
    the convex potential sum(exp(eta)) - beta' T.
    """
    names = list(names) if names is not None else [f"m{j}" for j in range(Mc.shape[1])]
    _hull_check(Mc, target_sum / n_treated, names)
    Zs, mu, sd = _standardize_moments(Mc)
    D = np.column_stack([np.ones(Mc.shape[0]), Zs])
    # treated moment sums on the standardized scale
    T = np.concatenate([[float(n_treated)],
                        (target_sum - n_treated * mu) / sd])
    n, p = D.shape
    beta = np.zeros(p)
    beta[0] = np.log(n_treated / n)

    def potential(b):
        return float(np.sum(np.exp(D @ b)) - T @ b)

    f = potential(beta)
    converged = False
    for _ in range(max_iter):
        ew = np.exp(D @ beta)
        g = D.T @ ew - T
        if np.max(np.abs(g)) <= tol * max(1.0, n_treated):
            converged = True
            break
        H = D.T @ (D * ew[:, None])
        try:
            step = np.linalg.solve(H + 1e-12 * np.eye(p), g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        s = 1.0
        improved = False
        for _ in range(60):
            cand = beta - s * step
            fc = potential(cand)
            if fc < f:
                beta, f = cand, fc
                improved = True
                break
            s *= 0.5
        if not improved:
            break
    ew = np.exp(D @ beta)
    w = ew / ew.sum()
    imb = float(np.max(np.abs(D.T @ ew - T))) / max(1.0, n_treated)
    if not converged and imb > 1e-6:
        worst = [(["intercept"] + names)[j]
                 for j in np.argsort(-np.abs(D.T @ ew - T))[:3]]
        raise InfeasibleBalanceError(
            f"balance equations unsolvable; residual {imb:.2e} on {worst}", worst)
    return w, beta, imb


def balance_att(sample: ObservationTable, method: str = "entropy",
                moments=None, sample_tag=None) -> AttEstimate:
    """Weighting ATT with exact first-moment balance on the listed covariates."""
    t, c = _split_arms(sample)
    tag = sample_tag or sample.source_tag
    names = list(moments) if moments is not None else list(sample.schema.covariates)
    cols = [sample.schema.covariate_index(nm) for nm in names]
    Mt = sample.X[t][:, cols]
    Mc = sample.X[c][:, cols]
    if method == "entropy":
        w, imb = entropy_balance_weights(Mc, Mt.mean(axis=0), names)
        extra = {"imbalance": imb, "estimator_detail": "entropy"}
        return _weighted_att(sample, WeightVector(w), "ebal", tag, extra)
    if method == "cbps":
        w, beta, imb = cbps_weights(Mc, Mt.sum(axis=0), t.size, names)
        extra = {"imbalance": imb, "estimator_detail": "cbps"}
        return _weighted_att(sample, WeightVector(w), "cbps", tag, extra)
    raise DomainError(f"unknown balance method {method!r}")


def _dr_score(sample, mu0_hat, e_hat, estimator, tag, extra_diag=None) -> AttEstimate:
    """Doubly robust ATT from out-of-fold/out-of-bag nuisance values."""
    t, c = _split_arms(sample)
    y = sample.y
    resid = y - mu0_hat
    e = clamp_scores(e_hat)
    odds = e[c] / (1.0 - e[c])
    A = resid[t].mean()
    hajek = odds / odds.sum()
    B = float(hajek @ resid[c])
    point = A - B
    p1 = t.size / sample.n
    omega = odds * t.size / odds.sum()
    psi = np.zeros(sample.n)
    psi[t] = (resid[t] - A) / p1
    psi[c] = -omega * (resid[c] - B) / p1
    se = np.sqrt(np.sum(psi ** 2)) / sample.n
    diag = {"ess_controls": float(1.0 / np.sum(hajek ** 2))}
    if extra_diag:
        diag.update(extra_diag)
    return AttEstimate.analytic(point, se, estimator, tag, t.size, c.size,
                                diagnostics=diag)


def _stratified_folds(w, folds, rng):
    """Fold labels with both arms spread across folds."""
    n = len(w)
    fold_of = np.empty(n, dtype=np.int64)
    for arm in (0, 1):
        rows = np.flatnonzero(w == arm)
        if rows.size < folds:
            raise DomainError(
                f"arm {arm} has {rows.size} units; cannot stratify into {folds} folds")
        perm = rng.permutation(rows)
        fold_of[perm] = np.arange(perm.size) % folds
    return fold_of


def dml_att(sample: ObservationTable, folds: int = 5,
            net_params: NetParams | None = None, seed: int = 0,
            sample_tag=None, _corrupt=None) -> AttEstimate:
    """Cross-fitted doubly robust ATT with elastic-net nuisances.

    The outcome mean is an elastic net fit on training-fold controls, the
    propensity a logistic elastic net on all training-fold units; both are
    evaluated out-of-fold before entering the orthogonal score.
    """
    from .models import default_lambda_grid, fit_elastic_net

    if folds < 2:
        raise DomainError("need at least 2 folds")
    np_ = net_params or NetParams()
    t, c = _split_arms(sample)
    tag = sample_tag or sample.source_tag
    rng = np.random.default_rng(np.random.SeedSequence([seed, sample.n]))
    fold_of = _stratified_folds(sample.w, folds, rng)
    mu0 = np.empty(sample.n)
    e = np.empty(sample.n)
    lambdas = []
    for f in range(folds):
        tr = fold_of != f
        te = ~tr
        ctr = tr & (sample.w == 0)
        if not np.any(ctr) or not np.any(tr & (sample.w == 1)):
            raise DomainError(f"fold {f} lost an arm; stratification failed")
        m_fit = fit_elastic_net(sample.X[ctr], sample.y[ctr], alpha=np_.alpha,
                                lambda_grid=None, folds=np_.cv_folds,
                                family="gaussian", seed=_subseed(seed, 100 + f))
        e_fit = fit_elastic_net(sample.X[tr], sample.w[tr].astype(np.float64),
                                alpha=np_.alpha, lambda_grid=None,
                                folds=np_.cv_folds, family="binomial",
                                seed=_subseed(seed, 200 + f))
        mu0[te] = m_fit.predict(sample.X[te])
        e[te] = e_fit.predict(sample.X[te])
        lambdas.append((m_fit.lambda_, e_fit.lambda_))
    if _corrupt is not None:
        mu0, e = _corrupt(mu0, e)
    return _dr_score(sample, mu0, e, "dml", tag,
                     extra_diag={"folds": folds, "lambdas": lambdas})


def aipw_att(sample: ObservationTable, seed: int = 0,
             forest_params: ForestParams | None = None,
             sample_tag=None, _corrupt=None) -> AttEstimate:
    """Doubly robust ATT with honest-forest nuisances evaluated out-of-bag."""
    t, c = _split_arms(sample)
    tag = sample_tag or sample.source_tag
    params = forest_params if forest_params is not None else ForestParams()
    m_fit = fit_regression_forest(sample.X[c], sample.y[c],
                                  replace(params, seed=_subseed(seed, 21)))
    mu0 = np.empty(sample.n)
    mu0[c] = m_fit.predict_oob()
    mu0[t] = m_fit.predict(sample.X[t])
    e_fit = fit_probability_forest(sample.X, sample.w.astype(np.float64),
                                   replace(params, seed=_subseed(seed, 22)))
    e = e_fit.predict_oob()
    if _corrupt is not None:
        mu0, e = _corrupt(mu0, e)
    return _dr_score(sample, mu0, e, "aipw", tag)


def matching_att(sample: ObservationTable, k: int = 5,
                 metric: str = "normalized_euclidean",
                 sample_tag=None) -> AttEstimate:
    """1:k nearest-neighbor covariate matching with bias correction."""
    t, c = _split_arms(sample)
    ms = match_knn(sample.X[t], sample.X[c], k=k, metric=metric)
    return bias_corrected_att(sample, ms, sample_tag=sample_tag)


# --- estimator registry -----------------------------------------------------

ESTIMATOR_TAGS = ("diff_in_means", "reg", "reg_interact", "grf", "matching",
                  "ipw", "cbps", "ebal", "dml", "aipw")
FOREST_TAGS = frozenset({"grf", "ipw", "aipw"})


def run_estimator(tag: str, sample: ObservationTable, seed: int | None = None,
                  options: dict | None = None, sample_tag=None) -> AttEstimate:
    """Dispatch one of the ten estimators by tag."""
    opts = dict(options or {})
    forest_params = opts.pop("forest_params", None)
    if tag in FOREST_TAGS and seed is None:
        raise DomainError(f"estimator {tag!r} requires a seed")
    if tag == "diff_in_means":
        return diff_in_means(sample, sample_tag=sample_tag)
    if tag == "reg":
        return outcome_model_att(sample, "ols", sample_tag=sample_tag)
    if tag == "reg_interact":
        return outcome_model_att(sample, "ols_interact", sample_tag=sample_tag)
    if tag == "grf":
        return outcome_model_att(sample, "forest", seed=seed,
                                 forest_params=forest_params, sample_tag=sample_tag)
    if tag == "matching":
        return matching_att(sample, k=opts.pop("k", 5),
                            metric=opts.pop("metric", "normalized_euclidean"),
                            sample_tag=sample_tag)
    if tag == "ipw":
        fit = estimate_propensity(sample, "forest", seed=_subseed(seed, 31),
                                  forest_params=forest_params)
        return ipw_att(sample, fit, sample_tag=sample_tag)
    if tag == "cbps":
        return balance_att(sample, "cbps", moments=opts.pop("moments", None),
                           sample_tag=sample_tag)
    if tag == "ebal":
        return balance_att(sample, "entropy", moments=opts.pop("moments", None),
                           sample_tag=sample_tag)
    if tag == "dml":
        return dml_att(sample, folds=opts.pop("folds", 5),
                       net_params=opts.pop("net_params", None),
                       seed=seed if seed is not None else 0, sample_tag=sample_tag)
    if tag == "aipw":
        return aipw_att(sample, seed=seed, forest_params=forest_params,
                        sample_tag=sample_tag)
    raise DomainError(f"unknown estimator tag {tag!r}")


def bootstrap_ci(sample: ObservationTable, estimator_spec, B: int = 1000,
                 seed: int = 0) -> AttEstimate:
    """Percentile bootstrap CI with stratified within-arm resampling.

    estimator_spec is (tag, options) for the registry or a callable
    sample -> AttEstimate.  Replicates that raise are dropped and counted;
    more than 10% failures aborts.
    """
    if B < 200:
        raise DomainError("need at least 200 bootstrap replicates")
    if callable(estimator_spec):
        runner = estimator_spec
        tag = getattr(estimator_spec, "__name__", "custom")
    else:
        tag, opts = estimator_spec[0], dict(estimator_spec[1] or {})
        spec_seed = opts.pop("seed", 0)
        runner = lambda s: run_estimator(tag, s, seed=spec_seed, options=dict(opts))
    full = runner(sample)
    t, c = _split_arms(sample)
    rng = np.random.default_rng(np.random.SeedSequence([seed, sample.n, B]))
    points = []
    failures = 0
    for b in range(B):
        rt = rng.choice(t, size=t.size, replace=True)
        rc = rng.choice(c, size=c.size, replace=True)
        rep = sample.subset(np.concatenate([rt, rc]))
        try:
            points.append(runner(rep).point)
        except Exception:
            failures += 1
    if failures > 0.10 * B:
        raise BootstrapError(f"{failures}/{B} bootstrap replicates failed")
    pts = np.asarray(points)
    lo, hi = np.percentile(pts, [2.5, 97.5])
    if hi <= lo:
        hi = lo + 1e-12
    se = float(pts.std(ddof=1)) if pts.size > 1 else 0.0
    return AttEstimate(point=full.point, se=se, ci_lo=float(lo), ci_hi=float(hi),
                       estimator=full.estimator, sample=full.sample,
                       n_treated=full.n_treated, n_control=full.n_control,
                       ci_method="percentile",
                       diagnostics={"B": B, "failures": failures})
