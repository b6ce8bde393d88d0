"""Propensity estimation, log-odds overlap diagnostics, and trimming rules."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import ObservationTable, compose_sample
from .errors import DegenerateTrimError, DomainError, InfeasibleMatchingError
from .forest import ForestParams, fit_probability_forest, _subseed
from .models import fit_logit

SCORE_CLAMP = 1e-4  # forests can emit exact 0/1; clamp before log-odds


@dataclass(frozen=True)
class PropensityFit:
    """Per-unit treatment probabilities, clamped inside (0, 1)."""

    scores: np.ndarray
    method: str                 # "logit" | "forest"
    oob: bool
    w: np.ndarray               # arm labels aligned with scores
    separation_suspected: bool = False

    def __post_init__(self):
        if len(self.scores) != len(self.w):
            raise DomainError("scores and arm labels must align")
        if np.any(self.scores <= 0) or np.any(self.scores >= 1):
            raise DomainError("scores must be strictly inside (0, 1)")

    @property
    def treated_scores(self):
        return self.scores[self.w == 1]

    @property
    def control_scores(self):
        return self.scores[self.w == 0]


def clamp_scores(e: np.ndarray) -> np.ndarray:
    return np.clip(e, SCORE_CLAMP, 1.0 - SCORE_CLAMP)


def estimate_propensity(sample: ObservationTable, method: str = "forest",
                        seed: int = 0, forest_params: ForestParams | None = None,
                        ) -> PropensityFit:
    """Estimate e(x) = Pr(W=1 | X) on the sample.

    The forest method returns out-of-bag scores for the sample's own units;
    logit returns fitted probabilities.  Separation under logit is flagged,
    not raised.
    """
    if sample.n_treated == 0 or sample.n_control == 0:
        raise DomainError("both arms must be present")
    if method == "logit":
        fit = fit_logit(sample.X, sample.w)
        scores = fit.predict_proba(sample.X)
        return PropensityFit(scores=clamp_scores(scores), method="logit", oob=False,
                             w=np.asarray(sample.w),
                             separation_suspected=fit.separation_suspected)
    if method == "forest":
        params = forest_params if forest_params is not None else ForestParams()
        params = replace(params, seed=seed)
        fit = fit_probability_forest(sample.X, sample.w.astype(np.float64), params)
        scores = fit.predict_oob()
        return PropensityFit(scores=clamp_scores(scores), method="forest", oob=True,
                             w=np.asarray(sample.w))
    raise DomainError(f"unknown propensity method {method!r}")


def log_odds(e):
    """ln(e / (1 - e)); rejects values outside the open unit interval."""
    arr = np.asarray(e, dtype=np.float64)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("log odds are defined only on (0, 1)")
    out = np.log(arr / (1.0 - arr))
    return float(out) if np.isscalar(e) or arr.ndim == 0 else out


@dataclass(frozen=True)
class HistogramData:
    """Shared-bin log-odds histogram per arm (the overlap plot's data)."""

    edges: np.ndarray
    treated_counts: np.ndarray
    control_counts: np.ndarray

    def to_delim(self, delimiter: str = ",") -> str:
        lines = [delimiter.join(["bin_lo", "bin_hi", "treated", "control"])]
        for i in range(len(self.treated_counts)):
            lines.append(delimiter.join([
                repr(float(self.edges[i])), repr(float(self.edges[i + 1])),
                str(int(self.treated_counts[i])), str(int(self.control_counts[i]))]))
        return "\n".join(lines) + "\n"


def overlap_histogram(fit: PropensityFit, bin_width: float = 0.5) -> HistogramData:
    """Histogram both arms' log-odds on a shared grid of width bin_width."""
    if bin_width <= 0:
        raise DomainError("bin width must be positive")
    if len(fit.scores) == 0:
        raise DomainError("empty propensity fit")
    lo_vals = log_odds(fit.scores)
    lo_edge = np.floor(lo_vals.min() / bin_width) * bin_width
    hi_edge = np.ceil(lo_vals.max() / bin_width) * bin_width
    if hi_edge <= lo_edge:
        hi_edge = lo_edge + bin_width
    edges = np.arange(lo_edge, hi_edge + bin_width / 2, bin_width)
    t_counts, _ = np.histogram(lo_vals[fit.w == 1], bins=edges)
    c_counts, _ = np.histogram(lo_vals[fit.w == 0], bins=edges)
    return HistogramData(edges=edges, treated_counts=t_counts, control_counts=c_counts)


@dataclass(frozen=True)
class TrimReport:
    """Retained/dropped unit indices per arm together with the rule applied."""

    rule: str
    retained_treated: np.ndarray
    retained_control: np.ndarray
    dropped_treated: int
    dropped_control: int
    thresholds: tuple
    seed: int | None = None

    def to_json(self) -> str:
        return json.dumps({
            "rule": self.rule,
            "retained_treated": [int(i) for i in self.retained_treated],
            "retained_control": [int(i) for i in self.retained_control],
            "dropped_treated": self.dropped_treated,
            "dropped_control": self.dropped_control,
            "thresholds": list(self.thresholds),
            "seed": self.seed,
        }, sort_keys=True, indent=2)


def _make_report(rule, w, keep, thresholds, seed=None) -> TrimReport:
    w = np.asarray(w)
    t_idx = np.flatnonzero((w == 1) & keep)
    c_idx = np.flatnonzero((w == 0) & keep)
    return TrimReport(
        rule=rule, retained_treated=t_idx, retained_control=c_idx,
        dropped_treated=int(np.sum((w == 1) & ~keep)),
        dropped_control=int(np.sum((w == 0) & ~keep)),
        thresholds=thresholds, seed=seed)


def trim_threshold(fit: PropensityFit, lo: float, hi: float) -> TrimReport:
    """Keep units with scores inside [lo, hi] in both arms (fixed-interval rule)."""
    if not (0.0 <= lo < hi <= 1.0):
        raise DomainError("need 0 <= lo < hi <= 1")
    keep = (fit.scores >= lo) & (fit.scores <= hi)
    report = _make_report("threshold", fit.w, keep, (lo, hi))
    if len(report.retained_treated) == 0 or len(report.retained_control) == 0:
        raise DegenerateTrimError("threshold trim emptied an arm")
    return report


def trim_dehejia(fit: PropensityFit) -> TrimReport:
    """Drop controls scoring below the minimum treated score; treated untouched."""
    if np.sum(fit.w == 1) == 0:
        raise DomainError("treated arm is empty")
    cut = float(np.min(fit.treated_scores))
    keep = (fit.w == 1) | (fit.scores >= cut)
    report = _make_report("dehejia", fit.w, keep, (cut,))
    if len(report.retained_control) == 0:
        raise DegenerateTrimError("dehejia trim removed every control")
    return report


def greedy_match_scores(score_t: np.ndarray, score_c: np.ndarray) -> np.ndarray:
    """Greedy 1:1 match without replacement on a scalar score.

    Treated are processed in descending score order; each takes the nearest
    still-available control, ties broken by lowest control index.  Returns,
    per treated unit (original order), the matched control index.
    """
    nt, nc = len(score_t), len(score_c)
    if nc < nt:
        raise InfeasibleMatchingError(f"{nt} treated but only {nc} controls")
    order = np.argsort(-score_t, kind="stable")
    alive = np.ones(nc, dtype=bool)
    out = np.empty(nt, dtype=np.int64)
    for t in order:
        d = np.abs(score_c - score_t[t])
        d[~alive] = np.inf
        best = int(np.argmin(d))  # argmin takes the first (lowest index) tie
        out[t] = best
        alive[best] = False
    return out


def _refit_and_match(sample: ObservationTable, seed: int,
                     forest_params: ForestParams) -> np.ndarray:
    """Re-estimate propensity in a trimmed sample and 1:1-match its controls.

    Returns row indices (into the sample) of the matched control set, ordered
    by the treated units they serve.
    """
    fit = estimate_propensity(sample, "forest", seed=seed, forest_params=forest_params)
    t_rows = sample.treated_idx
    c_rows = sample.control_idx
    picks = greedy_match_scores(fit.scores[t_rows], fit.scores[c_rows])
    return c_rows[picks]


def trim_paper_pipeline(nonexp: ObservationTable, exp_controls: ObservationTable,
                        threshold: float = 0.1, seed: int = 0,
                        forest_params: ForestParams | None = None,
                        ) -> tuple[ObservationTable, ObservationTable, TrimReport]:
    """Two-step trim-and-match against an experimental benchmark.

    Step 1 pools the nonexperimental sample with the experimental controls and
    scores every unit's probability of belonging to the experimental data with
    a probability forest (out-of-bag); units below the threshold are dropped,
    treated units included.  Step 2 re-estimates propensity scores within the
    trimmed nonexperimental sample and greedily 1:1-matches its controls to
    the retained treated units; the same refinement against the retained
    experimental controls yields a parallel benchmark sample.
    """
    if not 0.0 < threshold < 1.0:
        raise DomainError("threshold must lie in (0, 1)")
    if nonexp.schema.covariates != exp_controls.schema.covariates:
        raise DomainError("nonexperimental and experimental schemas must agree")
    params = forest_params if forest_params is not None else ForestParams()

    pooled_X = np.vstack([nonexp.X, exp_controls.X])
    member = np.concatenate([nonexp.w.astype(np.float64), np.ones(exp_controls.n)])
    m_params = replace(params, seed=_subseed(seed, 10))
    m_fit = fit_probability_forest(pooled_X, member, m_params)
    scores = clamp_scores(m_fit.predict_oob())

    keep = scores >= threshold
    keep_nonexp = keep[:nonexp.n]
    keep_expc = keep[nonexp.n:]
    t_keep = np.flatnonzero((nonexp.w == 1) & keep_nonexp)
    c_keep = np.flatnonzero((nonexp.w == 0) & keep_nonexp)
    if t_keep.size == 0:
        raise DegenerateTrimError("membership trim removed every treated unit")
    if c_keep.size < t_keep.size:
        raise InfeasibleMatchingError(
            f"only {c_keep.size} nonexperimental controls retained for "
            f"{t_keep.size} treated units")
    ec_keep = np.flatnonzero(keep_expc)
    if ec_keep.size < t_keep.size:
        raise InfeasibleMatchingError(
            f"only {ec_keep.size} experimental controls retained for "
            f"{t_keep.size} treated units")

    trimmed_pool = nonexp.subset(np.concatenate([t_keep, c_keep]))
    matched_rows = _refit_and_match(trimmed_pool, _subseed(seed, 11), params)
    kept_rows = np.concatenate([t_keep, c_keep])
    matched_c = kept_rows[matched_rows]
    trimmed_sample = nonexp.subset(np.concatenate([t_keep, matched_c]))

    treated_tab = nonexp.subset(t_keep)
    bench_pool = compose_sample(treated_tab, exp_controls.subset(ec_keep))
    bench_matched = _refit_and_match(bench_pool, _subseed(seed, 12), params)
    bench_sample = bench_pool.subset(
        np.concatenate([np.arange(t_keep.size, dtype=np.int64), bench_matched]))

    keep_final = np.zeros(nonexp.n, dtype=bool)
    keep_final[t_keep] = True
    keep_final[matched_c] = True
    report = _make_report("paper", nonexp.w, keep_final, (threshold,), seed=seed)
    return trimmed_sample, bench_sample, report


def standardized_mean_differences(sample: ObservationTable) -> dict[str, float]:
    """Per-covariate |mean difference| / pooled SD between the arms."""
    out = {}
    t = sample.X[sample.w == 1]
    c = sample.X[sample.w == 0]
    for j, name in enumerate(sample.schema.covariates):
        s2 = 0.5 * (np.var(t[:, j], ddof=1) + np.var(c[:, j], ddof=1))
        denom = np.sqrt(s2) if s2 > 0 else 1.0
        out[name] = float(abs(t[:, j].mean() - c[:, j].mean()) / denom)
    return out
