import numpy as np
import pytest

from attkit.errors import (DegenerateTrimError, DomainError,
                           InfeasibleMatchingError)
from attkit.forest import ForestParams
from attkit.overlap import (HistogramData, PropensityFit, estimate_propensity,
                            greedy_match_scores, log_odds, overlap_histogram,
                            standardized_mean_differences, trim_dehejia,
                            trim_paper_pipeline, trim_threshold)

from conftest import make_table

FP = ForestParams(trees=300)


def fit_from(scores, w):
    return PropensityFit(scores=np.asarray(scores, dtype=float), method="logit",
                         oob=False, w=np.asarray(w))


def test_log_odds_values():
    assert log_odds(0.5) == pytest.approx(0.0)
    assert log_odds(0.05) == pytest.approx(-2.944, abs=5e-3)
    for e in (0.1, 0.37, 0.92):
        assert log_odds(e) == pytest.approx(-log_odds(1 - e), abs=1e-12)
    with pytest.raises(DomainError):
        log_odds(0.0)
    with pytest.raises(DomainError):
        log_odds(1.0)


def test_propensity_coin_flip_concentrates():
    rng = np.random.default_rng(0)
    n = 4000
    X = rng.normal(size=(n, 3))
    w = (rng.random(n) < 0.5).astype(int)
    tab = make_table(X, w, rng.normal(size=n))
    fit = estimate_propensity(tab, "forest", seed=1, forest_params=FP)
    assert fit.oob
    share = np.mean((fit.scores > 0.35) & (fit.scores < 0.65))
    assert share > 0.9


def test_propensity_duplicate_unit_same_logit_score():
    X = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 1.0], [3.0, 0.5]])
    w = np.array([1, 1, 0, 0])
    tab = make_table(X, w, np.zeros(4))
    fit = estimate_propensity(tab, "logit", seed=0)
    assert fit.scores[0] == fit.scores[1]


def test_histogram_counts_preserved():
    scores = np.concatenate([np.full(30, 0.5), np.full(50, 0.2)])
    w = np.array([1] * 30 + [0] * 50)
    hist = overlap_histogram(fit_from(scores, w), bin_width=0.5)
    assert hist.treated_counts.sum() == 30
    assert hist.control_counts.sum() == 50
    # all-0.5 treated fall in a single occupied bin at log-odds 0
    assert np.count_nonzero(hist.treated_counts) == 1
    with pytest.raises(DomainError):
        overlap_histogram(fit_from(scores, w), bin_width=0.0)


def test_trim_threshold_rule_and_identity():
    fit = fit_from([0.05, 0.5, 0.95, 0.4], [1, 1, 0, 0])
    rep = trim_threshold(fit, 0.1, 0.9)
    assert list(rep.retained_treated) == [1]
    assert list(rep.retained_control) == [3]
    assert rep.dropped_treated == 1 and rep.dropped_control == 1
    full = trim_threshold(fit, 0.0, 1.0)
    assert len(full.retained_treated) == 2 and len(full.retained_control) == 2


def test_trim_threshold_monotone_widening():
    rng = np.random.default_rng(1)
    scores = np.clip(rng.random(200), 0.01, 0.99)
    w = (rng.random(200) < 0.5).astype(int)
    fit = fit_from(scores, w)
    narrow = trim_threshold(fit, 0.2, 0.8)
    wide = trim_threshold(fit, 0.1, 0.9)
    assert set(narrow.retained_treated) <= set(wide.retained_treated)
    assert set(narrow.retained_control) <= set(wide.retained_control)


def test_trim_threshold_degenerate_errors():
    fit = fit_from([0.5, 0.05], [1, 0])
    with pytest.raises(DegenerateTrimError):
        trim_threshold(fit, 0.1, 0.9)


def test_trim_report_partitions_arms():
    rng = np.random.default_rng(2)
    scores = np.clip(rng.random(100), 0.01, 0.99)
    w = (rng.random(100) < 0.4).astype(int)
    fit = fit_from(scores, w)
    rep = trim_threshold(fit, 0.2, 0.9)
    assert len(rep.retained_treated) + rep.dropped_treated == (w == 1).sum()
    assert len(rep.retained_control) + rep.dropped_control == (w == 0).sum()


def test_trim_dehejia_rule():
    fit = fit_from([0.2, 0.6, 0.1, 0.3], [1, 1, 0, 0])
    rep = trim_dehejia(fit)
    assert list(rep.retained_control) == [3]
    assert rep.dropped_treated == 0
    # all controls above treated min: identity
    fit2 = fit_from([0.2, 0.6, 0.25, 0.3], [1, 1, 0, 0])
    rep2 = trim_dehejia(fit2)
    assert len(rep2.retained_control) == 2


def test_greedy_match_descending_order_and_ties():
    # treated processed in descending score order; ties -> lowest control index
    st = np.array([0.3, 0.9])
    sc = np.array([0.9, 0.9, 0.3, 0.3])
    picks = greedy_match_scores(st, sc)
    assert picks[1] == 0     # highest treated first, takes control 0 (tie -> lowest)
    assert picks[0] == 2
    with pytest.raises(InfeasibleMatchingError):
        greedy_match_scores(np.array([0.1, 0.2, 0.3]), np.array([0.5]))


def _two_population_tables(rng, n_nonexp=600, n_exp_c=150, n_t=120, shift=2.0):
    """Treated+exp controls share a law; nonexp controls shifted away."""
    Xt = rng.normal(size=(n_t, 3))
    Xe = rng.normal(size=(n_exp_c, 3))
    Xn = rng.normal(size=(n_nonexp, 3)) + shift
    yt = rng.normal(size=n_t) + 5
    ye = rng.normal(size=n_exp_c)
    yn = rng.normal(size=n_nonexp)
    nonexp = make_table(np.vstack([Xt, Xn]),
                        np.array([1] * n_t + [0] * n_nonexp),
                        np.concatenate([yt, yn]))
    expc = make_table(Xe, np.zeros(n_exp_c, dtype=int), ye)
    return nonexp, expc


def test_paper_pipeline_identical_distributions_trim_little():
    rng = np.random.default_rng(3)
    nonexp, expc = _two_population_tables(rng, shift=0.0)
    trimmed, bench, rep = trim_paper_pipeline(nonexp, expc, threshold=0.1,
                                              seed=7, forest_params=FP)
    # same law everywhere: hardly any treated dropped
    assert len(rep.retained_treated) >= 0.9 * nonexp.n_treated
    assert trimmed.n_control == trimmed.n_treated            # 1:1 matching
    assert bench.n_control == bench.n_treated


def test_paper_pipeline_shifted_controls_trim_heavily():
    rng = np.random.default_rng(4)
    # mixture controls: a mass far away plus an overlapping tail
    n_t, n_exp_c = 120, 150
    Xt = rng.normal(size=(n_t, 3))
    Xe = rng.normal(size=(n_exp_c, 3))
    far = rng.normal(size=(1500, 3)) + 3.0
    near = rng.normal(size=(500, 3))
    Xn = np.vstack([far, near])
    nonexp = make_table(np.vstack([Xt, Xn]),
                        np.array([1] * n_t + [0] * 2000),
                        rng.normal(size=n_t + 2000))
    expc = make_table(Xe, np.zeros(n_exp_c, dtype=int), rng.normal(size=n_exp_c))
    trimmed, bench, rep = trim_paper_pipeline(nonexp, expc, threshold=0.1,
                                              seed=7, forest_params=FP)
    # the far mass is mostly dropped; retained+dropped partitions the arm
    assert rep.dropped_control > 0.5 * nonexp.n_control
    assert len(rep.retained_control) + rep.dropped_control == nonexp.n_control
    assert trimmed.n_treated == len(rep.retained_treated)
    assert trimmed.n_control == trimmed.n_treated
    assert bench.n_treated == trimmed.n_treated
    smd_before = standardized_mean_differences(nonexp)
    smd_after = standardized_mean_differences(trimmed)
    assert np.mean(list(smd_after.values())) < np.mean(list(smd_before.values()))


def test_paper_pipeline_infeasible_when_controls_run_out():
    rng = np.random.default_rng(8)
    nonexp, expc = _two_population_tables(rng, n_nonexp=400, shift=4.0)
    with pytest.raises(InfeasibleMatchingError):
        trim_paper_pipeline(nonexp, expc, threshold=0.1, seed=7, forest_params=FP)


def test_paper_pipeline_threshold_validation():
    rng = np.random.default_rng(5)
    nonexp, expc = _two_population_tables(rng)
    with pytest.raises(DomainError):
        trim_paper_pipeline(nonexp, expc, threshold=0.0, seed=1)


def test_precision_ratio_footnote_arithmetic():
    # the trim-to-equal-arms ratio: a modest increase despite a 99% reduction
    ratio = np.sqrt(1 / 185 + 1 / 185) / np.sqrt(1 / 185 + 1 / 15922)
    assert ratio == pytest.approx(1.406, abs=0.01)
    assert ratio < 1.5
    # keeping the experimental-control count instead lands on the ~1.3 figure
    ratio_280 = np.sqrt(1 / 185 + 1 / 280) / np.sqrt(1 / 185 + 1 / 15922)
    assert ratio_280 == pytest.approx(1.3, abs=0.03)
