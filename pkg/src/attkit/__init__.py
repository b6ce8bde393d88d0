"""attkit: ATT estimation with overlap diagnostics, trimming, and validation."""

from .dataset import (CovariateSchema, DescriptiveStats, ObservationTable,
                      compose_sample, derive_indicators, ldw_schema, load_table,
                      original_lalonde_schema, summarize)
from .dgp import CoverageReport, DgpConfig, DgpTruth, EffectSpec, generate, monte_carlo
from .estimators import (AttEstimate, NetParams, WeightVector, aipw_att,
                         balance_att, bootstrap_ci, diff_in_means, dml_att,
                         ipw_att, matching_att, outcome_model_att, run_estimator,
                         ESTIMATOR_TAGS, FOREST_TAGS)
from .forest import (CausalForestFit, ForestFit, ForestParams, fit_causal_forest,
                     fit_probability_forest, fit_regression_forest, predict)
from .heterogeneity import (CattComparison, CattProfile, catt_calibration,
                            compare_catt, estimate_catt)
from .matching import MatchSet, bias_corrected_att, match_knn
from .models import (LinearFit, LogitFit, NetFit, fit_elastic_net, fit_logit,
                     fit_ols)
from .overlap import (HistogramData, PropensityFit, TrimReport,
                      estimate_propensity, log_odds, overlap_histogram,
                      trim_dehejia, trim_paper_pipeline, trim_threshold)
from .validation import (BenchmarkDelta, PlaceboResults, PlaceboSpec,
                         benchmark_delta, make_placebo_sample, run_placebo_suite)

__version__ = "0.1.0"
