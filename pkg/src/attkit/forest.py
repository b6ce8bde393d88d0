"""Honest subsampled forests: regression, probability, and causal variants.

Splits are placed using only the structure half of each tree's subsample;
leaf values come from the held-out honest half.  Identical seed, params and
data give bit-identical predictions regardless of worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _tree
from .errors import DomainError, PredictionError


@dataclass(frozen=True)
class ForestParams:
    trees: int = 2000
    subsample_fraction: float = 0.5
    honesty_fraction: float = 0.5
    min_leaf: int = 5
    split_tries: int | None = None  # default ceil(sqrt(p)) + 1
    seed: int = 0

    def __post_init__(self):
        if self.trees < 1:
            raise DomainError("trees must be >= 1")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise DomainError("subsample_fraction must lie in (0, 1]")
        if not 0.0 < self.honesty_fraction <= 1.0:
            raise DomainError("honesty_fraction must lie in (0, 1]")
        if self.min_leaf < 1:
            raise DomainError("min_leaf must be >= 1")

    def resolve_split_tries(self, p: int) -> int:
        if self.split_tries is not None:
            return max(1, min(self.split_tries, p))
        return min(p, int(np.ceil(np.sqrt(p))) + 1)


def _sizes(n: int, params: ForestParams) -> tuple[int, int]:
    subsample = max(2, int(round(n * params.subsample_fraction)))
    subsample = min(subsample, n)
    n_honest = int(round(subsample * params.honesty_fraction))
    n_honest = min(max(n_honest, 1), subsample - 1)
    return subsample, n_honest


class _ForestArrays:
    """Flat per-tree node storage shared by all forest kinds."""

    __slots__ = ("n_trees", "max_nodes", "feat", "thr", "left", "right",
                 "cnt", "sum_a", "sum_b", "cnt_t", "n_nodes", "membership")

    def __init__(self, n, n_trees, max_nodes):
        self.n_trees = n_trees
        self.max_nodes = max_nodes
        total = n_trees * max_nodes
        self.feat = np.full(total, _tree.LEAF, dtype=np.int32)
        self.thr = np.zeros(total, dtype=np.float64)
        self.left = np.zeros(total, dtype=np.int32)
        self.right = np.zeros(total, dtype=np.int32)
        self.cnt = np.zeros(total, dtype=np.int32)
        self.sum_a = np.zeros(total, dtype=np.float64)
        self.sum_b = np.zeros(total, dtype=np.float64)
        self.cnt_t = np.zeros(total, dtype=np.int32)
        self.n_nodes = np.zeros(n_trees, dtype=np.int64)
        self.membership = np.zeros((n, n_trees), dtype=np.int8)


def _build(X, ra, rb, wraw, mode, params: ForestParams) -> tuple[_ForestArrays, int, int]:
    n, p = X.shape
    subsample, n_honest = _sizes(n, params)
    if n_honest < params.min_leaf:
        raise DomainError(
            f"degenerate forest: honest half ({n_honest}) smaller than min_leaf "
            f"({params.min_leaf})")
    n_struct = subsample - n_honest
    max_leaves = max(1, n_struct // max(params.min_leaf, 1))
    max_nodes = 2 * max_leaves + 2
    arrays = _ForestArrays(n, params.trees, max_nodes)
    _tree.build_forest(
        X, ra, rb, wraw, mode, params.trees, subsample, n_honest,
        params.min_leaf, params.resolve_split_tries(p), params.seed, max_nodes,
        arrays.feat, arrays.thr, arrays.left, arrays.right, arrays.cnt,
        arrays.sum_a, arrays.sum_b, arrays.cnt_t, arrays.n_nodes,
        arrays.membership)
    return arrays, subsample, n_honest


class ForestFit:
    """Fitted regression or probability forest."""

    def __init__(self, kind, X, y, params, arrays, subsample, n_honest):
        self.kind = kind
        self.X_train = X
        self.y_train = y
        self.params = params
        self.n_features = X.shape[1]
        self._arrays = arrays
        self.subsample = subsample
        self.n_honest = n_honest

    @property
    def oob_available(self) -> bool:
        return self.subsample < self.X_train.shape[0]

    @property
    def membership(self) -> np.ndarray:
        """(n, trees) matrix: 0 out of subsample, 1 structure half, 2 honest half."""
        return self._arrays.membership

    def _predict(self, Xq, query_rows):
        a = self._arrays
        out = np.empty(Xq.shape[0], dtype=np.float64)
        _tree.predict_mean(Xq, a.n_trees, a.max_nodes, a.feat, a.thr, a.left,
                           a.right, a.cnt, a.sum_a, a.membership, query_rows, out)
        if np.any(np.isnan(out)):
            raise PredictionError("some queries reached no usable tree")
        if self.kind == "probability":
            np.clip(out, 0.0, 1.0, out=out)
        return out

    def predict(self, X_new) -> np.ndarray:
        X_new = np.ascontiguousarray(X_new, dtype=np.float64)
        if X_new.ndim != 2 or X_new.shape[1] != self.n_features:
            raise DomainError(
                f"query has {X_new.shape[1] if X_new.ndim == 2 else '?'} features, "
                f"forest was trained on {self.n_features}")
        if X_new.shape[0] == 0:
            return np.empty(0, dtype=np.float64)
        return self._predict(X_new, np.full(X_new.shape[0], -1, dtype=np.int64))

    def predict_oob(self) -> np.ndarray:
        if not self.oob_available:
            raise DomainError("out-of-bag predictions unavailable: subsample covers every unit")
        n = self.X_train.shape[0]
        return self._predict(self.X_train, np.arange(n, dtype=np.int64))


def fit_regression_forest(X, y, params: ForestParams) -> ForestFit:
    """Honest regression forest; leaf values are honest-half means."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = X.shape[0]
    if n < 2 * params.min_leaf:
        raise DomainError(f"need at least {2 * params.min_leaf} rows")
    zeros = np.zeros(n, dtype=np.float64)
    wraw = np.zeros(n, dtype=np.int8)
    arrays, subsample, n_honest = _build(X, y, zeros, wraw, 0, params)
    return ForestFit("regression", X, y, params, arrays, subsample, n_honest)


def fit_probability_forest(X, w, params: ForestParams) -> ForestFit:
    """Honest forest for Pr(w = 1 | x); predictions lie in [0, 1]."""
    w = np.ascontiguousarray(w, dtype=np.float64)
    if not np.all((w == 0) | (w == 1)):
        raise DomainError("labels must be binary")
    if w.min() == w.max():
        raise DomainError("both classes must be present")
    fit = fit_regression_forest(X, w, params)
    fit.kind = "probability"
    return fit


class CausalForestFit:
    """Causal forest over locally centered data.

    Centering subtracts out-of-bag forest predictions of the marginal outcome
    and treatment before the heterogeneity-seeking splits are placed.
    """

    def __init__(self, X, w, y, params, arrays, subsample, n_honest,
                 outcome_fit, treatment_fit, y_centered, w_centered):
        self.X_train = X
        self.w_train = w
        self.y_train = y
        self.params = params
        self.n_features = X.shape[1]
        self._arrays = arrays
        self.subsample = subsample
        self.n_honest = n_honest
        self.outcome_fit = outcome_fit
        self.treatment_fit = treatment_fit
        self.y_centered = y_centered
        self.w_centered = w_centered
        self._honest_csr = None

    @property
    def membership(self) -> np.ndarray:
        return self._arrays.membership

    def _query_rows(self, Xq, oob_rows):
        if oob_rows is None:
            return np.full(Xq.shape[0], -1, dtype=np.int64)
        return np.asarray(oob_rows, dtype=np.int64)

    def predict(self, X_new, oob_rows=None):
        """Per-profile effect estimates; only leaves with both arms contribute.

        Returns (tau, n_valid_trees).  Raises PredictionError if a profile
        reaches no valid leaf in any tree.
        """
        Xq = np.ascontiguousarray(X_new, dtype=np.float64)
        if Xq.ndim != 2 or Xq.shape[1] != self.n_features:
            raise DomainError("query feature count does not match training data")
        if Xq.shape[0] == 0:
            return np.empty(0), np.empty(0, dtype=np.int64)
        a = self._arrays
        tau = np.empty(Xq.shape[0], dtype=np.float64)
        n_valid = np.empty(Xq.shape[0], dtype=np.int64)
        _tree.predict_effect(Xq, a.n_trees, a.max_nodes, a.feat, a.thr, a.left,
                             a.right, a.cnt, a.sum_a, a.sum_b, a.cnt_t,
                             a.membership, self._query_rows(Xq, oob_rows),
                             tau, n_valid)
        if np.any(n_valid == 0):
            bad = np.flatnonzero(n_valid == 0)
            raise PredictionError(
                f"no valid leaf in any tree for {bad.size} profiles (first: row {bad[0]})")
        return tau, n_valid

    def _csr(self):
        if self._honest_csr is None:
            a = self._arrays
            n_trees = a.n_trees
            off = np.arange(n_trees + 1, dtype=np.int64) * self.n_honest
            units = np.empty(n_trees * self.n_honest, dtype=np.int64)
            unit_leaf = np.empty(n_trees * self.n_honest, dtype=np.int64)
            _tree.honest_leaf_assignment(self.X_train, n_trees, a.max_nodes,
                                         a.feat, a.thr, a.left, a.right,
                                         a.membership, off[:-1], units, unit_leaf)
            self._honest_csr = (off, units, unit_leaf)
        return self._honest_csr

    def se_proxy(self, X_new, tau, oob_rows=None) -> np.ndarray:
        """Rough per-profile uncertainty, treating forest weights as fixed."""
        Xq = np.ascontiguousarray(X_new, dtype=np.float64)
        off, units, unit_leaf = self._csr()
        a = self._arrays
        out = np.empty(Xq.shape[0], dtype=np.float64)
        _tree.effect_se_proxy(Xq, self.X_train, self.y_centered, self.w_centered,
                              np.asarray(tau, dtype=np.float64), a.n_trees,
                              a.max_nodes, a.feat, a.thr, a.left, a.right,
                              a.cnt, a.sum_b, a.cnt_t, a.membership, off, units,
                              unit_leaf, self._query_rows(Xq, oob_rows), out)
        return out


def _subseed(seed: int, k: int) -> int:
    return (int(seed) * 1000003 + k) % (2 ** 63 - 1)


def fit_causal_forest(X, w, y, params: ForestParams) -> CausalForestFit:
    """Local centering, then splits maximizing leaf effect heterogeneity."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    w = np.asarray(w)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = X.shape[0]
    if n < 4 * params.min_leaf:
        raise DomainError(f"need at least {4 * params.min_leaf} rows")
    wf = w.astype(np.float64)
    if wf.min() == wf.max():
        raise DomainError("both arms must be present")
    if params.subsample_fraction >= 1.0:
        raise DomainError("causal forest centering needs subsample_fraction < 1")
    m_fit = fit_regression_forest(X, y, replace(params, seed=_subseed(params.seed, 1)))
    e_fit = fit_probability_forest(X, wf, replace(params, seed=_subseed(params.seed, 2)))
    y_c = y - m_fit.predict_oob()
    w_c = wf - e_fit.predict_oob()
    ra = np.ascontiguousarray(w_c * y_c)
    rb = np.ascontiguousarray(w_c * w_c)
    arrays, subsample, n_honest = _build(
        X, ra, rb, w.astype(np.int8), 1,
        replace(params, seed=_subseed(params.seed, 3)))
    return CausalForestFit(X, w.astype(np.int8), y, params, arrays, subsample,
                           n_honest, m_fit, e_fit, y_c, w_c)


def predict(fit, X_new, oob: bool = False):
    """Unified prediction entry point.

    With oob=True, X_new must be exactly the training matrix; each row is then
    predicted using only trees whose subsample excluded it.
    """
    X_new = np.ascontiguousarray(X_new, dtype=np.float64)
    if oob:
        if X_new.shape != fit.X_train.shape or not np.array_equal(X_new, fit.X_train):
            raise DomainError("oob=True requires the training rows themselves")
        rows = np.arange(X_new.shape[0], dtype=np.int64)
        if isinstance(fit, CausalForestFit):
            return fit.predict(X_new, oob_rows=rows)[0]
        return fit.predict_oob()
    if isinstance(fit, CausalForestFit):
        return fit.predict(X_new)[0]
    return fit.predict(X_new)
