"""Conditional effects at treated units' covariate profiles (causal forest)."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .dataset import ObservationTable
from .errors import DomainError, PairingError
from .estimators import AttEstimate
from .forest import CausalForestFit, ForestParams, fit_causal_forest


@dataclass(frozen=True)
class CattProfile:
    """One conditional-effect estimate per retained treated unit."""

    keys: tuple[str, ...]
    profiles: np.ndarray          # treated covariate rows
    estimates: np.ndarray
    sample: str
    params: ForestParams
    seed: int

    def __post_init__(self):
        if len(self.keys) != len(self.estimates):
            raise DomainError("one estimate per treated unit is required")
        if not np.all(np.isfinite(self.estimates)):
            raise DomainError("conditional effect estimates must be finite")

    @property
    def range(self) -> tuple[float, float]:
        return float(self.estimates.min()), float(self.estimates.max())

    @property
    def share_negative(self) -> float:
        return float(np.mean(self.estimates < 0))


def estimate_catt(sample: ObservationTable, params: ForestParams | None = None,
                  seed: int = 0, fit: CausalForestFit | None = None) -> CattProfile:
    """Causal forest on the sample, evaluated at each treated unit's profile.

    Treated units are predicted out-of-bag so their own outcomes never enter
    their conditional-effect estimates.
    """
    if sample.n_treated == 0 or sample.n_control == 0:
        raise DomainError("both arms must be nonempty")
    params = params if params is not None else ForestParams()
    params = replace(params, seed=seed)
    if fit is None:
        fit = fit_causal_forest(sample.X, sample.w, sample.y, params)
    t_rows = sample.treated_idx
    tau, _ = fit.predict(sample.X[t_rows], oob_rows=t_rows)
    keys = tuple(np.asarray(sample.row_keys(), dtype=object)[t_rows])
    return CattProfile(keys=keys, profiles=sample.X[t_rows], estimates=tau,
                       sample=sample.source_tag, params=params, seed=seed)


@dataclass(frozen=True)
class CattComparison:
    """Paired experimental (x) vs nonexperimental (y) conditional effects."""

    keys: tuple[str, ...]
    x: np.ndarray
    y: np.ndarray
    att_pair: tuple[float, float] | None
    summary: dict

    def scatter_delim(self, delimiter: str = ",") -> str:
        lines = [delimiter.join(["key", "experimental", "nonexperimental"])]
        for k, a, b in zip(self.keys, self.x, self.y):
            lines.append(delimiter.join([k, repr(float(a)), repr(float(b))]))
        return "\n".join(lines) + "\n"

    def marginal_bins(self, n_bins: int = 30):
        """Shared-grid histogram data for the two marginal densities."""
        lo = float(min(self.x.min(), self.y.min()))
        hi = float(max(self.x.max(), self.y.max()))
        if hi <= lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, n_bins + 1)
        cx, _ = np.histogram(self.x, bins=edges)
        cy, _ = np.histogram(self.y, bins=edges)
        return edges, cx, cy

    def to_json(self) -> str:
        return json.dumps({"summary": self.summary,
                           "att_pair": list(self.att_pair) if self.att_pair else None,
                           "n_pairs": len(self.keys)}, sort_keys=True, indent=2)


def compare_catt(exp: CattProfile, nonexp: CattProfile,
                 att_pair: tuple[float, float] | None = None) -> CattComparison:
    """Pair the two profiles by treated-unit key and summarize their agreement."""
    pos = {k: i for i, k in enumerate(nonexp.keys)}
    missing = [k for k in exp.keys if k not in pos]
    extra = [k for k in nonexp.keys if k not in set(exp.keys)]
    if missing or extra:
        raise PairingError(
            f"profiles are keyed by different treated units; "
            f"missing={missing[:5]} extra={extra[:5]}")
    order = np.array([pos[k] for k in exp.keys])
    x = np.asarray(exp.estimates)
    y = np.asarray(nonexp.estimates)[order]
    if x.size > 1 and np.std(x) > 0 and np.std(y) > 0:
        corr = float(np.corrcoef(x, y)[0, 1])
    else:
        corr = 1.0 if np.allclose(x, y) else 0.0
    summary = {
        "experimental_range": [float(x.min()), float(x.max())],
        "nonexperimental_range": [float(y.min()), float(y.max())],
        "share_negative_experimental": float(np.mean(x < 0)),
        "share_negative_nonexperimental": float(np.mean(y < 0)),
        "correlation": corr,
    }
    return CattComparison(keys=exp.keys, x=x, y=y, att_pair=att_pair,
                          summary=summary)


@dataclass(frozen=True)
class CalibrationReport:
    """Internal consistency of mean conditional effects against the ATT."""

    mean_catt: float
    att_point: float
    att_se: float
    abs_diff: float
    flag: bool

    def to_dict(self):
        return {"mean_catt": self.mean_catt, "att_point": self.att_point,
                "att_se": self.att_se, "abs_diff": self.abs_diff,
                "flag": self.flag}


def catt_calibration(profile: CattProfile, att: AttEstimate) -> CalibrationReport:
    """Flag when the mean conditional effect strays beyond 2 SEs of the ATT."""
    mean_catt = float(np.mean(profile.estimates))
    diff = abs(mean_catt - att.point)
    return CalibrationReport(mean_catt=mean_catt, att_point=att.point,
                             att_se=att.se, abs_diff=diff,
                             flag=diff > 2.0 * att.se)
