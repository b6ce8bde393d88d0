"""Placebo-outcome harness and experimental-benchmark comparison."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import (ROLE_COVARIATE, ROLE_OUTCOME, ROLE_TREATMENT,
                      CovariateSchema, ObservationTable)
from .errors import DomainError
from .estimators import AttEstimate, run_estimator


@dataclass(frozen=True)
class PlaceboSpec:
    """Pre-period outcome substitution: which column becomes the outcome and
    which covariates must be hidden from every downstream design matrix."""

    outcome: str = "re75"
    excluded: frozenset = frozenset({"re75", "u75"})
    retrim: bool = True       # rebuild trimmed samples without the excluded columns

    def __post_init__(self):
        object.__setattr__(self, "excluded", frozenset(self.excluded))
        if self.outcome not in self.excluded:
            raise DomainError("the placebo outcome itself must be excluded")


def make_placebo_sample(sample: ObservationTable, spec: PlaceboSpec) -> ObservationTable:
    """Swap the outcome for the placebo column and drop the excluded covariates."""
    covs = sample.schema.covariates
    if spec.outcome not in covs:
        raise DomainError(
            f"placebo outcome {spec.outcome!r} is not a covariate of this sample "
            f"(already transformed?)")
    y_new = sample.column(spec.outcome).copy()
    kept = [c for c in covs if c not in spec.excluded]
    X_new = np.column_stack([sample.column(c) for c in kept])
    names = (sample.schema.treatment,) + tuple(kept) + (spec.outcome,)
    roles = {c: ROLE_COVARIATE for c in kept}
    roles[sample.schema.treatment] = ROLE_TREATMENT
    roles[spec.outcome] = ROLE_OUTCOME
    schema = CovariateSchema(names=names, roles=roles, placebo_excluded=frozenset())
    return ObservationTable(schema, X_new, sample.w, y_new, sample.tags, sample.pos)


def assert_no_leak(samples) -> None:
    """Audit that no placebo outcome survives among any sample's covariates."""
    for tag, sample in samples:
        if sample.schema.outcome in sample.schema.covariates:
            raise DomainError(f"sample {tag!r} leaks its outcome into the design")


@dataclass(frozen=True)
class PlaceboResults:
    """Estimator-by-sample grid of effect estimates on the placebo outcome."""

    cells: dict  # sample tag -> estimator tag -> AttEstimate | {"error": str}

    def get(self, sample_tag: str, estimator_tag: str):
        return self.cells[sample_tag][estimator_tag]

    def to_rows(self):
        rows = []
        for stag in self.cells:
            for etag, cell in self.cells[stag].items():
                if isinstance(cell, AttEstimate):
                    rows.append(cell.to_dict())
                else:
                    rows.append({"estimator": etag, "sample": stag,
                                 "error": cell["error"]})
        return rows

    def to_json(self) -> str:
        return json.dumps(self.to_rows(), sort_keys=True, indent=2)


def run_placebo_suite(samples, estimators, seed: int = 0) -> PlaceboResults:
    """Run every estimator on every placebo-transformed sample.

    samples is a list of (tag, ObservationTable) already re-targeted at the
    placebo outcome (trimmed variants are rebuilt by the caller with the
    reduced covariate set before entering the grid).  Failed cells are
    recorded, not fatal.
    """
    assert_no_leak(samples)
    cells: dict = {}
    for stag, sample in samples:
        cells[stag] = {}
        for etag in estimators:
            try:
                cells[stag][etag] = run_estimator(etag, sample, seed=seed,
                                                  sample_tag=stag)
            except Exception as exc:  # cell-level isolation by design
                cells[stag][etag] = {"error": f"{type(exc).__name__}: {exc}"}
    return PlaceboResults(cells=cells)


@dataclass(frozen=True)
class BenchmarkDelta:
    """Gap between a nonexperimental estimate and its experimental benchmark."""

    nonexp: AttEstimate
    benchmark: AttEstimate
    delta: float
    ci_overlap: bool

    def to_dict(self):
        return {"nonexp": self.nonexp.to_dict(),
                "benchmark": self.benchmark.to_dict(),
                "delta": self.delta, "ci_overlap": self.ci_overlap}


def benchmark_delta(nonexp: AttEstimate, bench: AttEstimate) -> BenchmarkDelta:
    overlap = nonexp.ci_lo <= bench.ci_hi and bench.ci_lo <= nonexp.ci_hi
    return BenchmarkDelta(nonexp=nonexp, benchmark=bench,
                          delta=nonexp.point - bench.point, ci_overlap=overlap)
