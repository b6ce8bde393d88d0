"""Ingestion of job-training sample files and arm-wise descriptive statistics.

Files are delimiter-separated text with a header row, one row per person,
following the column order of the public distribution (treat, age, education,
black, hispanic, married, nodegree, re74, re75, re78).  Earnings columns are
named ``re<year>``; zero-earnings indicators ``u<year>`` are derived, not
stored in the files.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError, SchemaError

ROLE_COVARIATE = "covariate"
ROLE_TREATMENT = "treatment"
ROLE_OUTCOME = "outcome"
ROLE_PLACEBO_OUTCOME = "placebo-outcome"
ROLE_ID = "id"

_ROLES = {ROLE_COVARIATE, ROLE_TREATMENT, ROLE_OUTCOME, ROLE_PLACEBO_OUTCOME, ROLE_ID}

_EARNINGS_RE = re.compile(r"^re(\d+)$")

TAG_EXPERIMENTAL_TREATED = "experimental-treated"
TAG_EXPERIMENTAL_CONTROL = "experimental-control"
TAG_CPS = "cps"
TAG_PSID = "psid"
TAG_SYNTHETIC = "synthetic"


def is_earnings_column(name: str) -> bool:
    return _EARNINGS_RE.match(name) is not None


def indicator_name(earnings_column: str) -> str:
    """u74 for re74, u75 for re75, etc."""
    m = _EARNINGS_RE.match(earnings_column)
    if m is None:
        raise ValueError(f"{earnings_column!r} is not an earnings column")
    return "u" + m.group(1)


@dataclass(frozen=True)
class CovariateSchema:
    """Ordered column names with per-column roles.

    Exactly one column carries the treatment role and exactly one the outcome
    role.  ``placebo_excluded`` lists the covariates dropped when the table is
    re-targeted at a pre-period placebo outcome.
    """

    names: tuple[str, ...]
    roles: dict[str, str]
    placebo_excluded: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "placebo_excluded", frozenset(self.placebo_excluded))
        if len(set(self.names)) != len(self.names):
            raise SchemaError("duplicate column names in schema")
        if set(self.roles) != set(self.names):
            raise SchemaError("roles must be given for exactly the schema columns")
        bad = {r for r in self.roles.values() if r not in _ROLES}
        if bad:
            raise SchemaError(f"unknown roles: {sorted(bad)}")
        if sum(r == ROLE_TREATMENT for r in self.roles.values()) != 1:
            raise SchemaError("schema must have exactly one treatment column")
        if sum(r == ROLE_OUTCOME for r in self.roles.values()) != 1:
            raise SchemaError("schema must have exactly one outcome column")
        # Indicators derivable from earnings columns count as prospective covariates.
        allowed = set(self.covariates) | {
            indicator_name(c) for c in self.covariates if is_earnings_column(c)
        }
        stray = self.placebo_excluded - allowed
        if stray:
            raise SchemaError(f"placebo_excluded names unknown covariates: {sorted(stray)}")

    @property
    def covariates(self) -> tuple[str, ...]:
        return tuple(n for n in self.names if self.roles[n] == ROLE_COVARIATE)

    @property
    def treatment(self) -> str:
        return next(n for n in self.names if self.roles[n] == ROLE_TREATMENT)

    @property
    def outcome(self) -> str:
        return next(n for n in self.names if self.roles[n] == ROLE_OUTCOME)

    def covariate_index(self, name: str) -> int:
        try:
            return self.covariates.index(name)
        except ValueError:
            raise SchemaError(f"{name!r} is not a covariate of this schema") from None

    def fingerprint(self) -> str:
        return "|".join(self.covariates)


def ldw_schema() -> CovariateSchema:
    """Schema of the re74-subset files (ten covariates once u74/u75 are derived)."""
    names = ("treat", "age", "education", "black", "hispanic", "married",
             "nodegree", "re74", "re75", "re78")
    roles = {n: ROLE_COVARIATE for n in names}
    roles["treat"] = ROLE_TREATMENT
    roles["re78"] = ROLE_OUTCOME
    return CovariateSchema(names=names, roles=roles,
                           placebo_excluded=frozenset({"re75", "u75"}))


def original_lalonde_schema() -> CovariateSchema:
    """Schema of the original male-sample files, which lack 1974 earnings."""
    names = ("treat", "age", "education", "black", "hispanic", "married",
             "nodegree", "re75", "re78")
    roles = {n: ROLE_COVARIATE for n in names}
    roles["treat"] = ROLE_TREATMENT
    roles["re78"] = ROLE_OUTCOME
    return CovariateSchema(names=names, roles=roles,
                           placebo_excluded=frozenset({"re75"}))


class ObservationTable:
    """Immutable rectangular unit-level sample.

    X holds the covariates in schema order (dollars for earnings, {0,1} for
    indicators, years for age/education), w the binary treatment, y the
    outcome.  Row identity is (source tag, positional index in the source
    file); both are retained through composition and subsetting.
    """

    __slots__ = ("schema", "X", "w", "y", "tags", "pos")

    def __init__(self, schema: CovariateSchema, X, w, y, tags, pos):
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        w = np.asarray(w, dtype=np.int8)
        y = np.asarray(y, dtype=np.float64)
        tags = np.asarray(tags, dtype=object)
        pos = np.asarray(pos, dtype=np.int64)
        n = X.shape[0]
        if X.ndim != 2 or X.shape[1] != len(schema.covariates):
            raise SchemaError("X must be n x p with p = number of schema covariates")
        if not (len(w) == len(y) == len(tags) == len(pos) == n):
            raise SchemaError("column lengths disagree")
        self._check_values(schema, X, w, y)
        for arr in (X, w, y, tags, pos):
            arr.flags.writeable = False
        self.schema = schema
        self.X = X
        self.w = w
        self.y = y
        self.tags = tags
        self.pos = pos

    @staticmethod
    def _check_values(schema, X, w, y):
        if not np.all(np.isfinite(X)):
            raise DomainError("covariates contain missing or non-finite values")
        if not np.all(np.isfinite(y)):
            raise DomainError("outcome contains missing or non-finite values")
        if not np.all((w == 0) | (w == 1)):
            raise DomainError("treatment values must be 0 or 1")
        covs = schema.covariates
        for j, name in enumerate(covs):
            if is_earnings_column(name) and np.any(X[:, j] < 0):
                row = int(np.argmax(X[:, j] < 0))
                raise DomainError(f"negative earnings in column {name!r} at data row {row + 1}")
        if is_earnings_column(schema.outcome) and np.any(y < 0):
            row = int(np.argmax(y < 0))
            raise DomainError(f"negative earnings in outcome column at data row {row + 1}")
        # u<year> must equal 1{re<year> == 0} wherever both columns exist.
        for j, name in enumerate(covs):
            if not is_earnings_column(name):
                continue
            ind = indicator_name(name)
            if ind in covs:
                k = covs.index(ind)
                expect = (X[:, j] == 0.0).astype(np.float64)
                if not np.array_equal(X[:, k], expect):
                    row = int(np.argmax(X[:, k] != expect))
                    raise DomainError(
                        f"indicator {ind!r} inconsistent with {name!r} at data row {row + 1}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_treated(self) -> int:
        return int(np.sum(self.w == 1))

    @property
    def n_control(self) -> int:
        return int(np.sum(self.w == 0))

    @property
    def treated_idx(self):
        return np.flatnonzero(self.w == 1)

    @property
    def control_idx(self):
        return np.flatnonzero(self.w == 0)

    @property
    def source_tag(self) -> str:
        seen = []
        for t in self.tags:
            if t not in seen:
                seen.append(t)
        return "+".join(seen)

    def column(self, name: str):
        return self.X[:, self.schema.covariate_index(name)]

    def row_keys(self):
        """Stable per-row identity: 'tag:position-in-source-file'."""
        return [f"{t}:{p}" for t, p in zip(self.tags, self.pos)]

    def subset(self, rows) -> "ObservationTable":
        rows = np.asarray(rows, dtype=np.int64)
        return ObservationTable(self.schema, self.X[rows], self.w[rows],
                                self.y[rows], self.tags[rows], self.pos[rows])

    def __repr__(self):
        return (f"ObservationTable(n={self.n}, treated={self.n_treated}, "
                f"controls={self.n_control}, source={self.source_tag!r})")


@dataclass(frozen=True)
class ColumnMoments:
    mean: float
    sd: float | None  # None marks an undefined SD (single-row arm)


@dataclass(frozen=True)
class DescriptiveStats:
    """Arm-wise column means and standard deviations (n-1 denominator)."""

    columns: tuple[str, ...]
    by_arm: dict[str, dict[str, ColumnMoments]]
    n_treated: int
    n_control: int

    def to_json(self) -> str:
        payload = {
            "columns": list(self.columns),
            "n_treated": self.n_treated,
            "n_control": self.n_control,
            "stats": {
                arm: {c: {"mean": m.mean, "sd": m.sd} for c, m in cols.items()}
                for arm, cols in self.by_arm.items()
            },
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def to_delim(self, delimiter: str = ",") -> str:
        lines = [delimiter.join(["column", "arm", "mean", "sd"])]
        for arm in sorted(self.by_arm):
            for c in self.columns:
                m = self.by_arm[arm][c]
                sd = "" if m.sd is None else repr(m.sd)
                lines.append(delimiter.join([c, arm, repr(m.mean), sd]))
        return "\n".join(lines) + "\n"


def _sniff_delimiter(header_line: str) -> str | None:
    for d in (",", "\t", ";"):
        if d in header_line:
            return d
    return None  # whitespace


def load_table(path, schema: CovariateSchema, source_tag: str | None = None) -> ObservationTable:
    """Read a delimiter-separated file with header into an ObservationTable.

    Row order is preserved.  A missing column raises SchemaError naming it; an
    unparseable cell raises ParseError with its row and column address.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no such file: {path}")
    tag = source_tag if source_tag is not None else path.stem
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.strip():
            raise SchemaError(f"{path}: empty file")
        delim = _sniff_delimiter(first)
        header = first.split(delim) if delim else first.split()
        header = [h.strip() for h in header]
        missing = [c for c in schema.names if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column {missing[0]!r}")
        extra = [c for c in header if c not in schema.names]
        if extra:
            raise SchemaError(f"{path}: unexpected column {extra[0]!r}")
        if tuple(header) != schema.names:
            raise SchemaError(f"{path}: column order {header} does not match schema")
        if delim:
            rows = list(csv.reader(fh, delimiter=delim))
        else:
            rows = [line.split() for line in fh if line.strip()]

    ncol = len(schema.names)
    data = np.empty((len(rows), ncol), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != ncol:
            raise ParseError(f"{path}: data row {i + 1} has {len(row)} cells, expected {ncol}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: data row {i + 1}, column {schema.names[j]!r}: "
                    f"cannot parse {cell!r}") from None
        if not np.all(np.isfinite(data[i])):
            j = int(np.argmax(~np.isfinite(data[i])))
            raise ParseError(
                f"{path}: data row {i + 1}, column {schema.names[j]!r}: non-finite value")

    col = {name: data[:, k] for k, name in enumerate(schema.names)}
    X = np.column_stack([col[c] for c in schema.covariates]) if schema.covariates \
        else np.empty((len(rows), 0))
    w = col[schema.treatment]
    if not np.all((w == 0) | (w == 1)):
        i = int(np.argmax((w != 0) & (w != 1)))
        raise DomainError(f"{path}: data row {i + 1}: treatment value {w[i]!r} not in {{0,1}}")
    y = col[schema.outcome]
    n = len(rows)
    return ObservationTable(schema, X, w, y,
                            tags=np.array([tag] * n, dtype=object),
                            pos=np.arange(n, dtype=np.int64))


def derive_indicators(table: ObservationTable) -> ObservationTable:
    """Append u<year> = 1{re<year> = 0} for every pre-period earnings covariate.

    Idempotent: existing indicator columns are verified instead of appended.
    """
    schema = table.schema
    covs = schema.covariates
    new_cols = []
    new_names = []
    for name in covs:
        if not is_earnings_column(name):
            continue
        ind = indicator_name(name)
        if ind in covs:
            continue  # verified by the table constructor
        new_names.append(ind)
        new_cols.append((table.column(name) == 0.0).astype(np.float64))
    if not new_names:
        return table
    names = schema.names + tuple(new_names)
    roles = dict(schema.roles)
    for ind in new_names:
        roles[ind] = ROLE_COVARIATE
    new_schema = CovariateSchema(names=names, roles=roles,
                                 placebo_excluded=schema.placebo_excluded)
    X = np.column_stack([table.X] + new_cols)
    return ObservationTable(new_schema, X, table.w, table.y, table.tags, table.pos)


def compose_sample(treated: ObservationTable, controls: ObservationTable) -> ObservationTable:
    """Stack a treated-only table on top of a control-only table."""
    if treated.schema.names != controls.schema.names or treated.schema.roles != controls.schema.roles:
        differing = sorted(set(treated.schema.names) ^ set(controls.schema.names))
        if not differing:
            differing = sorted(n for n in treated.schema.names
                               if treated.schema.roles[n] != controls.schema.roles[n])
        raise SchemaError(f"incompatible schemas; differing columns: {differing}")
    if treated.n == 0 or controls.n == 0:
        raise DomainError("compose_sample requires nonempty treated and control tables")
    if not np.all(treated.w == 1):
        raise DomainError("treated table contains control rows")
    if not np.all(controls.w == 0):
        raise DomainError("control table contains treated rows")
    return ObservationTable(
        treated.schema,
        np.vstack([treated.X, controls.X]),
        np.concatenate([treated.w, controls.w]),
        np.concatenate([treated.y, controls.y]),
        np.concatenate([treated.tags, controls.tags]),
        np.concatenate([treated.pos, controls.pos]),
    )


def summarize(table: ObservationTable) -> DescriptiveStats:
    """Arm-wise means and SDs for the covariates and the outcome."""
    if table.n == 0:
        raise DomainError("cannot summarize an empty table")
    columns = table.schema.covariates + (table.schema.outcome,)
    mat = np.column_stack([table.X, table.y])
    by_arm: dict[str, dict[str, ColumnMoments]] = {}
    for arm, mask in (("treated", table.w == 1), ("control", table.w == 0)):
        sub = mat[mask]
        stats = {}
        for j, name in enumerate(columns):
            if sub.shape[0] == 0:
                continue
            mean = float(np.mean(sub[:, j]))
            sd = float(np.std(sub[:, j], ddof=1)) if sub.shape[0] > 1 else None
            stats[name] = ColumnMoments(mean=mean, sd=sd)
        if stats:
            by_arm[arm] = stats
    return DescriptiveStats(columns=columns, by_arm=by_arm,
                            n_treated=table.n_treated, n_control=table.n_control)
