"""Cohort data model, CSV ingestion, and synthetic cohort generation.

Missing cells are NaN in the float matrix. NaN is never a legal observed
value, so it is an unambiguous marker even in 0/1 columns.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CalibrationError,
    ConfigError,
    CsvParseError,
    SchemaMismatchError,
    StratificationError,
)

CONTINUOUS = "continuous"
BINARY = "binary"
OUTCOME = "outcome"
ROW_ID = "row_id"

# Figure-1 style extraction counts, kept for documentation and reports.
EXTRACTION_FLOW = (
    ("ICD-9 heart failure, age > 18", 13389),
    ("no ICU admission", -162),
    ("missing NT-proBNP", -4871),
    ("missing echocardiography", -7179),
    ("final cohort", 1177),
)
DEFAULT_OUTCOME_RATE = 0.10


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    units: str = ""
    mean: float | None = None
    std: float | None = None
    prevalence: float | None = None

    def __post_init__(self):
        if self.kind == CONTINUOUS:
            if self.prevalence is not None:
                raise ConfigError(f"{self.name}: continuous feature cannot carry a prevalence")
            if (self.mean is None) != (self.std is None):
                raise ConfigError(f"{self.name}: mean and std must be given together")
            if self.std is not None and not self.std >= 0:
                raise ConfigError(f"{self.name}: std must be >= 0")
        elif self.kind == BINARY:
            if self.mean is not None or self.std is not None:
                raise ConfigError(f"{self.name}: binary feature cannot carry mean/std")
            if self.prevalence is not None and not 0.0 <= self.prevalence <= 1.0:
                raise ConfigError(f"{self.name}: prevalence must lie in [0, 1]")
        else:
            raise ConfigError(f"{self.name}: unknown kind {self.kind!r}")

    @property
    def is_binary(self) -> bool:
        return self.kind == BINARY

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "units": self.units,
            "mean": self.mean,
            "std": self.std,
            "prevalence": self.prevalence,
        }


def make_schema(specs: Iterable[FeatureSpec]) -> tuple[FeatureSpec, ...]:
    specs = tuple(specs)
    names = [s.name for s in specs]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigError(f"duplicate feature names in schema: {dupes}")
    if OUTCOME in names or ROW_ID in names:
        raise ConfigError(f"'{OUTCOME}' and '{ROW_ID}' are reserved column names")
    return specs


def schema_from_json(records: Sequence[dict]) -> tuple[FeatureSpec, ...]:
    out = []
    for rec in records:
        out.append(
            FeatureSpec(
                name=rec["name"],
                kind=rec["kind"],
                units=rec.get("units") or "",
                mean=rec.get("mean"),
                std=rec.get("std"),
                prevalence=rec.get("prevalence"),
            )
        )
    return make_schema(out)


def load_schema(path: str | Path | None = None) -> tuple[FeatureSpec, ...]:
    """Read a schema JSON file; with no path, the bundled heart-failure schema."""
    if path is None:
        text = resources.files("hfmort.data").joinpath("hf_schema.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return schema_from_json(json.loads(text))


def write_schema(schema: Sequence[FeatureSpec], path: str | Path) -> None:
    Path(path).write_text(json.dumps([s.to_dict() for s in schema], indent=1) + "\n", "utf-8")


@dataclass(frozen=True, eq=False)
class Cohort:
    """Immutable feature matrix + binary outcome + schema.

    ``X`` is n x p float64 with NaN for missing cells; ``y`` is float64 in
    {0, 1, NaN}.
    """

    schema: tuple
    X: np.ndarray
    y: np.ndarray
    row_ids: np.ndarray

    def __post_init__(self):
        schema = make_schema(self.schema)
        X = np.array(self.X, dtype=np.float64, copy=True)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, len(schema))
        y = np.array(self.y, dtype=np.float64, copy=True).reshape(-1)
        row_ids = np.array([str(r) for r in self.row_ids], dtype=object)
        if X.ndim != 2 or X.shape[1] != len(schema):
            raise SchemaMismatchError(
                f"matrix width {X.shape[-1] if X.ndim else 0} does not match schema length {len(schema)}"
            )
        if len(y) != X.shape[0] or len(row_ids) != X.shape[0]:
            raise SchemaMismatchError("X, y and row_ids must have the same number of rows")
        if len(set(row_ids)) != len(row_ids):
            raise SchemaMismatchError("row_ids must be unique")
        ok_y = np.isnan(y) | (y == 0) | (y == 1)
        if not ok_y.all():
            raise SchemaMismatchError("outcome must be 0, 1 or missing")
        for j, spec in enumerate(schema):
            if spec.is_binary:
                col = X[:, j]
                bad = ~(np.isnan(col) | (col == 0) | (col == 1))
                if bad.any():
                    i = int(np.argmax(bad))
                    raise SchemaMismatchError(
                        f"binary column {spec.name!r} holds {col[i]!r} at row {row_ids[i]}"
                    )
        for arr in (X, y, row_ids):
            arr.setflags(write=False)
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "row_ids", row_ids)

    @classmethod
    def from_arrays(cls, X, y, names: Sequence[str] | None = None, row_ids=None) -> "Cohort":
        """Cohort of continuous features without summary statistics."""
        X = np.asarray(X, dtype=float)
        names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
        ids = row_ids if row_ids is not None else [f"r{i}" for i in range(X.shape[0])]
        return cls(tuple(FeatureSpec(nm, CONTINUOUS) for nm in names), X, y, ids)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def feature_names(self) -> list[str]:
        return [s.name for s in self.schema]

    @property
    def binary_mask(self) -> np.ndarray:
        return np.array([s.is_binary for s in self.schema], dtype=bool)

    @property
    def continuous_mask(self) -> np.ndarray:
        return ~self.binary_mask

    def index_of(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise SchemaMismatchError(f"feature {name!r} not in schema") from None

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.index_of(name)]

    def n_missing(self) -> int:
        return int(np.isnan(self.X).sum())

    def class_counts(self) -> tuple[int, int]:
        return int((self.y == 0).sum()), int((self.y == 1).sum())

    def take(self, idx) -> "Cohort":
        idx = np.asarray(idx)
        return Cohort(self.schema, self.X[idx], self.y[idx], self.row_ids[idx])

    def select_features(self, names: Sequence[str]) -> "Cohort":
        cols = [self.index_of(n) for n in names]
        return Cohort(tuple(self.schema[c] for c in cols), self.X[:, cols], self.y, self.row_ids)

    def drop_features(self, names: Iterable[str]) -> "Cohort":
        names = set(names)
        for n in names:
            self.index_of(n)
        return self.select_features([f for f in self.feature_names if f not in names])

    def with_values(self, X=None, y=None, row_ids=None) -> "Cohort":
        return Cohort(
            self.schema,
            self.X if X is None else X,
            self.y if y is None else y,
            self.row_ids if row_ids is None else row_ids,
        )

    def concat(self, other: "Cohort") -> "Cohort":
        if [s.name for s in other.schema] != self.feature_names:
            raise SchemaMismatchError("cannot concatenate cohorts with different schemas")
        return Cohort(
            self.schema,
            np.vstack([self.X, other.X]),
            np.concatenate([self.y, other.y]),
            np.concatenate([self.row_ids, other.row_ids]),
        )


# --------------------------------------------------------------------------- CSV


def _parse_cell(text: str) -> float:
    text = text.strip()
    if not text:
        return math.nan
    try:
        v = float(text)
    except ValueError:
        return math.nan
    return v if math.isfinite(v) else math.nan


def load_csv(path: str | Path, schema: Sequence[FeatureSpec]) -> Cohort:
    """Read a cohort CSV, reordering columns to match ``schema``.

    Columns not named in the schema (other than ``outcome`` and ``row_id``)
    are ignored. Empty or unparseable continuous cells become missing.
    """
    schema = make_schema(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaMismatchError(f"{path}: empty file, no header row") from None
        rows = list(reader)
    missing_cols = [s.name for s in schema if s.name not in header]
    if OUTCOME not in header:
        missing_cols.append(OUTCOME)
    if missing_cols:
        raise SchemaMismatchError(f"{path}: missing required column(s) {missing_cols}")
    pos = {h: i for i, h in enumerate(header)}
    id_pos = pos.get(ROW_ID)

    X = np.full((len(rows), len(schema)), np.nan)
    y = np.full(len(rows), np.nan)
    ids = []
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise CsvParseError(f"{path}: row {r + 1} has {len(row)} cells, header has {len(header)}")
        for j, spec in enumerate(schema):
            cell = row[pos[spec.name]]
            v = _parse_cell(cell)
            if spec.is_binary and cell.strip() and v not in (0.0, 1.0):
                raise CsvParseError(
                    f"{path}: row {r + 1}, column {spec.name!r}: binary value {cell!r} is not 0/1"
                )
            X[r, j] = v
        cell = row[pos[OUTCOME]]
        v = _parse_cell(cell)
        if cell.strip() and v not in (0.0, 1.0):
            raise CsvParseError(f"{path}: row {r + 1}, column 'outcome': {cell!r} is not 0/1")
        y[r] = v
        ids.append(row[id_pos].strip() if id_pos is not None else str(r))
    return Cohort(schema, X, y, np.array(ids, dtype=object))


def format_value(v: float, binary: bool = False) -> str:
    if math.isnan(v):
        return ""
    if binary:
        return str(int(v))
    return repr(float(v))


def write_csv(cohort: Cohort, path: str | Path) -> None:
    """Write ``row_id``, features, ``outcome``. Floats use shortest round-trip repr."""
    binmask = cohort.binary_mask
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([ROW_ID, *cohort.feature_names, OUTCOME])
        for i in range(cohort.n):
            w.writerow(
                [cohort.row_ids[i]]
                + [format_value(v, b) for v, b in zip(cohort.X[i], binmask)]
                + [format_value(cohort.y[i], True)]
            )


# --------------------------------------------------------------------- synthesis

SIGNAL_SHAPES = ("linear", "quadratic", "step", "hinge")


@dataclass(frozen=True)
class SignalTerm:
    """One additive term of the planted log-odds, on the standardized feature.

    Shapes: ``linear`` z; ``quadratic`` z**2 - 1; ``step`` 1[z > knot];
    ``hinge`` max(z - knot, 0).
    """

    feature: str
    coefficient: float
    shape: str = "linear"
    knot: float = 0.0

    def __post_init__(self):
        if self.shape not in SIGNAL_SHAPES:
            raise ConfigError(f"unknown signal shape {self.shape!r}")

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        if self.shape == "linear":
            return self.coefficient * z
        if self.shape == "quadratic":
            return self.coefficient * (z * z - 1.0)
        if self.shape == "step":
            return self.coefficient * (z > self.knot).astype(float)
        return self.coefficient * np.maximum(z - self.knot, 0.0)

    @property
    def monotone_sign(self) -> int:
        """+1/-1 for monotone terms, 0 for the U-shaped one."""
        if self.shape == "quadratic":
            return 0
        return int(np.sign(self.coefficient))

    @classmethod
    def from_obj(cls, obj) -> "SignalTerm":
        if isinstance(obj, SignalTerm):
            return obj
        if isinstance(obj, dict):
            return cls(**obj)
        feature, coef = obj
        return cls(feature, float(coef))

    def to_dict(self) -> dict:
        return {"feature": self.feature, "coefficient": self.coefficient, "shape": self.shape, "knot": self.knot}


@dataclass(frozen=True)
class SynthesisSpec:
    schema: tuple
    n: int
    outcome_rate: float = DEFAULT_OUTCOME_RATE
    signal: tuple = ()
    missing_rate: float = 0.0
    seed: int = 0
    correlation: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        schema = make_schema(self.schema)
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "signal", tuple(SignalTerm.from_obj(t) for t in self.signal))
        if int(self.n) < 1:
            raise ConfigError("n must be a positive integer")
        if not 0.0 < self.outcome_rate < 1.0:
            raise ConfigError("outcome_rate must lie strictly inside (0, 1)")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ConfigError("missing_rate must lie in [0, 1)")
        names = {s.name for s in schema}
        for term in self.signal:
            if term.feature not in names:
                raise ConfigError(f"signal feature {term.feature!r} not in schema")
        for s in schema:
            if s.kind == CONTINUOUS and s.mean is None:
                raise ConfigError(f"{s.name}: synthesis needs mean/std")
            if s.kind == BINARY and s.prevalence is None:
                raise ConfigError(f"{s.name}: synthesis needs a prevalence")
        if self.correlation is not None:
            c = int(sum(not s.is_binary for s in schema))
            corr = np.asarray(self.correlation, dtype=float)
            if corr.shape != (c, c):
                raise ConfigError(f"correlation must be {c}x{c} over the continuous features")
            object.__setattr__(self, "correlation", corr)


TRUNCATION_SD = 4.0


def _truncated_normals(rng: np.random.Generator, n: int, chol: np.ndarray | None, c: int) -> np.ndarray:
    z = rng.standard_normal((n, c))
    if chol is not None:
        z = z @ chol.T
    bad = np.abs(z) > TRUNCATION_SD
    rows = np.flatnonzero(bad.any(axis=1))
    while rows.size:
        fresh = rng.standard_normal((rows.size, c))
        if chol is not None:
            fresh = fresh @ chol.T
        if chol is None:
            # independent columns: only the offending cells are redrawn
            cell = bad[rows]
            z[rows] = np.where(cell, fresh, z[rows])
        else:
            z[rows] = fresh
        bad = np.abs(z) > TRUNCATION_SD
        rows = np.flatnonzero(bad.any(axis=1))
    return z


def standardized_values(schema: Sequence[FeatureSpec], X: np.ndarray) -> np.ndarray:
    """Standardize columns by the schema's own statistics (not the sample's)."""
    Z = np.zeros_like(X, dtype=float)
    for j, s in enumerate(schema):
        if s.is_binary:
            p = s.prevalence
            Z[:, j] = 0.0 if p in (0.0, 1.0) else (X[:, j] - p) / math.sqrt(p * (1 - p))
        else:
            Z[:, j] = 0.0 if s.std == 0 else (X[:, j] - s.mean) / s.std
    return Z


def planted_logit(signal: Sequence[SignalTerm], schema: Sequence[FeatureSpec], X: np.ndarray) -> np.ndarray:
    """Signal part of the log-odds (intercept excluded)."""
    names = [s.name for s in schema]
    Z = standardized_values(schema, X)
    eta = np.zeros(X.shape[0])
    for term in signal:
        eta += term.evaluate(Z[:, names.index(term.feature)])
    return eta


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def calibrate_intercept(eta: np.ndarray, u: np.ndarray, rate: float, tol: float | None = None) -> float:
    """Bisect the intercept so that mean(u < sigmoid(b + eta)) hits ``rate``.

    The default tolerance is 0.001, widened to half a row (0.5/n) for small
    cohorts where the realized rate moves in steps of 1/n. A realized rate
    of exactly 0 or 1 never counts as a hit.
    """
    n = len(eta)
    if tol is None:
        tol = max(1e-3, 0.5 / n)

    def realized(b):
        r = float(np.mean(u < _sigmoid(b + eta)))
        return r if 0.0 < r < 1.0 else (-math.inf if r == 0.0 else math.inf)

    lo, hi = -60.0, 60.0
    if realized(lo) > rate + tol or realized(hi) < rate - tol:
        raise CalibrationError(f"no intercept reaches outcome rate {rate} (n={n})")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r = realized(mid)
        if abs(r - rate) <= tol:
            return mid
        if r < rate:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"intercept bisection did not reach outcome rate {rate} +/- {tol}")


def synthesize(spec: SynthesisSpec) -> Cohort:
    """Draw a cohort matching the schema's summary statistics.

    Continuous columns are normal with the schema mean/std, truncated at
    +/- 4 sd (redraw). Binary columns are Bernoulli(prevalence). The outcome
    follows the planted logistic model with a calibrated intercept. Missing
    feature cells are scattered uniformly at ``missing_rate``.
    """
    schema = spec.schema
    n = int(spec.n)
    rng = np.random.default_rng(spec.seed)
    cont = [j for j, s in enumerate(schema) if not s.is_binary]
    binr = [j for j, s in enumerate(schema) if s.is_binary]

    chol = None
    if spec.correlation is not None:
        try:
            chol = np.linalg.cholesky(spec.correlation)
        except np.linalg.LinAlgError:
            raise ConfigError("correlation matrix is not positive definite") from None

    X = np.empty((n, len(schema)))
    if cont:
        z = _truncated_normals(rng, n, chol, len(cont))
        means = np.array([schema[j].mean for j in cont])
        stds = np.array([schema[j].std for j in cont])
        X[:, cont] = means + stds * z
    if binr:
        prev = np.array([schema[j].prevalence for j in binr])
        X[:, binr] = (rng.random((n, len(binr))) < prev).astype(float)

    eta = planted_logit(spec.signal, schema, X)
    u = rng.random(n)
    b = calibrate_intercept(eta, u, spec.outcome_rate)
    y = (u < _sigmoid(b + eta)).astype(float)

    if spec.missing_rate > 0:
        holes = rng.random(X.shape) < spec.missing_rate
        X[holes] = np.nan

    width = max(6, len(str(n)))
    ids = np.array([f"P{i:0{width}d}" for i in range(n)], dtype=object)
    return Cohort(schema, X, y, ids)


# ------------------------------------------------------------------------- split


def _n_test(count: int, fraction: float) -> int:
    return int(math.floor(count * fraction + 0.5))


def split(cohort: Cohort, test_fraction: float = 0.2, stratified: bool = True, seed: int = 0):
    """Partition into (train, test). Row order within each side is preserved."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must lie strictly inside (0, 1)")
    rng = np.random.default_rng(seed)
    n = cohort.n
    test_mask = np.zeros(n, dtype=bool)
    if stratified:
        neg, pos = cohort.class_counts()
        if neg == 0 or pos == 0:
            raise StratificationError("stratified split needs both outcome classes")
        strata = [np.flatnonzero(cohort.y == 0), np.flatnonzero(cohort.y == 1), np.flatnonzero(np.isnan(cohort.y))]
        for idx in strata:
            if idx.size:
                perm = rng.permutation(idx)
                test_mask[perm[: _n_test(idx.size, test_fraction)]] = True
    else:
        perm = rng.permutation(n)
        test_mask[perm[: _n_test(n, test_fraction)]] = True
    return cohort.take(np.flatnonzero(~test_mask)), cohort.take(np.flatnonzero(test_mask))


__all__ = [
    "BINARY",
    "CONTINUOUS",
    "Cohort",
    "EXTRACTION_FLOW",
    "FeatureSpec",
    "SignalTerm",
    "SynthesisSpec",
    "calibrate_intercept",
    "load_csv",
    "load_schema",
    "make_schema",
    "planted_logit",
    "schema_from_json",
    "split",
    "synthesize",
    "write_csv",
    "write_schema",
]
