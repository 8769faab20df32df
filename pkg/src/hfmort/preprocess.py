"""Cleaning chain: dedup, constant columns, missing outcomes, median
imputation, z-score outlier removal, and minority oversampling."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .cohort import Cohort, split
from .errors import (
    ClassError,
    ConfigError,
    CoverageError,
    EmptyCohortError,
    ParameterError,
    UnimputableFeatureError,
)

IDENTIFIER_COLUMNS = ("id", "group", "subject_id", "hadm_id", "icustay_id")
DUPLICATE_TAG = "#dup"


@dataclass(frozen=True)
class PreprocessConfig:
    outlier_z: float = 4.0
    oversample_to_balance: bool = True
    impute_statistic: str = "median"
    seed: int = 0

    def __post_init__(self):
        if not self.outlier_z > 0:
            raise ConfigError("outlier_z must be > 0")
        if self.impute_statistic != "median":
            raise ConfigError("only median imputation is supported")


@dataclass
class PreprocessReport:
    rows_in: int = 0
    rows_out: int = 0
    duplicates_removed: int = 0
    constant_columns_removed: int = 0
    missing_outcome_rows_removed: int = 0
    outlier_rows_removed: int = 0
    rows_added_by_oversampling: int = 0
    identifier_columns_removed: int = 0
    rows_held_out: int = 0
    imputation_values: dict = field(default_factory=dict)
    dropped_columns: list = field(default_factory=list)
    # (step, rows_before, rows_after) in execution order
    steps: list = field(default_factory=list)

    def record(self, step: str, before: int, after: int) -> None:
        if not self.steps:
            self.rows_in = before
        self.steps.append((step, before, after))
        self.rows_out = after

    def merge(self, other: "PreprocessReport") -> "PreprocessReport":
        out = PreprocessReport(**{k: v for k, v in asdict(self).items()})
        if not out.steps:
            out.rows_in = other.rows_in
        for name in (
            "duplicates_removed",
            "constant_columns_removed",
            "missing_outcome_rows_removed",
            "outlier_rows_removed",
            "rows_added_by_oversampling",
            "identifier_columns_removed",
            "rows_held_out",
        ):
            setattr(out, name, getattr(out, name) + getattr(other, name))
        out.imputation_values = {**out.imputation_values, **other.imputation_values}
        out.dropped_columns = out.dropped_columns + other.dropped_columns
        out.steps = out.steps + other.steps
        if other.steps:
            out.rows_out = other.rows_out
        return out

    @property
    def removals(self) -> int:
        return self.duplicates_removed + self.missing_outcome_rows_removed + self.outlier_rows_removed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["steps"] = [list(s) for s in self.steps]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def audit_table(self) -> str:
        lines = [f"{'step':<28}{'rows before':>12}{'rows after':>12}"]
        for step, before, after in self.steps:
            lines.append(f"{step:<28}{before:>12}{after:>12}")
        return "\n".join(lines)


def _row_keys(X: np.ndarray, y: np.ndarray) -> list[bytes]:
    # NaN canonicalized so two missing cells compare equal
    full = np.column_stack([X, y])
    full = np.where(np.isnan(full), np.nan, full) + 0.0
    return [row.tobytes() for row in full]


def clean(cohort: Cohort, identifier_columns=IDENTIFIER_COLUMNS) -> tuple[Cohort, PreprocessReport]:
    """Drop identifier columns, missing-outcome rows, constant columns, then duplicates.

    Constant columns go before dedup so that a second pass finds nothing
    to remove.
    """
    rep = PreprocessReport()
    ids = {c.lower() for c in identifier_columns}
    id_cols = [f for f in cohort.feature_names if f.lower() in ids]
    if id_cols:
        cohort = cohort.drop_features(id_cols)
    rep.identifier_columns_removed = len(id_cols)
    rep.dropped_columns.extend(id_cols)
    rep.record("drop identifier columns", cohort.n, cohort.n)

    before = cohort.n
    keep = ~np.isnan(cohort.y)
    cohort = cohort.take(np.flatnonzero(keep))
    rep.missing_outcome_rows_removed = before - cohort.n
    rep.record("drop missing outcome", before, cohort.n)

    constant = []
    for j, name in enumerate(cohort.feature_names):
        col = cohort.X[:, j]
        vals = col[~np.isnan(col)]
        if vals.size == 0 or np.all(vals == vals[0]):
            constant.append(name)
    if constant:
        cohort = cohort.drop_features(constant)
    rep.constant_columns_removed = len(constant)
    rep.dropped_columns.extend(constant)
    rep.record("drop constant columns", cohort.n, cohort.n)

    before = cohort.n
    seen = set()
    keep_idx = []
    for i, key in enumerate(_row_keys(cohort.X, cohort.y)):
        if key not in seen:
            seen.add(key)
            keep_idx.append(i)
    cohort = cohort.take(np.array(keep_idx, dtype=int))
    rep.duplicates_removed = before - cohort.n
    rep.record("drop duplicates", before, cohort.n)

    if cohort.n == 0 or cohort.p == 0:
        raise EmptyCohortError("cohort is empty after cleaning")
    return cohort, rep


def fit_imputer(train: Cohort) -> dict[str, float]:
    """Per-feature median of the non-missing training values.

    Binary columns take the lower median (the majority value, 0 on an exact
    tie) so the fill stays a valid 0/1 code.
    """
    medians = {}
    for j, spec in enumerate(train.schema):
        col = train.X[:, j]
        vals = col[~np.isnan(col)]
        if vals.size == 0:
            raise UnimputableFeatureError(f"feature {spec.name!r} has no observed training values")
        if spec.is_binary:
            medians[spec.name] = float(np.sort(vals)[(vals.size - 1) // 2])
        else:
            medians[spec.name] = float(np.median(vals))
    return medians


def apply_imputer(cohort: Cohort, medians: dict[str, float]) -> Cohort:
    X = np.array(cohort.X)
    for j, name in enumerate(cohort.feature_names):
        holes = np.isnan(X[:, j])
        if not holes.any():
            continue
        if name not in medians:
            raise CoverageError(f"no fitted median for feature {name!r}")
        X[holes, j] = medians[name]
    return cohort.with_values(X=X)


def remove_outliers(cohort: Cohort, z: float = 4.0) -> tuple[Cohort, PreprocessReport]:
    """Drop rows with any continuous cell beyond ``z`` column standard deviations.

    Column statistics are computed once, before dropping anything. Columns
    with zero spread never trigger.
    """
    if not z > 0:
        raise ParameterError("outlier z must be > 0")
    rep = PreprocessReport()
    cont = cohort.continuous_mask
    Xc = cohort.X[:, cont]
    if np.isnan(Xc).any():
        raise CoverageError("remove_outliers needs imputed data (missing cells present)")
    flagged = np.zeros(cohort.n, dtype=bool)
    if Xc.shape[1] and cohort.n:
        mu = Xc.mean(axis=0)
        sd = Xc.std(axis=0)
        dev = np.abs(Xc - mu)
        live = sd > 0
        flagged = (dev[:, live] > z * sd[live]).any(axis=1)
    out = cohort.take(np.flatnonzero(~flagged))
    rep.outlier_rows_removed = int(flagged.sum())
    rep.record("remove outliers", cohort.n, out.n)
    return out, rep


def source_id(row_id: str) -> str:
    """Row id of the original row an oversampled duplicate was copied from."""
    return str(row_id).split(DUPLICATE_TAG, 1)[0]


def oversample(train: Cohort, seed: int = 0) -> tuple[Cohort, PreprocessReport]:
    """Duplicate minority rows (with replacement) until the classes balance.

    Copies get row ids ``<source>#dup<k>``.
    """
    neg, pos = train.class_counts()
    if neg == 0 or pos == 0:
        raise ClassError("oversampling needs both outcome classes")
    rep = PreprocessReport()
    deficit = abs(neg - pos)
    if deficit == 0:
        rep.record("oversample minority", train.n, train.n)
        return train, rep
    minority = 1.0 if pos < neg else 0.0
    pool = np.flatnonzero(train.y == minority)
    rng = np.random.default_rng(seed)
    picks = rng.choice(pool, size=deficit, replace=True)
    new_ids = np.array([f"{source_id(train.row_ids[i])}{DUPLICATE_TAG}{k}" for k, i in enumerate(picks)], dtype=object)
    out = Cohort(
        train.schema,
        np.vstack([train.X, train.X[picks]]),
        np.concatenate([train.y, train.y[picks]]),
        np.concatenate([train.row_ids, new_ids]),
    )
    rep.rows_added_by_oversampling = deficit
    rep.record("oversample minority", train.n, out.n)
    return out, rep


@dataclass
class Prepared:
    train: Cohort  # imputed, outliers removed, NOT oversampled
    test: Cohort  # imputed
    medians: dict
    report: PreprocessReport


def prepare(cohort: Cohort, config: PreprocessConfig, test_fraction: float = 0.2, split_seed: int = 0) -> Prepared:
    """clean -> split -> fit imputer on train, apply to both -> outliers (train).

    Oversampling is left to the training step so that cross-validation can
    apply it inside each training fold.
    """
    cohort, rep = clean(cohort)
    train, test = split(cohort, test_fraction, stratified=True, seed=split_seed)
    rep.rows_held_out = test.n
    rep.record("split train/test", cohort.n, train.n)
    medians = fit_imputer(train)
    train = apply_imputer(train, medians)
    test = apply_imputer(test, medians)
    rep.imputation_values = dict(medians)
    rep.record("median imputation", train.n, train.n)
    train, out_rep = remove_outliers(train, config.outlier_z)
    rep = rep.merge(out_rep)
    return Prepared(train, test, medians, rep)
