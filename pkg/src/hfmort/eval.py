"""Discrimination metrics, ROC curves, bootstrapped reports, and stratified
k-fold grid search over the learner families."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from . import baselines, boost
from .cohort import Cohort
from .errors import HFMortError, ParameterError, SearchError, StratificationError, UndefinedMetricError
from .preprocess import oversample
from .stats import BootstrapCI, bootstrap_ci, bootstrap_indices


def _vectors(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-d and equally long")
    return s, y


def _class_sizes(y: np.ndarray) -> tuple[int, int]:
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    return n_pos, n_neg


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with ties credited 0.5 (midrank formulation)."""
    s, y = _vectors(scores, labels)
    n_pos, n_neg = _class_sizes(y)
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # +inf first, -inf last

    def area(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))

    def rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


def roc_curve(scores, labels) -> RocCurve:
    """One point per distinct score, from threshold +inf down to -inf."""
    s, y = _vectors(scores, labels)
    n_pos, n_neg = _class_sizes(y)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])  # end of each tie block
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    fpr = np.r_[0.0, fp / n_neg, 1.0]
    tpr = np.r_[0.0, tp / n_pos, 1.0]
    thr = np.r_[np.inf, s[last], -np.inf]
    return RocCurve(fpr, tpr, thr)


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    s, y = _vectors(scores, labels)
    if s.size == 0:
        raise UndefinedMetricError("accuracy of an empty sample")
    return float(np.mean((s >= threshold) == (y == 1)))


# ------------------------------------------------------------------------ report


@dataclass(frozen=True)
class EvalReport:
    model_name: str
    dataset: str
    auc: float
    auc_ci: BootstrapCI
    accuracy: float
    accuracy_ci: BootstrapCI
    roc: RocCurve

    def row(self) -> dict:
        return {
            "model": self.model_name,
            "dataset": self.dataset,
            "auc": self.auc,
            "auc_lower": self.auc_ci.lower,
            "auc_upper": self.auc_ci.upper,
            "accuracy": self.accuracy,
            "accuracy_lower": self.accuracy_ci.lower,
            "accuracy_upper": self.accuracy_ci.upper,
        }


def evaluate(model, cohort: Cohort, n_resamples: int = 1000, seed: int = 0, alpha: float = 0.05,
             threshold: float = 0.5, model_name: str = "", dataset: str = "test") -> EvalReport:
    """Point AUC/accuracy plus percentile bootstrap intervals over resampled predictions."""
    scores = model.predict_proba(cohort)
    labels = cohort.y
    auc_ci = bootstrap_ci(auc, scores, labels, n_resamples, alpha, seed)
    acc_ci = bootstrap_ci(lambda s, y: accuracy(s, y, threshold), scores, labels, n_resamples, alpha, seed)
    return EvalReport(model_name or getattr(model, "kind", "model"), dataset, auc_ci.point, auc_ci,
                      acc_ci.point, acc_ci, roc_curve(scores, labels))


def bootstrap_auc_distribution(scores, labels, n_resamples: int, seed: int) -> np.ndarray:
    """AUC on each paired resample; index sets depend only on labels and seed."""
    s, y = _vectors(scores, labels)
    return np.array([auc(s[idx], y[idx]) for idx in bootstrap_indices(y, n_resamples, seed)])


# ----------------------------------------------------------------------- families


@dataclass(frozen=True)
class LearnerFamily:
    name: str
    fit: Callable  # (cohort, params dict, seed) -> model
    default_grid: dict
    prefix_param: str | None = None  # models with fewer of these are exact truncations


def _fit_boost(c, params, seed):
    return boost.fit(c, boost.BoostParams(**{**params, "seed": seed}))


def _fit_forest(c, params, seed):
    return baselines.fit_forest(c, baselines.ForestParams(**{**params, "seed": seed}))


def _fit_logistic(c, params, seed):
    return baselines.fit_logistic(c, penalty="l2", **params)


def _fit_lasso(c, params, seed):
    return baselines.fit_logistic(c, penalty="l1", **params)


def _fit_knn(c, params, seed):
    return baselines.fit_knn(c, **params)


STRENGTHS = [1e-3, 1e-2, 1e-1, 1.0, 10.0]

FAMILIES = {
    "boosted_trees": LearnerFamily(
        "boosted_trees", _fit_boost,
        {"n_trees": [100, 200, 400], "max_depth": [2, 3, 4], "learning_rate": [0.05, 0.1, 0.3]},
        "n_trees",
    ),
    "random_forest": LearnerFamily(
        "random_forest", _fit_forest, {"n_trees": [100, 300], "max_depth": [None, 8]}, "n_trees"
    ),
    "logistic_regression": LearnerFamily("logistic_regression", _fit_logistic, {"strength": STRENGTHS}),
    "lasso": LearnerFamily("lasso", _fit_lasso, {"strength": STRENGTHS}),
    "knn": LearnerFamily("knn", _fit_knn, {"k": [5, 11, 21]}),
}
MODEL_ORDER = tuple(FAMILIES)


def family(name: str) -> LearnerFamily:
    try:
        return FAMILIES[name]
    except KeyError:
        raise ParameterError(f"unknown learner family {name!r}; known: {list(FAMILIES)}") from None


def expand_grid(grid) -> list[dict]:
    """Lattice dict -> cells in product order (last key fastest); a list of cells passes through."""
    if isinstance(grid, dict):
        keys = list(grid)
        cells = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    else:
        cells = [dict(c) for c in grid]
    if not cells:
        raise ParameterError("grid is empty")
    return cells


def stratified_folds(labels: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Fold index per row: each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels)
    if k < 2:
        raise ParameterError("folds must be >= 2")
    fold = np.empty(len(labels), dtype=np.int64)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x666F6C64]))
    for cls in (0.0, 1.0):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < k:
            raise StratificationError(f"class {int(cls)} has {len(idx)} rows, fewer than {k} folds")
        fold[rng.permutation(idx)] = np.arange(len(idx)) % k
    return fold


def derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0] >> 1)


@dataclass
class FoldRecord:
    fold: int
    train_ids: list  # row ids seen in fitting, oversampled copies included
    valid_ids: list


@dataclass
class GridSearchResult:
    family: str
    cells: list
    scores: list  # mean CV AUC per cell, None when the cell failed
    fold_scores: list
    failures: dict  # cell index -> message
    best_index: int
    model: object
    folds: list = field(default_factory=list)

    @property
    def best_params(self) -> dict:
        return self.cells[self.best_index]

    @property
    def best_score(self) -> float:
        return self.scores[self.best_index]

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "cells": [
                {"params": c, "mean_cv_auc": s, "fold_auc": f, "failed": self.failures.get(i)}
                for i, (c, s, f) in enumerate(zip(self.cells, self.scores, self.fold_scores))
            ],
            "best_index": self.best_index,
            "best_params": self.best_params,
        }


def _groups(cells: list[dict], prefix: str | None) -> dict:
    """Cells that differ only in ``prefix`` share one fit at the largest value."""
    groups: dict = {}
    for i, c in enumerate(cells):
        if prefix and prefix in c and isinstance(c[prefix], int) and not isinstance(c[prefix], bool):
            key = json.dumps({k: v for k, v in c.items() if k != prefix}, sort_keys=True, default=str)
        else:
            key = f"cell{i}"
        groups.setdefault(key, []).append(i)
    return groups


def _fit_group(fam: LearnerFamily, cells: list[dict], members: list[int], data: Cohort, seed: int) -> dict:
    """Fitted model (or exception) per member cell."""
    out = {}
    p = fam.prefix_param
    if len(members) > 1:
        sizes = [cells[i][p] for i in members]
        if min(sizes) >= 1:
            try:
                big = fam.fit(data, {**cells[members[0]], p: max(sizes)}, seed)
            except (HFMortError, ValueError, TypeError) as exc:
                return {i: exc for i in members}
            return {i: big.truncated(cells[i][p]) for i in members}
    for i in members:
        try:
            out[i] = fam.fit(data, cells[i], seed)
        except (HFMortError, ValueError, TypeError) as exc:
            out[i] = exc
    return out


def grid_search(learner_family, grid, train: Cohort, folds: int = 5, seed: int = 0,
                oversample_folds: bool = True) -> GridSearchResult:
    """Stratified k-fold CV per grid cell, scored by mean validation AUC.

    Oversampling (when on) touches only the training part of each fold.
    All cells see the same fold training seed, which makes smaller tree
    counts exact prefixes of the largest and lets one fit serve them all.
    The best cell (earliest on ties) is refit on the full training cohort.
    """
    fam = family(learner_family) if isinstance(learner_family, str) else learner_family
    cells = expand_grid(grid if grid is not None else fam.default_grid)
    assignment = stratified_folds(train.y, folds, seed)
    groups = _groups(cells, fam.prefix_param)
    fold_scores: list[list] = [[] for _ in cells]
    failures: dict = {}
    records = []
    for f in range(folds):
        fit_part = train.take(np.flatnonzero(assignment != f))
        valid = train.take(np.flatnonzero(assignment == f))
        if oversample_folds:
            fit_part, _ = oversample(fit_part, seed=derived_seed(seed, f, 1))
        records.append(FoldRecord(f, list(fit_part.row_ids), list(valid.row_ids)))
        fit_seed = derived_seed(seed, f, 2)
        for members in groups.values():
            if all(i in failures for i in members):
                continue
            for i, model in _fit_group(fam, cells, members, fit_part, fit_seed).items():
                if isinstance(model, Exception):
                    failures[i] = f"{type(model).__name__}: {model}"
                    continue
                fold_scores[i].append(auc(model.predict_proba(valid), valid.y))
    scores = [None if i in failures else float(np.mean(fold_scores[i])) for i in range(len(cells))]
    live = [i for i, s in enumerate(scores) if s is not None]
    if not live:
        raise SearchError(f"all {len(cells)} grid cells failed: {failures}")
    best = max(live, key=lambda i: (scores[i], -i))
    full = train
    if oversample_folds:
        full, _ = oversample(train, seed=derived_seed(seed, folds, 1))
    model = fam.fit(full, cells[best], derived_seed(seed, folds, 2))
    return GridSearchResult(fam.name, cells, scores, [list(map(float, s)) for s in fold_scores], failures, best,
                            model, records)


# ------------------------------------------------------------------ comparisons


def comparison_report(models, train: Cohort, test: Cohort, n_resamples: int = 1000, seed: int = 0,
                      alpha: float = 0.05, threshold: float = 0.5) -> tuple[list[EvalReport], list[EvalReport]]:
    """Train and test reports per model, in the given order.

    ``models`` is a mapping name -> fitted model or a list of fitted models.
    """
    items = list(models.items()) if isinstance(models, dict) else [(getattr(m, "kind", f"model{i}"), m)
                                                                     for i, m in enumerate(models)]
    train_rows, test_rows = [], []
    for name, m in items:
        train_rows.append(evaluate(m, train, n_resamples, seed, alpha, threshold, name, "train"))
        test_rows.append(evaluate(m, test, n_resamples, seed, alpha, threshold, name, "test"))
    return train_rows, test_rows


REPORT_COLUMNS = ("model", "dataset", "auc", "auc_lower", "auc_upper", "accuracy", "accuracy_lower", "accuracy_upper")


def report_rows(reports: Sequence[EvalReport]) -> list[dict]:
    return [r.row() for r in reports]


def format_table(rows: Sequence[dict], columns: Sequence[str] | None = None, digits: int = 4) -> str:
    """Aligned plain-text table."""
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())

    def cell(v):
        if isinstance(v, float):
            return "inf" if math.isinf(v) else f"{v:.{digits}f}"
        return "" if v is None else str(v)

    body = [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[j]) for b in body)) for j, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)
