"""Exact TreeSHAP attributions for boosted ensembles, plus the rankings and
direction checks built on them.

Attributions live in margin (log-odds) space. The background is the
ensemble's own training cover: an absent feature sends a row down both
children of a split, weighted by the children's hessian cover.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .boost import BoostedEnsemble, Tree
from .cohort import Cohort
from .errors import SchemaMismatchError


@dataclass(frozen=True, eq=False)
class ShapMatrix:
    values: np.ndarray  # n x p
    base_value: float
    feature_names: tuple
    row_ids: tuple

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_names.index(name)]


def tree_expected_value(tree: Tree, node: int = 0) -> float:
    """Cover-weighted mean leaf value, using the same child/parent ratios as the recursion."""
    if tree.feature[node] < 0:
        return float(tree.value[node])
    lc, rc = tree.left[node], tree.right[node]
    c = tree.cover[node]
    return (tree.cover[lc] / c) * tree_expected_value(tree, lc) + (tree.cover[rc] / c) * tree_expected_value(tree, rc)


class _Path:
    """Unique-feature path with per-row one-fractions and path weights.

    Mirrors the list of (feature, zero fraction, one fraction, weight)
    records of the path recursion; one fractions and weights are vectors
    over the explained rows.
    """

    __slots__ = ("feat", "zero", "one", "w")

    def __init__(self, feat, zero, one, w):
        self.feat = feat
        self.zero = zero
        self.one = one
        self.w = w

    def extend(self, pz: float, po: np.ndarray, pi: int) -> "_Path":
        depth = len(self.feat)
        n = po.shape[0]
        w = list(self.w) + [np.ones(n) if depth == 0 else np.zeros(n)]
        for i in range(depth - 1, -1, -1):
            w[i + 1] = w[i + 1] + po * w[i] * ((i + 1) / (depth + 1))
            w[i] = pz * w[i] * ((depth - i) / (depth + 1))
        return _Path(self.feat + [pi], self.zero + [pz], self.one + [po], w)

    def unwind(self, k: int) -> "_Path":
        last = len(self.feat) - 1
        hot = self.one[k] != 0
        z = self.zero[k]
        carry = self.w[last]
        w = list(self.w[:last])
        for j in range(last - 1, -1, -1):
            a = carry * ((last + 1) / (j + 1))
            carry = np.where(hot, w[j] - a * z * ((last - j) / (last + 1)), carry)
            cold = w[j] * (last + 1) / (z * (last - j)) if z != 0 else np.zeros_like(w[j])
            w[j] = np.where(hot, a, cold)
        keep = [i for i in range(last + 1) if i != k]
        return _Path([self.feat[i] for i in keep], [self.zero[i] for i in keep], [self.one[i] for i in keep], w)

    def unwound_sum(self, k: int) -> np.ndarray:
        last = len(self.feat) - 1
        hot = self.one[k] != 0
        z = self.zero[k]
        carry = self.w[last]
        total = np.zeros_like(carry)
        for j in range(last - 1, -1, -1):
            a = carry * ((last + 1) / (j + 1))
            cold = self.w[j] / z * (last + 1) / (last - j) if z != 0 else np.zeros_like(carry)
            total = total + np.where(hot, a, cold)
            carry = np.where(hot, self.w[j] - a * z * ((last - j) / (last + 1)), carry)
        return total


def _tree_shap(tree: Tree, X: np.ndarray, phi: np.ndarray) -> None:
    """Add one tree's attributions for all rows of ``X`` into ``phi``."""
    n = X.shape[0]

    def recurse(node, path, pz, po, pi):
        path = path.extend(pz, po, pi)
        f = tree.feature[node]
        if f < 0:
            v = tree.value[node]
            for k in range(1, len(path.feat)):
                phi[:, path.feat[k]] += path.unwound_sum(k) * (path.one[k] - path.zero[k]) * v
            return
        x = X[:, f]
        go_left = np.where(np.isnan(x), tree.default_left[node], x < tree.threshold[node])
        iz, io = 1.0, np.ones(n)
        for k in range(1, len(path.feat)):
            if path.feat[k] == f:
                iz, io = path.zero[k], path.one[k]
                path = path.unwind(k)
                break
        c = tree.cover[node]
        lc, rc = tree.left[node], tree.right[node]
        recurse(lc, path, iz * tree.cover[lc] / c, io * go_left, f)
        recurse(rc, path, iz * tree.cover[rc] / c, io * ~go_left, f)

    recurse(0, _Path([], [], [], []), 1.0, np.ones(n), -1)


def _rows_matrix(model: BoostedEnsemble, rows) -> tuple[np.ndarray, tuple]:
    if isinstance(rows, Cohort):
        if not set(model.feature_names) <= set(rows.feature_names):
            missing = sorted(set(model.feature_names) - set(rows.feature_names))
            raise SchemaMismatchError(f"rows lack model features {missing}")
        return rows.select_features(list(model.feature_names)).X, tuple(rows.row_ids)
    X = np.asarray(rows, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.feature_names):
        raise SchemaMismatchError(f"expected {len(model.feature_names)} feature columns")
    return X, tuple(str(i) for i in range(X.shape[0]))


def tree_shap(model: BoostedEnsemble, rows) -> ShapMatrix:
    """Exact Shapley values of the ensemble margin, summed tree by tree."""
    X, ids = _rows_matrix(model, rows)
    phi = np.zeros(X.shape)
    base = float(model.base_margin)
    for tree in model.trees:
        base += tree_expected_value(tree)
        if tree.feature[0] >= 0:
            _tree_shap(tree, X, phi)
    return ShapMatrix(phi, base, tuple(model.feature_names), ids)


# ----------------------------------------------------------------------- summary


@dataclass(frozen=True)
class ShapSummary:
    ranking: tuple  # (feature, mean |attribution|), descending, ties by name
    beeswarm: tuple  # (feature, feature value, attribution) for the ranked features

    def ranking_rows(self) -> list[dict]:
        return [{"rank": i + 1, "feature": f, "mean_abs_shap": v} for i, (f, v) in enumerate(self.ranking)]

    def beeswarm_rows(self) -> list[dict]:
        return [{"feature": f, "value": x, "shap": s} for f, x, s in self.beeswarm]


def shap_summary(shap: ShapMatrix, cohort: Cohort, top_k: int = 15) -> ShapSummary:
    if cohort.n != shap.values.shape[0]:
        raise SchemaMismatchError("cohort rows do not align with the attribution matrix")
    p = len(shap.feature_names)
    if top_k > p:
        warnings.warn(f"top_k={top_k} exceeds {p} features; clipped", stacklevel=2)
        top_k = p
    means = np.abs(shap.values).mean(axis=0) if shap.values.shape[0] else np.zeros(p)
    order = sorted(range(p), key=lambda j: (-means[j], shap.feature_names[j]))[:top_k]
    ranking = tuple((shap.feature_names[j], float(means[j])) for j in order)
    bees = []
    for j in order:
        name = shap.feature_names[j]
        raw = cohort.column(name)
        bees.extend((name, float(x), float(s)) for x, s in zip(raw, shap.values[:, j]))
    return ShapSummary(ranking, tuple(bees))


def direction_check(shap: ShapMatrix, cohort: Cohort, feature: str) -> int:
    """Sign of the Spearman correlation between a feature and its attributions (0 if undefined)."""
    if feature not in shap.feature_names:
        raise SchemaMismatchError(f"feature {feature!r} not in the attribution matrix")
    x = cohort.column(feature)
    s = shap.column(feature)
    ok = ~np.isnan(x)
    x, s = x[ok], s[ok]
    if x.size < 2 or np.all(x == x[0]) or np.all(s == s[0]):
        return 0
    rho = spearmanr(x, s).statistic
    if not np.isfinite(rho) or rho == 0:
        return 0
    return 1 if rho > 0 else -1
