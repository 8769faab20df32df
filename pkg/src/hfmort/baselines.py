"""Comparison learners: logistic regression (none/l2/l1), random forest of
gini CART trees, and k-nearest neighbours.

Every fitted model exposes ``predict_proba(rows)`` and ``to_dict()`` so the
evaluation code can treat all learners the same way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .boost import logistic_loss, presort, sigmoid
from .cohort import Cohort
from .errors import ClassError, ParameterError, SchemaMismatchError


def _matrix(feature_names, rows) -> np.ndarray:
    if isinstance(rows, Cohort):
        if rows.feature_names != list(feature_names):
            if not set(rows.feature_names) >= set(feature_names):
                missing = sorted(set(feature_names) - set(rows.feature_names))
                raise SchemaMismatchError(f"rows lack model features {missing}")
            rows = rows.select_features(list(feature_names))
        return rows.X
    X = np.asarray(rows, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(feature_names):
        raise SchemaMismatchError(f"expected {len(feature_names)} feature columns")
    return X


def _check_classes(train: Cohort) -> None:
    if np.isnan(train.y).any():
        raise ClassError("training outcome has missing values")
    neg, pos = train.class_counts()
    if neg == 0 or pos == 0:
        raise ClassError("training data needs both outcome classes")


def _standardization(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return mu, sd


# ---------------------------------------------------------------------- logistic

PENALTIES = ("none", "l1", "l2")


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray  # on standardized features
    intercept: float
    penalty: str
    strength: float
    means: np.ndarray
    stds: np.ndarray
    feature_names: tuple
    converged: bool = True
    n_iter: int = 0

    kind = "logistic"

    def decision_function(self, rows) -> np.ndarray:
        Z = (_matrix(self.feature_names, rows) - self.means) / self.stds
        return Z @ self.weights + self.intercept

    def predict_proba(self, rows) -> np.ndarray:
        return sigmoid(self.decision_function(rows))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "penalty": self.penalty,
            "strength": self.strength,
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "feature_names": list(self.feature_names),
            "converged": self.converged,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(
            np.array(d["weights"], dtype=float), d["intercept"], d["penalty"], d["strength"],
            np.array(d["means"], dtype=float), np.array(d["stds"], dtype=float),
            tuple(d["feature_names"]), d["converged"], d["n_iter"],
        )


def _soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def fit_logistic(train: Cohort, penalty: str = "l2", strength: float = 1.0,
                 max_iter: int = 1000, tol: float = 1e-8) -> LinearModel:
    """Minimize mean logistic loss + penalty by proximal gradient descent.

    Penalties act on the standardized weights only: ``strength * ||w||_1``
    for l1, ``strength/2 * ||w||^2`` for l2. Step sizes come from
    backtracking on the smooth part. Hitting ``max_iter`` returns a model
    flagged ``converged=False``.
    """
    if penalty not in PENALTIES:
        raise ParameterError(f"penalty must be one of {PENALTIES}")
    if strength < 0:
        raise ParameterError("strength must be >= 0")
    _check_classes(train)
    X, y = train.X, train.y
    mu, sd = _standardization(X)
    Z = (X - mu) / sd
    n, p = Z.shape
    l2 = strength if penalty == "l2" else 0.0
    l1 = strength if penalty == "l1" else 0.0

    def smooth(w, b):
        m = Z @ w + b
        return logistic_loss(m, y) + 0.5 * l2 * float(w @ w), m

    def grad(w, b, m):
        r = sigmoid(m) - y
        return Z.T @ r / n + l2 * w, float(r.mean())

    w = np.zeros(p)
    b = 0.0
    f, m = smooth(w, b)
    step = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gw, gb = grad(w, b, m)
        while True:
            w_new = w - step * gw
            b_new = b - step * gb
            if l1 > 0:
                w_new = _soft_threshold(w_new, step * l1)
            f_new, m_new = smooth(w_new, b_new)
            dw, db = w_new - w, b_new - b
            bound = f + gw @ dw + gb * db + (dw @ dw + db * db) / (2 * step)
            if f_new <= bound + 1e-15 * abs(f) or step < 1e-12:
                break
            step *= 0.5
        change = max(float(np.max(np.abs(dw), initial=0.0)), abs(db))
        w, b, f, m = w_new, b_new, f_new, m_new
        if change < tol:
            converged = True
            break
    return LinearModel(w, float(b), penalty, float(strength), mu, sd, tuple(train.feature_names), converged, it)


def l1_critical_strength(train: Cohort) -> float:
    """Smallest l1 strength at which every standardized weight is exactly zero."""
    mu, sd = _standardization(train.X)
    Z = (train.X - mu) / sd
    return float(np.max(np.abs(Z.T @ (train.y - train.y.mean()))) / train.n)


# ------------------------------------------------------------------------ forest


@njit(cache=True)
def _grow_cart(XT, y, w, orderT, max_depth, min_samples_leaf, max_features, keys):
    """Weighted gini CART, depth first, presorted segments (see boost._grow).

    ``w`` are bootstrap multiplicities; ``keys[node]`` is a random key per
    feature, and features are tried in key order until ``max_features``
    non-constant ones have been scored.
    """
    p, m = orderT.shape
    cap = keys.shape[0]
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    value = np.zeros(cap)
    weight = np.zeros(cap)
    buf = np.empty(m, np.int64)
    goes_left = np.zeros(XT.shape[1], np.bool_)
    st_s = np.empty(cap, np.int64)
    st_e = np.empty(cap, np.int64)
    st_d = np.empty(cap, np.int64)
    st_parent = np.empty(cap, np.int64)
    st_isleft = np.empty(cap, np.bool_)
    st_s[0] = 0
    st_e[0] = m
    st_d[0] = 0
    st_parent[0] = -1
    st_isleft[0] = False
    sp = 1
    n_nodes = 0
    while sp > 0:
        sp -= 1
        s = st_s[sp]
        e = st_e[sp]
        d = st_d[sp]
        parent = st_parent[sp]
        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if st_isleft[sp]:
                left[parent] = node
            else:
                right[parent] = node
        W = 0.0
        W1 = 0.0
        for i in range(s, e):
            r = orderT[0, i]
            W += w[r]
            W1 += w[r] * y[r]
        value[node] = W1 / W
        weight[node] = W
        if W1 == 0.0 or W1 == W or (max_depth >= 0 and d >= max_depth) or W < 2 * min_samples_leaf:
            continue

        best = np.inf
        best_f = -1
        best_i = -1
        perm = np.argsort(keys[node])
        scored = 0
        for t in range(p):
            if scored >= max_features:
                break
            f = perm[t]
            if not XT[f, orderT[f, e - 1]] > XT[f, orderT[f, s]]:
                continue
            scored += 1
            WL = 0.0
            W1L = 0.0
            for i in range(s, e - 1):
                r = orderT[f, i]
                WL += w[r]
                W1L += w[r] * y[r]
                if not XT[f, orderT[f, i + 1]] > XT[f, r]:
                    continue
                WR = W - WL
                if WL < min_samples_leaf or WR < min_samples_leaf:
                    continue
                W1R = W1 - W1L
                imp = 2.0 * W1L * (WL - W1L) / WL + 2.0 * W1R * (WR - W1R) / WR
                if imp < best:
                    best = imp
                    best_f = f
                    best_i = i
        if best_f < 0:
            continue

        lo = XT[best_f, orderT[best_f, best_i]]
        hi = XT[best_f, orderT[best_f, best_i + 1]]
        thr = 0.5 * (lo + hi)
        if not lo < thr:
            thr = hi
        feature[node] = best_f
        threshold[node] = thr
        nl = 0
        for i in range(s, e):
            r = orderT[0, i]
            go = XT[best_f, r] < thr
            goes_left[r] = go
            if go:
                nl += 1
        for c in range(p):
            a = 0
            b = nl
            for i in range(s, e):
                r = orderT[c, i]
                if goes_left[r]:
                    buf[a] = r
                    a += 1
                else:
                    buf[b] = r
                    b += 1
            for i in range(e - s):
                orderT[c, s + i] = buf[i]
        st_s[sp] = s + nl
        st_e[sp] = e
        st_d[sp] = d + 1
        st_parent[sp] = node
        st_isleft[sp] = False
        sp += 1
        st_s[sp] = s
        st_e[sp] = s + nl
        st_d[sp] = d + 1
        st_parent[sp] = node
        st_isleft[sp] = True
        sp += 1
    return (left[:n_nodes], right[:n_nodes], feature[:n_nodes], threshold[:n_nodes],
            value[:n_nodes], weight[:n_nodes])


@dataclass(eq=False)
class CartTree:
    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray  # positive-class frequency
    weight: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int64)
        rows = np.arange(n)
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                return self.value[node]
            x = X[rows, np.where(internal, f, 0)]
            nxt = np.where(x < self.threshold[node], self.left[node], self.right[node])
            node = np.where(internal, nxt, node)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("left", "right", "feature", "threshold", "value", "weight")}

    @classmethod
    def from_dict(cls, d: dict) -> "CartTree":
        ints = ("left", "right", "feature")
        return cls(**{k: np.array(v, dtype=np.int64 if k in ints else float) for k, v in d.items()})


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    max_features: int | None = None  # None -> floor(sqrt(p))
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if int(self.n_trees) < 1:
            raise ParameterError("n_trees must be >= 1")
        if self.max_depth is not None and int(self.max_depth) < 1:
            raise ParameterError("max_depth must be >= 1 or None")
        if int(self.min_samples_leaf) < 1:
            raise ParameterError("min_samples_leaf must be >= 1")
        if self.max_features is not None and int(self.max_features) < 1:
            raise ParameterError("max_features must be >= 1 or None")

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "max_features": self.max_features,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple
    params: ForestParams
    feature_names: tuple

    kind = "random_forest"

    def predict_proba(self, rows) -> np.ndarray:
        X = _matrix(self.feature_names, rows)
        total = np.zeros(X.shape[0])
        for t in self.trees:
            total += t.predict(X)
        return total / len(self.trees)

    def truncated(self, n_trees: int) -> "ForestModel":
        params = ForestParams(**{**self.params.to_dict(), "n_trees": n_trees})
        return ForestModel(self.trees[:n_trees], params, self.feature_names)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": self.params.to_dict(),
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls(tuple(CartTree.from_dict(t) for t in d["trees"]), ForestParams(**d["params"]),
                   tuple(d["feature_names"]))


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(tree_index)]))


def fit_forest(train: Cohort, params: ForestParams | None = None, **overrides) -> ForestModel:
    """Bagged gini CART trees; tree ``t`` draws all its randomness from ``(seed, t)``."""
    if params is None:
        params = ForestParams(**overrides)
    elif overrides:
        params = ForestParams(**{**params.to_dict(), **overrides})
    if np.isnan(train.y).any():
        raise ClassError("training outcome has missing values")
    if train.n == 0:
        raise ClassError("forest needs at least one training row")
    X = np.ascontiguousarray(train.X)
    if np.isnan(X).any():
        raise ParameterError("random forest needs imputed data")
    n, p = X.shape
    XT = np.ascontiguousarray(X.T)
    y = train.y
    mtry = params.max_features or max(1, int(math.isqrt(p)))
    mtry = min(mtry, p)
    depth = -1 if params.max_depth is None else int(params.max_depth)
    full_order = presort(X)
    trees = []
    for t in range(int(params.n_trees)):
        rng = tree_rng(params.seed, t)
        if params.bootstrap:
            w = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
            order = full_order[(w > 0)[full_order]].reshape(p, -1)
        else:
            w = np.ones(n)
            order = full_order.copy()
        m = order.shape[1]
        keys = rng.random((2 * m + 1, p))
        arrays = _grow_cart(XT, y, w, order, depth, float(params.min_samples_leaf), mtry, keys)
        trees.append(CartTree(*arrays))
    return ForestModel(tuple(trees), params, tuple(train.feature_names))


# --------------------------------------------------------------------------- knn


@dataclass(frozen=True, eq=False)
class KnnModel:
    Z: np.ndarray  # standardized training matrix
    labels: np.ndarray
    k: int
    means: np.ndarray
    stds: np.ndarray
    feature_names: tuple

    kind = "knn"

    def neighbours(self, rows, chunk: int = 32) -> np.ndarray:
        """Indices of the k nearest training rows; distance ties go to the lower index."""
        Q = (_matrix(self.feature_names, rows) - self.means) / self.stds
        out = np.empty((Q.shape[0], self.k), dtype=np.int64)
        for s in range(0, Q.shape[0], chunk):
            diff = Q[s : s + chunk, None, :] - self.Z[None, :, :]
            # snap rounding noise so exact ties in the data fall to the lower index
            d2 = np.round(np.einsum("qnp,qnp->qn", diff, diff), 12)
            out[s : s + chunk] = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
        return out

    def predict_proba(self, rows) -> np.ndarray:
        return self.labels[self.neighbours(rows)].mean(axis=1)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "Z": self.Z.tolist(),
            "labels": self.labels.tolist(),
            "k": self.k,
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnnModel":
        return cls(np.array(d["Z"], dtype=float).reshape(len(d["labels"]), -1), np.array(d["labels"], dtype=float),
                   int(d["k"]), np.array(d["means"], dtype=float), np.array(d["stds"], dtype=float),
                   tuple(d["feature_names"]))


def fit_knn(train: Cohort, k: int = 5) -> KnnModel:
    k = int(k)
    if k < 1 or k % 2 == 0:
        raise ParameterError("k must be a positive odd integer")
    if k > train.n:
        raise ParameterError(f"k={k} exceeds training size {train.n}")
    if np.isnan(train.y).any():
        raise ClassError("training outcome has missing values")
    mu, sd = _standardization(train.X)
    return KnnModel((train.X - mu) / sd, np.array(train.y), k, mu, sd, tuple(train.feature_names))


def predict_knn(model: KnnModel, rows) -> np.ndarray:
    return model.predict_proba(rows)


def load_model(d: dict):
    """Rebuild any fitted model from its ``to_dict`` form via the kind field."""
    from .boost import BoostedEnsemble

    kinds = {
        BoostedEnsemble.kind: BoostedEnsemble,
        LinearModel.kind: LinearModel,
        ForestModel.kind: ForestModel,
        KnnModel.kind: KnnModel,
    }
    try:
        cls = kinds[d["kind"]]
    except KeyError:
        raise ParameterError(f"unknown model kind {d.get('kind')!r}") from None
    return cls.from_dict(d)
