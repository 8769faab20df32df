"""Second-order gradient-boosted regression trees with a logistic link.

Trees are grown depth-first with exact greedy split search: every midpoint
between consecutive distinct sorted values of every candidate feature is
scored with the regularized gain

    0.5 * [G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam)] - gamma

and leaves take the Newton weight -G/(H+lam), pre-multiplied by the
learning rate.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy.special import expit

from .cohort import Cohort
from .errors import ClassError, ParameterError, SchemaMismatchError

HESSIAN_FLOOR = 1e-16
_P_LO = np.finfo(float).tiny
_P_HI = 1.0 - np.finfo(float).epsneg


def sigmoid(margin):
    """Logistic link, clipped so probabilities stay strictly inside (0, 1)."""
    return np.clip(expit(margin), _P_LO, _P_HI)


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def logistic_loss(margin: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood, computed stably from margins."""
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


def grad_hess(margin: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = sigmoid(margin)
    return p - y, p * (1.0 - p)


@dataclass(frozen=True)
class BoostParams:
    n_trees: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0
    gamma: float = 0.0
    subsample: float = 1.0
    colsample: float = 1.0
    base_score: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if int(self.n_trees) < 1:
            raise ParameterError("n_trees must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ParameterError("learning_rate must lie in (0, 1]")
        if int(self.max_depth) < 1:
            raise ParameterError("max_depth must be >= 1")
        if self.min_child_weight < 0 or self.reg_lambda < 0 or self.gamma < 0:
            raise ParameterError("min_child_weight, reg_lambda and gamma must be >= 0")
        if not 0.0 < self.subsample <= 1.0 or not 0.0 < self.colsample <= 1.0:
            raise ParameterError("subsample and colsample must lie in (0, 1]")
        if not 0.0 < self.base_score < 1.0:
            raise ParameterError("base_score must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    gain: float
    default_left: bool


@dataclass(eq=False)
class Tree:
    """Flat array tree; node 0 is the root, nodes stored in preorder.

    Leaves have ``feature == -1`` and ``left == right == -1``. ``value``
    holds the shrunken leaf weight; ``cover`` the training hessian sum.
    """

    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    @property
    def depth(self) -> int:
        def d(node):
            if self.feature[node] < 0:
                return 0
            return 1 + max(d(self.left[node]), d(self.right[node]))

        return d(0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int64)
        rows = np.arange(n)
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                return node
            x = X[rows, np.where(internal, f, 0)]
            go_left = np.where(np.isnan(x), self.default_left[node], x < self.threshold[node])
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(internal, nxt, node)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def expected_value(self) -> float:
        leaves = self.feature < 0
        return float(np.sum(self.value[leaves] * self.cover[leaves]) / self.cover[0])

    def to_dict(self, node: int = 0) -> dict:
        if self.feature[node] < 0:
            return {"leaf": float(self.value[node]), "cover": float(self.cover[node])}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "default": "left" if self.default_left[node] else "right",
            "gain": float(self.gain[node]),
            "cover": float(self.cover[node]),
            "left": self.to_dict(int(self.left[node])),
            "right": self.to_dict(int(self.right[node])),
        }

    @classmethod
    def from_dict(cls, root: dict) -> "Tree":
        b = _TreeBuilder()

        def walk(d):
            if "leaf" in d:
                return b.add_leaf(d["leaf"], d["cover"])
            idx = b.add_split(d["feature"], d["threshold"], d["default"] == "left", d["gain"], d["cover"])
            b.link(idx, walk(d["left"]), walk(d["right"]))
            return idx

        walk(root)
        return b.build()

    @classmethod
    def stump(cls, feature: int, threshold: float, left_value: float, right_value: float,
              left_cover: float = 1.0, right_cover: float = 1.0, gain: float = 0.0) -> "Tree":
        """Hand-built depth-1 tree (tests, examples)."""
        b = _TreeBuilder()
        root = b.add_split(feature, threshold, True, gain, left_cover + right_cover)
        b.link(root, b.add_leaf(left_value, left_cover), b.add_leaf(right_value, right_cover))
        return b.build()


class _TreeBuilder:
    def __init__(self):
        self.rows = []  # [left, right, feature, threshold, default_left, value, gain, cover]

    def add_leaf(self, value, cover) -> int:
        self.rows.append([-1, -1, -1, 0.0, True, float(value), 0.0, float(cover)])
        return len(self.rows) - 1

    def add_split(self, feature, threshold, default_left, gain, cover) -> int:
        self.rows.append([-1, -1, int(feature), float(threshold), bool(default_left), 0.0, float(gain), float(cover)])
        return len(self.rows) - 1

    def link(self, node, left, right):
        self.rows[node][0] = left
        self.rows[node][1] = right

    def build(self) -> Tree:
        cols = list(zip(*self.rows))
        return Tree(
            left=np.array(cols[0], dtype=np.int64),
            right=np.array(cols[1], dtype=np.int64),
            feature=np.array(cols[2], dtype=np.int64),
            threshold=np.array(cols[3], dtype=float),
            default_left=np.array(cols[4], dtype=bool),
            value=np.array(cols[5], dtype=float),
            gain=np.array(cols[6], dtype=float),
            cover=np.array(cols[7], dtype=float),
        )


# ------------------------------------------------------------------ split search


@njit(cache=True)
def _grow(XT, g, h, orderT, cols, max_depth, lam, gamma, mcw, lr):
    """Depth-first growth over presorted segments (``XT`` is features x rows).

    ``orderT[c, s:e]`` holds the rows of the current node sorted by
    ``X[:, cols[c]]`` (NaN last). Children are carved out by a stable
    in-place partition, so every column stays sorted inside each segment.
    Nodes are numbered in preorder.
    """
    k, m = orderT.shape
    cap = 2 * m + 1
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    default_left = np.ones(cap, np.bool_)
    value = np.zeros(cap)
    gain = np.zeros(cap)
    cover = np.zeros(cap)

    buf = np.empty(m, np.int64)
    goes_left = np.zeros(XT.shape[1], np.bool_)
    st_s = np.empty(cap, np.int64)
    st_e = np.empty(cap, np.int64)
    st_d = np.empty(cap, np.int64)
    st_parent = np.empty(cap, np.int64)
    st_isleft = np.empty(cap, np.bool_)
    sp = 0
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

        G = 0.0
        H = 0.0
        for i in range(s, e):
            r = orderT[0, i]
            G += g[r]
            H += h[r]
        cover[node] = H

        found = False
        best_gain = 0.0
        best_c = -1
        best_i = -1
        best_left = True
        if d < max_depth and e - s >= 2:
            parent_score = G * G / max(H + lam, HESSIAN_FLOOR)
            for c in range(k):
                f = cols[c]
                nv = e
                while nv > s and np.isnan(XT[f, orderT[c, nv - 1]]):
                    nv -= 1
                has_miss = nv < e
                Gm = 0.0
                Hm = 0.0
                for i in range(nv, e):
                    Gm += g[orderT[c, i]]
                    Hm += h[orderT[c, i]]
                GL = 0.0
                HL = 0.0
                for i in range(s, nv - 1):
                    r = orderT[c, i]
                    GL += g[r]
                    HL += h[r]
                    if not XT[f, orderT[c, i + 1]] > XT[f, r]:
                        continue
                    cand = -np.inf
                    cand_left = True
                    GR = G - GL
                    HR = H - HL
                    if HL >= mcw and HR >= mcw:
                        cand = 0.5 * (GL * GL / max(HL + lam, HESSIAN_FLOOR)
                                      + GR * GR / max(HR + lam, HESSIAN_FLOOR) - parent_score) - gamma
                        # no missing rows: direction unlearnable, default left
                        cand_left = not has_miss
                    if has_miss:
                        GLm = GL + Gm
                        HLm = HL + Hm
                        GRm = G - GLm
                        HRm = H - HLm
                        if HLm >= mcw and HRm >= mcw:
                            gl = 0.5 * (GLm * GLm / max(HLm + lam, HESSIAN_FLOOR)
                                        + GRm * GRm / max(HRm + lam, HESSIAN_FLOOR) - parent_score) - gamma
                            if gl >= cand:
                                cand = gl
                                cand_left = True
                    if cand > best_gain:
                        found = True
                        best_gain = cand
                        best_c = c
                        best_i = i
                        best_left = cand_left

        if not found:
            value[node] = -G / max(H + lam, HESSIAN_FLOOR) * lr
            continue

        f = cols[best_c]
        lo = XT[f, orderT[best_c, best_i]]
        hi = XT[f, orderT[best_c, best_i + 1]]
        thr = 0.5 * (lo + hi)
        if not lo < thr:
            thr = hi
        feature[node] = f
        threshold[node] = thr
        default_left[node] = best_left
        gain[node] = best_gain

        nl = 0
        for i in range(s, e):
            r = orderT[0, i]
            x = XT[f, r]
            go = best_left if np.isnan(x) else x < thr
            goes_left[r] = go
            if go:
                nl += 1
        for c in range(k):
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
            default_left[:n_nodes], value[:n_nodes], gain[:n_nodes], cover[:n_nodes])


def presort(X: np.ndarray) -> np.ndarray:
    """Row indices sorted per column, as a (columns x rows) array; NaN last."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


def _restrict(orderT: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Drop rows not flagged in ``keep`` (a global row mask), preserving order."""
    k = orderT.shape[0]
    return orderT[keep[orderT]].reshape(k, -1)


def grow_tree(X, g, h, params: BoostParams, orderT: np.ndarray | None = None,
              cols: np.ndarray | None = None, max_depth: int | None = None, XT=None) -> Tree:
    """Grow one regression tree on gradient/hessian statistics.

    ``orderT`` (len(cols) x rows) may be supplied presorted; rows absent
    from it are ignored, which is how row subsampling is applied.
    """
    X = np.ascontiguousarray(X, dtype=float)
    if cols is None:
        cols = np.arange(X.shape[1], dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if orderT is None:
        orderT = presort(X[:, cols])
    else:
        orderT = np.array(orderT, dtype=np.int64, order="C", copy=True)
    arrays = _grow(
        np.ascontiguousarray(X.T) if XT is None else XT,
        np.ascontiguousarray(g, dtype=float),
        np.ascontiguousarray(h, dtype=float),
        orderT,
        cols,
        int(params.max_depth if max_depth is None else max_depth),
        float(params.reg_lambda),
        float(params.gamma),
        float(params.min_child_weight),
        float(params.learning_rate),
    )
    return Tree(*arrays)


def find_best_split(X, g, h, params: BoostParams, cols: Sequence[int] | None = None) -> Split | None:
    """Best root split (or None when no split has positive gain)."""
    X = np.ascontiguousarray(X, dtype=float)
    cols = np.arange(X.shape[1]) if cols is None else np.sort(np.asarray(cols))
    tree = grow_tree(X, g, h, params, cols=cols, max_depth=1)
    if tree.feature[0] < 0:
        return None
    return Split(int(tree.feature[0]), float(tree.threshold[0]), float(tree.gain[0]), bool(tree.default_left[0]))


# ---------------------------------------------------------------------- ensemble


@dataclass(frozen=True, eq=False)
class BoostedEnsemble:
    trees: tuple
    learning_rate: float
    base_margin: float
    feature_names: tuple
    params: BoostParams | None = None
    train_loss: tuple = field(default=(), repr=False)

    kind = "boosted_trees"

    def _matrix(self, rows) -> np.ndarray:
        if isinstance(rows, Cohort):
            if rows.feature_names != list(self.feature_names):
                if set(rows.feature_names) >= set(self.feature_names):
                    rows = rows.select_features(self.feature_names)
                else:
                    missing = sorted(set(self.feature_names) - set(rows.feature_names))
                    raise SchemaMismatchError(f"rows lack model features {missing}")
            return rows.X
        X = np.asarray(rows, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise SchemaMismatchError(f"expected {len(self.feature_names)} feature columns")
        return X

    def predict_margin(self, rows) -> np.ndarray:
        X = self._matrix(rows)
        out = np.full(X.shape[0], self.base_margin)
        for tree in self.trees:
            out += tree.predict(X)
        return out

    def predict_proba(self, rows) -> np.ndarray:
        return sigmoid(self.predict_margin(rows))

    def truncated(self, n_trees: int) -> "BoostedEnsemble":
        """The first ``n_trees`` rounds; identical to refitting with that many trees."""
        params = None if self.params is None else BoostParams(**{**self.params.to_dict(), "n_trees": n_trees})
        return BoostedEnsemble(self.trees[:n_trees], self.learning_rate, self.base_margin,
                               self.feature_names, params, self.train_loss[: n_trees + 1])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": None if self.params is None else self.params.to_dict(),
            "learning_rate": self.learning_rate,
            "base_margin": self.base_margin,
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedEnsemble":
        params = None if d.get("params") is None else BoostParams(**d["params"])
        return cls(
            trees=tuple(Tree.from_dict(t) for t in d["trees"]),
            learning_rate=d["learning_rate"],
            base_margin=d["base_margin"],
            feature_names=tuple(d["feature_names"]),
            params=params,
        )


def round_rng(seed: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(round_index)]))


def fit(train: Cohort, params: BoostParams | None = None, **overrides) -> BoostedEnsemble:
    """Fit the boosted ensemble. Rows with missing features are allowed."""
    if params is None:
        params = BoostParams(**overrides)
    elif overrides:
        params = BoostParams(**{**params.to_dict(), **overrides})
    if np.isnan(train.y).any():
        raise ClassError("training outcome has missing values")
    neg, pos = train.class_counts()
    if neg == 0 or pos == 0:
        raise ClassError("boosting needs both outcome classes")
    X, y = np.ascontiguousarray(train.X), train.y
    n, p = X.shape
    base = logit(params.base_score)
    margin = np.full(n, base)
    full_order = presort(X)
    XT = np.ascontiguousarray(X.T)
    trees = []
    losses = [logistic_loss(margin, y)]
    for r in range(int(params.n_trees)):
        g, h = grad_hess(margin, y)
        rng = round_rng(params.seed, r)
        order = full_order
        cols = np.arange(p, dtype=np.int64)
        if params.colsample < 1.0:
            kc = max(1, int(math.floor(params.colsample * p + 0.5)))
            cols = np.sort(rng.choice(p, size=kc, replace=False)).astype(np.int64)
            order = order[cols]
        if params.subsample < 1.0:
            k = max(2, int(math.floor(params.subsample * n + 0.5)))
            keep = np.zeros(n, dtype=bool)
            keep[rng.choice(n, size=min(k, n), replace=False)] = True
            order = _restrict(order, keep)
        tree = grow_tree(X, g, h, params, orderT=order, cols=cols, XT=XT)
        trees.append(tree)
        margin = margin + tree.predict(X)
        losses.append(logistic_loss(margin, y))
    return BoostedEnsemble(tuple(trees), params.learning_rate, base, tuple(train.feature_names), params, tuple(losses))


def predict_margin(model: BoostedEnsemble, rows) -> np.ndarray:
    return model.predict_margin(rows)


def predict_proba(model: BoostedEnsemble, rows) -> np.ndarray:
    return model.predict_proba(rows)


def gain_importance(model: BoostedEnsemble) -> list[tuple[str, float]]:
    """Total split gain per feature, descending; ties ordered by name."""
    totals = np.zeros(len(model.feature_names))
    for tree in model.trees:
        internal = tree.feature >= 0
        np.add.at(totals, tree.feature[internal], tree.gain[internal])
    pairs = [(name, float(v)) for name, v in zip(model.feature_names, totals)]
    return sorted(pairs, key=lambda t: (-t[1], t[0]))
