import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hfmort.boost import BoostedEnsemble, Tree, _TreeBuilder, fit
from hfmort.cohort import Cohort
from hfmort.errors import SchemaMismatchError
from hfmort.explain import ShapMatrix, direction_check, shap_summary, tree_expected_value, tree_shap
from oracles import brute_force_shap


def _ensemble(trees, p, base=0.0):
    return BoostedEnsemble(tuple(trees), 1.0, base, tuple(f"x{j}" for j in range(p)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), p=st.integers(1, 5), depth=st.integers(1, 4), missing=st.booleans())
def test_tree_shap_matches_coalition_enumeration(seed, p, depth, missing):
    r = np.random.default_rng(seed)
    X = np.round(r.normal(size=(60, p)), 1)
    if missing:
        X[r.random(X.shape) < 0.15] = np.nan
    y = (np.nan_to_num(X[:, 0]) + r.normal(size=60) > 0).astype(float)
    y[:2] = [0.0, 1.0]
    m = fit(Cohort.from_arrays(X, y), n_trees=4, max_depth=depth, learning_rate=0.5, min_child_weight=0.0)
    rows = X[:6]
    shap = tree_shap(m, rows)
    for i, x in enumerate(rows):
        phi, v0 = brute_force_shap(m, x)
        np.testing.assert_allclose(shap.values[i], phi, atol=1e-10)
        assert shap.base_value == pytest.approx(v0, abs=1e-10)


def test_local_accuracy_on_planted(planted_prepared):
    prep, balanced = planted_prepared
    m = fit(balanced, n_trees=50, max_depth=3)
    s = tree_shap(m, prep.test)
    np.testing.assert_allclose(s.values.sum(axis=1) + s.base_value, m.predict_margin(prep.test), atol=1e-9)
    assert s.row_ids == tuple(prep.test.row_ids)


def test_stump_hand_case():
    t = Tree.stump(0, 0.5, -1.0, 3.0, left_cover=3.0, right_cover=1.0)
    m = _ensemble([t], 2, base=0.25)
    s = tree_shap(m, np.array([[0.0, 9.0], [1.0, -9.0]]))
    assert s.base_value == pytest.approx(0.25 + 0.0)
    np.testing.assert_allclose(s.values, [[-1.0, 0.0], [3.0, 0.0]])
    assert tree_expected_value(t) == pytest.approx(0.0)


def test_dummy_feature_gets_zero():
    r = np.random.default_rng(1)
    X = r.normal(size=(200, 3))
    y = (X[:, 0] - X[:, 1] > 0).astype(float)
    m = fit(Cohort.from_arrays(X, y), n_trees=10, max_depth=2, colsample=1.0)
    used = {int(f) for t in m.trees for f in t.feature if f >= 0}
    s = tree_shap(m, X[:20])
    for j in set(range(3)) - used:
        assert np.all(s.values[:, j] == 0.0)


def test_symmetric_features_share_credit():
    # x0 and x1 play interchangeable roles: value 1 only when both exceed 0
    b = _TreeBuilder()
    root = b.add_split(0, 0.0, True, 1.0, 4.0)
    l0 = b.add_leaf(0.0, 2.0)
    r0 = b.add_split(1, 0.0, True, 1.0, 2.0)
    b.link(r0, b.add_leaf(0.0, 1.0), b.add_leaf(1.0, 1.0))
    b.link(root, l0, r0)
    m = _ensemble([b.build()], 2)
    s = tree_shap(m, np.array([[1.0, 1.0]]))
    assert s.values[0, 0] == pytest.approx(s.values[0, 1])
    assert s.values[0].sum() + s.base_value == pytest.approx(1.0)


def test_attributions_are_additive_over_trees(planted_prepared):
    prep, balanced = planted_prepared
    m = fit(balanced, n_trees=8, max_depth=3)
    rows = prep.test.take(np.arange(15))
    total = tree_shap(m, rows).values
    parts = sum(tree_shap(BoostedEnsemble((t,), m.learning_rate, 0.0, m.feature_names), rows).values
                for t in m.trees)
    np.testing.assert_allclose(total, parts, atol=1e-12)


def test_summary_ranking_and_beeswarm(planted_prepared):
    prep, balanced = planted_prepared
    m = fit(balanced, n_trees=30, max_depth=3)
    s = tree_shap(m, prep.test)
    summ = shap_summary(s, prep.test, top_k=5)
    vals = [v for _, v in summ.ranking]
    assert len(summ.ranking) == 5 and vals == sorted(vals, reverse=True)
    assert vals[0] == pytest.approx(np.abs(s.column(summ.ranking[0][0])).mean())
    assert len(summ.beeswarm) == 5 * prep.test.n
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        full = shap_summary(s, prep.test, top_k=500)
    assert len(full.ranking) == s.values.shape[1] and w
    with pytest.raises(SchemaMismatchError):
        shap_summary(s, prep.train, top_k=5)


def test_direction_check_signs():
    x = np.linspace(-2, 2, 50)
    X = np.column_stack([x, -x, np.zeros(50) + 1.0])
    t_up = Tree.stump(0, 0.0, -1.0, 1.0, 25.0, 25.0)
    m = _ensemble([t_up], 3)
    c = Cohort.from_arrays(X, (x > 0).astype(float))
    s = tree_shap(m, c)
    assert direction_check(s, c, "x0") == 1
    assert direction_check(s, c, "x2") == 0
    down = _ensemble([Tree.stump(1, 0.0, 1.0, -1.0, 25.0, 25.0)], 3)
    assert direction_check(tree_shap(down, c), c, "x1") == -1
    with pytest.raises(SchemaMismatchError):
        direction_check(s, c, "nope")


# --------------------------------------------------------- worked examples


def test_two_identical_stumps_double_attributions():
    t = Tree.stump(1, 0.0, 2.0, -1.0, left_cover=1.0, right_cover=2.0)
    rows = np.array([[0.3, -1.0], [0.3, 4.0], [-2.0, 0.0]])
    one = tree_shap(_ensemble([t], 2), rows)
    two = tree_shap(_ensemble([t, t], 2), rows)
    np.testing.assert_array_equal(two.values, 2.0 * one.values)


def test_summary_zero_matrix_is_name_ordered():
    names = ("zeta", "alpha", "mid")
    s = ShapMatrix(np.zeros((4, 3)), 0.0, names, tuple("abcd"))
    c = Cohort.from_arrays(np.ones((4, 3)), [0, 1, 0, 1], names=names)
    summ = shap_summary(s, c, top_k=3)
    assert summ.ranking == (("alpha", 0.0), ("mid", 0.0), ("zeta", 0.0))


def test_summary_dominant_column_first():
    r = np.random.default_rng(2)
    v = r.normal(scale=0.1, size=(30, 4))
    v[:, 2] *= 50
    s = ShapMatrix(v, 0.0, ("a", "b", "c", "d"), tuple(range(30)))
    summ = shap_summary(s, Cohort.from_arrays(r.normal(size=(30, 4)), r.integers(0, 2, 30),
                                              names=("a", "b", "c", "d")), top_k=2)
    assert summ.ranking[0][0] == "c"


def test_direction_attribution_equal_to_value_is_positive():
    x = np.array([-1.5, 0.2, 3.0, 0.7, -0.1])
    s = ShapMatrix(x[:, None].copy(), 0.0, ("x",), tuple(range(5)))
    assert direction_check(s, Cohort.from_arrays(x[:, None], [0, 1, 1, 0, 1], names=("x",)), "x") == 1


def test_planted_signal_recovered(planted_prepared):
    prep, balanced = planted_prepared
    m = fit(balanced, n_trees=200, max_depth=3, learning_rate=0.1, seed=42)
    s = tree_shap(m, prep.test)
    top3 = [f for f, _ in shap_summary(s, prep.test, top_k=3).ranking]
    assert "Leucocyte" in top3
    for name, sign in (("Leucocyte", 1), ("RDW", 1), ("Urine_output", -1)):
        assert direction_check(s, prep.test, name) == sign, name
