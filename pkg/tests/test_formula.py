from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from prinstrat.exceptions import DataError, FormulaError
from prinstrat.formula import (
    INTERCEPT,
    bind_roles,
    build_design,
    parse_formula,
    render_formula,
)

CORPUS = [
    "Z + D ~ X",
    "Y ~ X1 + X2 - 1",
    "Y ~ X + V + (X | C)",
    "Y ~ X1 * X2",
    "Y ~ a * b * c",
    "Y ~ I(X1^2) + log(X2) + exp(X3)",
    "Y + delta ~ X + (1 | C)",
    "Y ~ X + (X - 1 | C)",
    "Y ~ 0 + X",
    "Z + D1 + D2 ~ 1",
    "Y ~ (0 + X | C) + V",
]


def names(ast):
    return [t.render() for t in ast.fixed_terms]


def test_s_formula_roles():
    ast = parse_formula("Z + D ~ X")
    assert ast.lhs_vars == ("Z", "D")
    assert names(ast) == ["X"]
    assert ast.has_intercept


def test_minus_one_drops_intercept():
    ast = parse_formula("Y ~ X1 + X2 - 1")
    assert not ast.has_intercept
    assert names(ast) == ["X1", "X2"]
    assert not parse_formula("Y ~ X1 + 0").has_intercept


def test_random_term():
    ast = parse_formula("Y ~ X + V + (X | C)")
    assert names(ast) == ["X", "V"]
    (r,) = ast.random_terms
    assert [t.render() for t in r.inner_terms] == ["X"]
    assert r.inner_intercept and r.group_var == "C"
    assert not parse_formula("Y ~ (X - 1 | C)").random_terms[0].inner_intercept
    assert not parse_formula("Y ~ (X + 0 | C)").random_terms[0].inner_intercept


def test_star_expansion():
    assert names(parse_formula("Y ~ X1 * X2")) == ["X1", "X2", "X1:X2"]
    three = names(parse_formula("Y ~ a*b*c"))
    assert len(three) == 7 and three[-1] == "a:b:c"


def test_duplicate_terms_removed():
    assert names(parse_formula("Y ~ X + X + X1*X2 + X2:X1")) == ["X", "X1", "X2", "X1:X2"]


@pytest.mark.parametrize("text", ["Y ~ X +", "Y X", "Y ~ ~ X", "Y ~ (X | (Z | C))", "Y ~ sqrt(X)", "~ X"])
def test_parse_errors(text):
    with pytest.raises(FormulaError):
        parse_formula(text)


def test_error_reports_offset():
    with pytest.raises(FormulaError) as info:
        parse_formula("Y ~ X + + V")
    assert info.value.offset == 8
    assert "byte 8" in str(info.value)


@pytest.mark.parametrize("text", CORPUS)
def test_render_round_trip(text):
    ast = parse_formula(text)
    assert parse_formula(render_formula(ast)) == ast


def test_intercept_only_design():
    dm = build_design(parse_formula("Y ~ 1"), pd.DataFrame({"Y": np.arange(5.0)}))
    assert dm.values.shape == (5, 1)
    assert np.all(dm.values == 1.0)
    assert list(dm.column_names) == [INTERCEPT]


def test_interaction_column():
    df = pd.DataFrame({"Y": [0.0, 0.0], "X1": [1.0, 2.0], "X2": [3.0, 4.0]})
    dm = build_design(parse_formula("Y ~ X1:X2 - 1"), df)
    np.testing.assert_array_equal(dm.values[:, 0], [3.0, 8.0])


def test_transforms():
    df = pd.DataFrame({"Y": [0.0, 0.0], "X": [2.0, 3.0]})
    dm = build_design(parse_formula("Y ~ I(X^2) + log(X) + exp(X) - 1"), df)
    np.testing.assert_allclose(dm.values, np.column_stack([[4, 9], np.log([2, 3]), np.exp([2, 3])]))


def test_random_intercept_matches_indicator_expansion():
    df = pd.DataFrame({"Y": np.zeros(6), "X": np.arange(6.0), "C": ["b", "a", "c", "a", "b", "c"]})
    dm = build_design(parse_formula("Y ~ X + (1 | C)"), df)
    (blk,) = dm.random
    assert blk.n_groups == 3 and blk.width == 1
    hand = pd.get_dummies(df["C"]).to_numpy(float)  # lexicographic levels a, b, c
    ours = np.zeros((6, 3))
    ours[np.arange(6), blk.group_index] = blk.values[:, 0]
    np.testing.assert_array_equal(ours, hand)


def test_categorical_treatment_coding():
    df = pd.DataFrame({"Y": np.zeros(4), "G": ["b", "a", "c", "a"]})
    dm = build_design(parse_formula("Y ~ G"), df)
    assert list(dm.column_names) == [INTERCEPT, "G[T.b]", "G[T.c]"]
    np.testing.assert_array_equal(dm.values[:, 1:], [[1, 0], [0, 0], [0, 1], [0, 0]])


def test_design_errors():
    df = pd.DataFrame({"Y": [1.0, 2.0], "X": [1.0, np.inf], "G": ["a", "a"]})
    with pytest.raises(DataError):
        build_design(parse_formula("Y ~ W"), df)
    with pytest.raises(DataError):
        build_design(parse_formula("Y ~ X"), df)
    with pytest.raises(DataError):
        build_design(parse_formula("Y ~ G"), df)


def test_bind_roles():
    df = pd.DataFrame({"Z": [0, 1], "D": [0, 1], "D1": [0, 1], "D2": [1, 1], "Y": [0.1, 0.2], "X": [1, 2]})
    r = bind_roles(parse_formula("Z + D ~ X"), parse_formula("Y ~ X"), "gaussian", df)
    assert (r.treatment, r.intermediates, r.outcome) == ("Z", ("D",), "Y")
    r2 = bind_roles(parse_formula("Z + D1 + D2 ~ X"), parse_formula("Y ~ X"), "gaussian", df)
    assert r2.intermediates == ("D1", "D2")
    with pytest.raises(FormulaError):
        bind_roles(parse_formula("Z1 + Z2 + D ~ X"), parse_formula("Y ~ X"), "gaussian",
                   treatment=["Z1", "Z2"])


def test_bind_roles_errors():
    df = pd.DataFrame({"Z": [0, 2], "D": [0, 1], "Y": [0.1, 0.2]})
    with pytest.raises(DataError):
        bind_roles(parse_formula("Z + D ~ 1"), parse_formula("Y ~ 1"), "gaussian", df)
    with pytest.raises(FormulaError):
        bind_roles(parse_formula("Z + D ~ 1"), parse_formula("Y ~ 1"), {"family": "survival", "link": "Cox"})


@st.composite
def schemas(draw):
    n = draw(st.integers(3, 12))
    n_num = draw(st.integers(1, 3))
    n_cat = draw(st.integers(0, 2))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    cols = {"Y": rng.standard_normal(n)}
    num = [f"x{i}" for i in range(n_num)]
    for c in num:
        cols[c] = rng.standard_normal(n)
    cat, widths = [], {}
    for j in range(n_cat):
        k = draw(st.integers(2, 3))
        lv = np.array([f"l{i}" for i in range(k)])
        vals = np.concatenate([lv, rng.choice(lv, n - k)])
        rng.shuffle(vals)
        cols[f"g{j}"] = vals
        cat.append(f"g{j}")
        widths[f"g{j}"] = k - 1
    inter = draw(st.booleans()) and n_num >= 2
    re = draw(st.booleans()) and cat
    return pd.DataFrame(cols), num, cat, widths, inter, re


@settings(max_examples=40, deadline=None)
@given(schemas(), st.booleans(), st.integers(0, 10**6))
def test_column_count_and_row_permutation(schema, intercept, perm_seed):
    df, num, cat, widths, inter, re = schema
    terms = num + cat + (["x0:x1"] if inter else [])
    rhs = " + ".join(terms) + ("" if intercept else " - 1")
    if re:
        rhs += f" + (x0 | {cat[0]})"
    ast = parse_formula(f"Y ~ {rhs}")
    dm = build_design(ast, df)
    expected = int(intercept) + len(num) + sum(widths.values()) + int(inter)
    assert dm.n_fixed == expected
    re_width = sum(b.width * b.n_groups for b in dm.random)
    if re:
        assert re_width == 2 * (widths[cat[0]] + 1)
    perm = np.random.default_rng(perm_seed).permutation(len(df))
    dp = build_design(ast, df.iloc[perm].reset_index(drop=True))
    np.testing.assert_array_equal(dp.values, dm.values[perm])
    for a, b in zip(dp.random, dm.random):
        np.testing.assert_array_equal(a.values, b.values[perm])
        np.testing.assert_array_equal(a.group_index, b.group_index[perm])
