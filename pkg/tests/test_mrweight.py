from __future__ import annotations

import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from prinstrat.exceptions import DataError, MonotonicityError, UnstableEstimateError
from prinstrat.estimator import PrincipalScoreWeighting
from prinstrat.mrweight import (
    STRATA,
    _scores_from_probs,
    fit_logistic,
    fit_scores,
    principal_scores,
    tau_weighting,
    wald_cace,
)
from prinstrat.simgen import generate


def noncompliance(n, seed, effect=2.0, probs=(0.3, 0.5, 0.2), confounded=False):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    s = rng.choice(3, size=n, p=probs)  # n, c, a
    z = (rng.uniform(size=n) < (1 / (1 + np.exp(-0.8 * x)) if confounded else 0.5)).astype(int)
    d = np.where(s == 0, 0, np.where(s == 2, 1, z))
    y = 1.0 + 0.5 * x + s + effect * z * (s == 1) + rng.standard_normal(n)
    return pd.DataFrame({"Z": z, "D": d, "Y": y, "X": x}), s


@pytest.fixture(scope="module")
def sim1_small():
    return generate("sim1", n=3000, seed=4)


def test_intercept_only_propensity_is_sample_mean():
    df, _ = noncompliance(500, 1)
    fits = fit_scores(df, "1")
    pi, p0, p1 = fits.predict(df)
    np.testing.assert_allclose(pi, df["Z"].mean(), rtol=1e-9)
    np.testing.assert_allclose(p0, df.loc[df.Z == 0, "D"].mean(), rtol=1e-9)
    np.testing.assert_allclose(p1, df.loc[df.Z == 1, "D"].mean(), rtol=1e-9)
    assert fits.converged


def test_logistic_matches_sklearn_unpenalised():
    from sklearn.linear_model import LogisticRegression

    rng = np.random.default_rng(2)
    X = np.column_stack([np.ones(400), rng.standard_normal((400, 2))])
    y = (rng.uniform(size=400) < 1 / (1 + np.exp(-(X @ [0.3, 1.0, -0.5])))).astype(float)
    ours = fit_logistic(X, y)
    ref = LogisticRegression(penalty=None, fit_intercept=False, tol=1e-12, max_iter=10000).fit(X, y)
    np.testing.assert_allclose(ours.coef, ref.coef_[0], atol=1e-6)
    assert ours.converged and ours.n_iter < 50


def test_separation_falls_back_to_ridge():
    X = np.column_stack([np.ones(20), np.r_[-np.ones(10), np.ones(10)]])
    y = np.r_[np.zeros(10), np.ones(10)]
    with pytest.warns(RuntimeWarning, match="ridge"):
        fit = fit_logistic(X, y)
    assert fit.ridge == 1e-4
    p = fit.predict(X)
    assert np.all((p >= 1e-6) & (p <= 1 - 1e-6))


def test_sim1_arm_probabilities(sim1_small):
    df, _ = sim1_small
    _, p0, p1 = fit_scores(df, "Z + D ~ X1 + X2").predict(df)
    assert p1.mean() == pytest.approx(0.7, abs=0.03)
    assert p0.mean() == pytest.approx(0.2, abs=0.03)


def test_score_identities():
    e = _scores_from_probs(np.full(4, 0.2), np.full(4, 0.7))
    np.testing.assert_allclose(e.values, [[0.5, 0.2, 0.3]] * 4, atol=1e-15)
    none = _scores_from_probs(np.full(3, 0.4), np.full(3, 0.4))
    assert np.all(none["01"] == 0.0)
    assert STRATA == ("01", "11", "00")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=30))
def test_scores_sum_to_one(pairs):
    p = np.array(pairs)
    p0 = np.minimum(p[:, 0], p[:, 1])
    p1 = np.maximum(p[:, 0], p[:, 1])
    raw = np.column_stack([p1 - p0, p0, 1 - p1])
    np.testing.assert_allclose(raw.sum(axis=1), 1.0, atol=1e-15)
    e = _scores_from_probs(p0, p1)
    np.testing.assert_allclose(e.values.sum(axis=1), 1.0, atol=1e-12)
    assert np.all((e.values >= 0) & (e.values <= 1))


def test_monotonicity_violation():
    p0 = np.full(100, 0.5)
    p1 = np.full(100, 0.5)
    p1[:2] = 0.45  # 2% of units with e_c = -0.05
    with pytest.raises(MonotonicityError):
        _scores_from_probs(p0, p1)
    p1[1] = 0.5  # 1% is tolerated and clipped
    e = _scores_from_probs(p0, p1)
    assert e.n_clipped == 1 and e.values[0, 0] == 0.0


def test_sim1_marginals(sim1_small):
    df, _ = sim1_small
    m = principal_scores(fit_scores(df, "Z + D ~ X1 + X2"), df).marginals
    assert m["01"] == pytest.approx(0.5, abs=0.03)
    assert m["11"] == pytest.approx(0.2, abs=0.03)
    assert m["00"] == pytest.approx(0.3, abs=0.03)


@pytest.mark.parametrize("assumption", ["ER", "PI"])
def test_matches_oracle_difference_in_means(assumption):
    # randomised; under ER only compliers respond, under PI every stratum
    # shares the same outcome model (homogeneous effect)
    rng = np.random.default_rng(8)
    n = 8000
    s = rng.choice(3, size=n, p=(0.3, 0.5, 0.2))
    z = rng.integers(0, 2, n)
    d = np.where(s == 0, 0, np.where(s == 2, 1, z))
    responders = (s == 1) if assumption == "ER" else np.ones(n, bool)
    y = 1.0 + 1.5 * z * responders + rng.standard_normal(n)
    df = pd.DataFrame({"Z": z, "D": d, "Y": y, "X": rng.standard_normal(n)})
    c = s == 1
    oracle = y[c & (z == 1)].mean() - y[c & (z == 0)].mean()
    res = tau_weighting(df, fit_scores(df, "Z + D ~ X"), "01", assumption=assumption, n_boot=0)
    assert res.estimate == pytest.approx(oracle, abs=0.1)


def test_null_effect_inside_interval():
    df, _ = noncompliance(3000, 9, effect=0.0)
    res = tau_weighting(df, fit_scores(df, "Z + D ~ X"), "c", n_boot=200, seed=3)
    assert res.ci_low <= 0.0 <= res.ci_high
    assert res.n_boot == 200 and len(res.boot) + res.n_failed == 200


@pytest.mark.parametrize("assumption", ["ER", "PI"])
def test_shift_equivariance(assumption):
    df, _ = noncompliance(1500, 10)
    fits = fit_scores(df, "Z + D ~ X")
    shifted = df.assign(Y=df["Y"] + 17.0)
    for s in STRATA:
        a = tau_weighting(df, fits, s, assumption=assumption, n_boot=0).estimate
        b = tau_weighting(shifted, fits, s, assumption=assumption, n_boot=0).estimate
        assert b == pytest.approx(a, abs=1e-9)


def test_error_shrinks_with_n():
    errs = {}
    for n in (2000, 10000):
        e = []
        for seed in range(6):
            df, _ = noncompliance(n, 100 + seed, confounded=True)
            e.append(abs(tau_weighting(df, fit_scores(df, "Z + D ~ X"), "01", n_boot=0).estimate - 2.0))
        errs[n] = np.mean(e)
    assert errs[10000] < errs[2000]


def test_bootstrap_is_seeded():
    df, _ = noncompliance(800, 11)
    fits = fit_scores(df, "Z + D ~ X")
    a = tau_weighting(df, fits, "01", n_boot=30, seed=5)
    b = tau_weighting(df, fits, "01", n_boot=30, seed=5)
    np.testing.assert_array_equal(a.boot, b.boot)
    assert not np.array_equal(a.boot, tau_weighting(df, fits, "01", n_boot=30, seed=6).boot)


def test_unstable_when_arm_is_tiny():
    df, _ = noncompliance(400, 12)
    df.loc[df.index[8:], "Z"] = 0  # only a handful of treated units
    df["D"] = np.where(df["Z"] == 1, 1, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fits = fit_scores(df, "Z + D ~ 1")
        with pytest.raises(UnstableEstimateError):
            tau_weighting(df, fits, "01", n_boot=0)


def test_wald():
    df, _ = noncompliance(2000, 13)
    full = df.assign(D=df["Z"])
    diff = full.loc[full.Z == 1, "Y"].mean() - full.loc[full.Z == 0, "Y"].mean()
    assert wald_cace(full) == pytest.approx(diff, rel=1e-12)
    null = df.assign(Y=np.random.default_rng(0).standard_normal(len(df)))
    assert abs(wald_cace(null)) < 0.3
    with pytest.raises(ZeroDivisionError):
        wald_cace(df.assign(D=1))
    with pytest.raises(DataError):
        wald_cace(df.assign(Z=1))


def test_estimator_front_end(sim1_small):
    df, truth = sim1_small
    est = PrincipalScoreWeighting("Z + D ~ X1 + X2", n_boot=20, seed=1).fit(df)
    table = est.table()
    assert list(table["stratum"]) == ["01", "11", "00"]
    assert table.loc[0, "estimate"] == pytest.approx(truth.cace, abs=0.3)
    assert est.predict_proba().shape == (len(df), 3)
    assert est.wald() == pytest.approx(6.0, abs=0.3)
    assert est.get_params()["assumption"] == "ER"
