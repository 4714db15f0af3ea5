from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from prinstrat import build_model
from prinstrat.exceptions import ConfigError, DataError, IncompatibleDataError
from prinstrat.families import Family, FamilySpec

import zoo



def intercept_model(family="gaussian", y=(0.0,), z=(1,), d=(1,), strata=zoo.TRIO, event=None, **kw):
    df = pd.DataFrame({"Z": list(z), "D": list(d), "Y": list(y)})
    yf = "Y ~ 1"
    if event is not None:
        df["delta"] = list(event)
        yf = "Y + delta ~ 1"
    return build_model("Z + D ~ 1", yf, family, df, strata, **kw)


# ------------------------------------------------------------------ S-model


def test_zero_betas_give_uniform_strata():
    m = intercept_model()
    np.testing.assert_allclose(np.exp(m.s_log_probs(m.vector(), 0)), [1 / 3] * 3, atol=1e-15)


def test_intercepts_give_softmax():
    m = intercept_model()
    u = m.vector({"beta[c][(Intercept)]": 0.7, "beta[a][(Intercept)]": -0.4})
    e = np.exp([0.0, 0.7, -0.4])
    np.testing.assert_allclose(np.exp(m.s_log_probs(u, 0)), e / e.sum(), rtol=1e-14)


def test_fitted_intercepts_reproduce_marginals():
    # intercepts chosen as log-ratios of the reported proportions
    pi = np.array([0.2888397, 0.5046871, 0.2064732])
    pi = pi / pi.sum()
    m = intercept_model()
    u = m.vector({"beta[c][(Intercept)]": math.log(pi[1] / pi[0]),
                  "beta[a][(Intercept)]": math.log(pi[2] / pi[0])})
    np.testing.assert_allclose(np.exp(m.s_log_probs(u, 0)), pi, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_softmax_normalised(seed):
    m = zoo.multilevel(n=30, seed=7)
    u = np.random.default_rng(seed).normal(scale=3.0, size=m.width)
    np.testing.assert_allclose(np.exp(m.s_log_probs(u)).sum(axis=1), 1.0, atol=1e-12)


# ------------------------------------------------------------------ Y-model


def test_gaussian_density_at_mode():
    m = intercept_model(y=[0.0])
    assert m.y_log_density(0, 0, m.vector()) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-14)


def test_binomial_logit_half():
    m = intercept_model('binomial(link = "logit")', y=[1])
    assert m.y_log_density(0, 0, m.vector()) == pytest.approx(math.log(0.5), abs=1e-14)


def test_poisson_mass():
    m = intercept_model("poisson", y=[2])
    assert m.y_log_density(0, 0, m.vector()) == pytest.approx(-1 - math.log(2), abs=1e-14)


def test_cox_examples():
    cox = {"family": "survival", "link": "Cox"}
    m = intercept_model(cox, y=[2.0], event=[0])
    assert m.survival_log_lik(0, 0, m.vector()) == pytest.approx(-2.0, abs=1e-14)
    m = intercept_model(cox, y=[1.0], event=[1])
    assert m.survival_log_lik(0, 0, m.vector()) == pytest.approx(-1.0, abs=1e-14)


def test_aft_median():
    m = intercept_model('survival(method = "AFT")', y=[math.e], event=[0])
    u = m.vector({"gamma[c:1][(Intercept)]": 1.0})
    cell = m.cells.names.index("c:1")
    assert m.survival_log_lik(cell, 0, u) == pytest.approx(math.log(0.5), abs=1e-14)


def test_support_violations_name_unit():
    with pytest.raises(DataError, match="unit 1"):
        intercept_model("Gamma", y=[1.0, -1.0], z=[0, 1], d=[0, 1])
    with pytest.raises(DataError):
        intercept_model('binomial(link = "logit")', y=[0.5])
    with pytest.raises(ConfigError):
        intercept_model("binomial(link = \"identity\")", y=[1])
    with pytest.raises(IncompatibleDataError):
        intercept_model(z=[0], d=[1], strata={"n": "00", "c": "01"})


MEAN_FAMILIES = [
    ("gaussian", "identity"),
    ("Gamma", "log"),
    ("inverse.gaussian", "log"),
]


@pytest.mark.parametrize("family,link", MEAN_FAMILIES)
def test_continuous_densities_integrate_to_one(family, link):
    fam = Family(FamilySpec(family, link))
    rng = np.random.default_rng(11)
    lo = -np.inf if family == "gaussian" else 0.0
    for _ in range(5):
        mu, aux = rng.uniform(0.5, 3.0), rng.uniform(0.5, 4.0)
        total, _ = integrate.quad(lambda y: np.exp(fam.logpdf(y, mu, aux)), lo, np.inf, limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)


def test_discrete_masses_sum_to_one():
    rng = np.random.default_rng(12)
    pois = Family(FamilySpec("poisson", "log"))
    bern = Family(FamilySpec("binomial", "logit"))
    for _ in range(5):
        mu = rng.uniform(0.1, 20.0)
        assert np.exp(pois.logpdf(np.arange(400), mu)).sum() == pytest.approx(1.0, abs=1e-10)
        p = rng.uniform(0.01, 0.99)
        assert np.exp(bern.logpdf(np.array([0, 1]), p)).sum() == pytest.approx(1.0, abs=1e-14)


def test_densities_match_scipy():
    y = np.array([0.3, 1.2, 4.0])
    mu, a = 1.5, 2.5
    g = Family(FamilySpec("Gamma", "log"))
    np.testing.assert_allclose(g.logpdf(y, mu, a), stats.gamma.logpdf(y, a, scale=mu / a), rtol=1e-12)
    ig = Family(FamilySpec("inverse.gaussian", "log"))
    np.testing.assert_allclose(ig.logpdf(y, mu, a), stats.invgauss.logpdf(y, mu / a, scale=a), rtol=1e-12)


@pytest.mark.parametrize("method", ["Cox", "AFT"])
def test_survival_densities_integrate(method):
    fam = Family(FamilySpec("survival", method))
    rng = np.random.default_rng(13)
    for _ in range(5):
        eta, aux = rng.uniform(-1, 1), rng.uniform(0.3, 1.5) if method == "AFT" else rng.uniform(-0.5, 0.5)
        f = lambda t: np.exp(fam.loglik(t, eta, aux, 1)[0])
        total, _ = integrate.quad(f, 0, np.inf, limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)
        t = rng.uniform(0.2, 3.0)
        surv, _ = integrate.quad(f, t, np.inf, limit=200)
        assert np.exp(fam.loglik(t, eta, aux, 0)[0]) == pytest.approx(surv, abs=1e-7)


def test_cox_hazard_is_minus_dlogS():
    fam = Family(FamilySpec("survival", "Cox"))
    rng = np.random.default_rng(14)
    for _ in range(20):
        t, eta, th = rng.uniform(0.2, 4), rng.uniform(-1, 1), rng.uniform(-0.7, 0.7)
        h = 1e-6
        dlogS = (np.log(fam.survival_prob(t + h, eta, th)) - np.log(fam.survival_prob(t - h, eta, th))) / (2 * h)
        assert -dlogS == pytest.approx(fam.hazard(t, eta, th), abs=1e-8)


# ------------------------------------------------------------ mixture oracle


def test_single_compatible_stratum_is_exact():
    m = intercept_model(y=[0.4], z=[0], d=[1])
    u = m.vector({"beta[a][(Intercept)]": 0.3, "gamma[a][(Intercept)]": -0.2, "sigma[a]": 1.7})
    a = m.strata.index("a")
    expect = m.s_log_probs(u, 0)[a] + m.y_log_density(m.cells.names.index("a"), 0, u)
    assert m.mixture_log_lik(u, 0) == expect


def test_treated_takers_mix_compliers_and_always_takers():
    m = intercept_model(y=[0.4], z=[1], d=[1])
    u = m.vector({"beta[c][(Intercept)]": 0.5, "gamma[c:1][(Intercept)]": 1.0})
    lp = m.s_log_probs(u, 0)
    c1, a = m.cells.names.index("c:1"), m.cells.names.index("a")
    expect = np.logaddexp(lp[1] + m.y_log_density(c1, 0, u), lp[2] + m.y_log_density(a, 0, u))
    assert m.mixture_log_lik(u, 0) == pytest.approx(expect, abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(zoo.mixture_cases())
def test_mixture_matches_enumeration(case):
    ours, oracle = zoo.mixture_against_enumeration(case)
    np.testing.assert_allclose(ours, oracle, rtol=0, atol=1e-10)


# --------------------------------------------------------------- posterior


def test_empty_data_flat_priors():
    df = pd.DataFrame({"Z": np.array([], int), "D": np.array([], int), "Y": np.array([], float)})
    m = build_model("Z + D ~ 1", "Y ~ 1", 'binomial(link = "logit")', df, zoo.TRIO)
    lp, g = m.log_posterior_and_grad(m.vector())
    assert lp == 0.0
    assert np.all(g == 0.0)


def test_prior_only_coefficient():
    df = pd.DataFrame({"Z": np.array([], int), "D": np.array([], int), "Y": np.array([], float),
                       "X": np.array([], float)})
    m = build_model("Z + D ~ 1", "Y ~ X - 1", 'binomial(link = "logit")', df,
                    {"n": "00*", "a": "11*"}, priors={"coefficient": "normal(0, 1)"})
    assert m.width == 3  # beta[a] intercept, gamma[n][X], gamma[a][X]
    u = m.vector({"gamma[n][X]": 2.0})
    lp, g = m.log_posterior_and_grad(u)
    # the other coefficient sits at 0 and contributes its own normalising constant
    assert lp == pytest.approx(-2 - 0.5 * math.log(2 * math.pi) - 0.5 * math.log(2 * math.pi), abs=1e-14)
    assert g[m.param_names.index("gamma[n][X]")] == pytest.approx(-2.0, abs=1e-14)


def test_positive_parameters_include_jacobian():
    df = pd.DataFrame({"Z": np.array([], int), "D": np.array([], int), "Y": np.array([], float)})
    m = build_model("Z + D ~ 1", "Y ~ 1", "gaussian", df, {"n": "00*"})
    for sigma in (0.5, 1.0, 3.0):
        u = m.vector({"sigma[n]": sigma})
        assert m.log_posterior(u) == pytest.approx(stats.invgamma.logpdf(sigma, 1, scale=1) + math.log(sigma))


@pytest.mark.parametrize("name", sorted(zoo.GRADIENT_MODELS))
def test_gradients_match_finite_differences(name):
    m = zoo.GRADIENT_MODELS[name]()
    rng = np.random.default_rng(20)
    for _ in range(20):
        assert zoo.gradient_error(m, rng.uniform(-1, 1, size=m.width)) <= 1e-6


def test_invalid_point_is_minus_inf():
    m = zoo.gaussian_glm()
    u = m.vector()
    u[0] = np.nan
    lp, g = m.log_posterior_and_grad(u)
    assert lp == -np.inf and np.all(g == 0)


def test_relabelling_strata_keeps_posterior():
    rng = np.random.default_rng(5)
    df, s = zoo.trio_frame(40, rng)
    df["Y"] = s + rng.standard_normal(40)
    a = build_model("Z + D ~ X", "Y ~ X", "gaussian", df, {"n": "00*", "c": "01", "a": "11*"})
    b = build_model("Z + D ~ X", "Y ~ X", "gaussian", df, {"n": "00*", "a": "11*", "c": "01"})
    for _ in range(10):
        ua = rng.normal(size=a.width)
        values = dict(zip(a.param_names, a.constrain(ua)))
        ub = b.vector(values)
        assert b.log_posterior(ub) == pytest.approx(a.log_posterior(ua), rel=1e-12)


def test_er_collapse_equals_constrained_full_model():
    rng = np.random.default_rng(6)
    df, s = zoo.trio_frame(40, rng)
    df["Y"] = s + rng.standard_normal(40)
    er = build_model("Z + D ~ X", "Y ~ X", "gaussian", df, zoo.TRIO)
    full = build_model("Z + D ~ X", "Y ~ X", "gaussian", df, zoo.TRIO_NO_ER)
    assert er.n_cells == 4 and full.n_cells == 6
    for _ in range(10):
        u = rng.normal(size=er.width)
        vals = dict(zip(er.param_names, er.constrain(u)))
        tied = {}
        for k, v in vals.items():
            for st_ in ("n", "a"):
                if f"[{st_}]" in k and k.startswith(("gamma", "sigma")):
                    for z in (0, 1):
                        tied[k.replace(f"[{st_}]", f"[{st_}:{z}]")] = v
                    break
            else:
                tied[k] = v
        assert er.log_likelihood(u) == pytest.approx(full.log_likelihood(full.vector(tied)), rel=1e-12)
