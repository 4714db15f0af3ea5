"""Estimator front ends in the scikit-learn style.

:class:`PrincipalStratification` wraps model building, NUTS sampling and the
posterior summaries; :class:`PrincipalScoreWeighting` wraps the frequentist
weighting path. Both keep their settings as constructor parameters, so
``get_params`` / ``set_params`` / ``clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import posterior as post
from .model import PsModel, build_model
from .mrweight import STRATA, fit_scores, principal_scores, tau_weighting, wald_cace
from .priors import PriorSpec
from .sampler import DrawMatrix, SamplerConfig, diagnose, sample
from .validation import check_frame

__all__ = ["PrincipalStratification", "PrincipalScoreWeighting"]


class PrincipalStratification(BaseEstimator):
    """Bayesian principal stratification model.

    Parameters
    ----------
    s_formula : str
        ``"Z + D ~ X1 + X2"``: treatment, intermediate variable(s), then
        stratum-membership covariates.
    y_formula : str
        Outcome model, ``"Y ~ X1 + X2"`` (``"Y + delta ~ ..."`` for survival).
    family : str or dict
        ``"gaussian"``, ``'binomial(link = "probit")'``,
        ``{"family": "survival", "link": "Cox"}`` ...
    strata : dict
        Stratum name to label, e.g. ``{"n": "00*", "c": "01", "a": "11*"}``.
        The first stratum is the reference of the S-model.
    er : dict or list, optional
        Exclusion-restriction flags overriding/adding to the asterisks.
    prior_intercept, prior_coefficient, prior_sigma, prior_alpha, prior_lambda,
    prior_theta, prior_re_sd : optional prior strings
        Strings such as ``"normal(0, 1)"``; unset classes keep their defaults.
    survival_time_points : int or sequence, default 10
        Grid for survival curves.
    chains, warmup, iter, seed, target_accept, max_treedepth, cores, refresh
        Sampler settings; ``iter`` counts warmup iterations too.
    init_radius, init_tries
        Chains start from uniform(-init_radius, init_radius) draws; with
        ``init_tries > 1`` each chain optimises from that many draws and
        starts at the best mode found.

    Attributes
    ----------
    model_ : PsModel
    draws_ : DrawMatrix
    diagnostics_ : Diagnostics
    """

    def __init__(
        self,
        s_formula: str = "Z + D ~ 1",
        y_formula: str = "Y ~ 1",
        family="gaussian",
        strata=None,
        er=None,
        prior_intercept=None,
        prior_coefficient=None,
        prior_sigma=None,
        prior_alpha=None,
        prior_lambda=None,
        prior_theta=None,
        prior_re_sd=None,
        survival_time_points=10,
        chains: int = 4,
        warmup: int = 1000,
        iter: int = 2000,
        seed: int = 1,
        target_accept: float = 0.8,
        max_treedepth: int = 10,
        cores: int = 1,
        refresh: int = 0,
        init_radius: float = 2.0,
        init_tries: int = 1,
    ):
        self.s_formula = s_formula
        self.y_formula = y_formula
        self.family = family
        self.strata = strata
        self.er = er
        self.prior_intercept = prior_intercept
        self.prior_coefficient = prior_coefficient
        self.prior_sigma = prior_sigma
        self.prior_alpha = prior_alpha
        self.prior_lambda = prior_lambda
        self.prior_theta = prior_theta
        self.prior_re_sd = prior_re_sd
        self.survival_time_points = survival_time_points
        self.chains = chains
        self.warmup = warmup
        self.iter = iter
        self.seed = seed
        self.target_accept = target_accept
        self.max_treedepth = max_treedepth
        self.cores = cores
        self.refresh = refresh
        self.init_radius = init_radius
        self.init_tries = init_tries

    def _prior_spec(self) -> PriorSpec:
        return PriorSpec.from_overrides(
            intercept=self.prior_intercept,
            coefficient=self.prior_coefficient,
            sigma=self.prior_sigma,
            alpha=self.prior_alpha,
            **{"lambda": self.prior_lambda},
            theta=self.prior_theta,
            re_sd=self.prior_re_sd,
        )

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(chains=self.chains, warmup=self.warmup, iter=self.iter, seed=self.seed,
                             target_accept=self.target_accept, max_treedepth=self.max_treedepth,
                             cores=self.cores, refresh=self.refresh, init_radius=self.init_radius,
                             init_tries=self.init_tries)

    def build(self, data) -> PsModel:
        """Validate ``data`` and return the model without sampling."""
        data = check_frame(data)
        strata = self.strata if self.strata is not None else {"n": "00*", "c": "01", "a": "11*"}
        return build_model(self.s_formula, self.y_formula, self.family, data, strata, self.er,
                           self._prior_spec())

    def fit(self, data, y=None):
        """Build the model from ``data`` (a DataFrame) and sample its posterior."""
        cfg = self.sampler_config()
        self.model_ = self.build(data)
        self.draws_ = sample(self.model_, cfg)
        self.diagnostics_ = diagnose(self.draws_) if self.draws_.n_draws >= 4 else None
        return self

    def set_draws(self, model: PsModel, draws: DrawMatrix):
        """Attach an existing model and draws (e.g. loaded from disk)."""
        self.model_ = model
        self.draws_ = draws
        self.diagnostics_ = diagnose(draws) if draws.n_draws >= 4 else None
        return self

    # -- estimands ------------------------------------------------------------
    def strata_proportions(self) -> post.EstimandCube:
        check_is_fitted(self, "draws_")
        return post.strata_proportions(self.draws_, self.model_)

    def summary(self) -> post.SummaryTable:
        """Posterior summary of the marginal stratum proportions."""
        return post.summarize(self.strata_proportions())

    def outcome(self, timepoints=None) -> post.EstimandCube:
        """Potential-outcome means (or survival curves for survival families)."""
        check_is_fitted(self, "draws_")
        if self.model_.family_spec.is_survival:
            tp = self.survival_time_points if timepoints is None else timepoints
            return post.survival_outcome(self.draws_, self.model_, tp)
        return post.outcome_means(self.draws_, self.model_)

    def contrast(self, axes=("z",), timepoints=None) -> post.EstimandCube:
        """Nested contrasts of :meth:`outcome` along ``axes`` (default: arms)."""
        return post.contrast(self.outcome(timepoints), axes)

    def predict_proba(self, data=None) -> np.ndarray:
        """Posterior-mean stratum probabilities of the fitted units, (n, S).

        Only the fitted data are supported: the estimands average over them.
        """
        check_is_fitted(self, "draws_")
        if data is not None and len(data) != self.model_.n:
            raise ValueError("predict_proba is available for the fitted units only")
        return post.mean_unit_stratum_probs(self.draws_, self.model_)


class PrincipalScoreWeighting(BaseEstimator):
    """Frequentist principal-score weighting (one treatment, one intermediate).

    Parameters
    ----------
    formula : str
        ``"Z + D ~ X1 + X2"``.
    outcome : str
        Outcome column.
    assumption : {"ER", "PI"}
        Exclusion restriction (complier effect by IPW ratio) or principal
        ignorability (weighting for every stratum).
    n_boot : int
        Bootstrap replicates for the percentile interval.
    seed : int
    """

    def __init__(self, formula: str = "Z + D ~ 1", outcome: str = "Y", assumption: str = "ER",
                 n_boot: int = 500, seed: int = 0):
        self.formula = formula
        self.outcome = outcome
        self.assumption = assumption
        self.n_boot = n_boot
        self.seed = seed

    def fit(self, data, y=None):
        data = check_frame(data)
        self.data_ = data
        self.fits_ = fit_scores(data, self.formula)
        self.scores_ = principal_scores(self.fits_, data)
        return self

    def effect(self, stratum="01"):
        check_is_fitted(self, "fits_")
        return tau_weighting(self.data_, self.fits_, stratum, outcome=self.outcome,
                             assumption=self.assumption, n_boot=self.n_boot, seed=self.seed)

    def table(self, strata=STRATA) -> pd.DataFrame:
        """One row per stratum: estimate, percentile CI and Kish ESS per arm."""
        return pd.DataFrame([self.effect(s).as_row() for s in strata])

    def wald(self) -> float:
        check_is_fitted(self, "fits_")
        return wald_cace(self.data_, self.fits_.treatment, self.fits_.intermediate, self.outcome)

    def predict_proba(self, data=None) -> np.ndarray:
        """Principal scores (columns compliers, always-takers, never-takers)."""
        check_is_fitted(self, "fits_")
        if data is None:
            return self.scores_.values
        return principal_scores(self.fits_, check_frame(data)).values
