"""Frequentist principal-score weighting for binary noncompliance.

Three logistic regressions are fitted by Newton-Raphson: the propensity
pi(X) = Pr(Z=1 | X) and, in each arm, p_z(X) = Pr(D=1 | Z=z, X). Under
monotonicity the principal scores follow as

    e_c(X) = p_1(X) - p_0(X),   e_a(X) = p_0(X),   e_n(X) = 1 - p_1(X)

for compliers ("01"), always-takers ("11") and never-takers ("00"); strata are
labelled by (D(0), D(1)).

Two weighting estimators of tau_s = E[Y(1) - Y(0) | S = s] are offered:

``"PI"``
    principal ignorability. Units with Z=z and D = D_s(z) get weight
    e_s(X) / (Pr(Z=z | X) Pr(D=D_s(z) | Z=z, X)), Hajek-normalized per arm.
``"ER"``
    exclusion restriction for never- and always-takers. The complier effect
    is the inverse-propensity ITT divided by the mean complier score; the
    other two strata have zero effect by assumption.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg, special

from .exceptions import DataError, MonotonicityError, UnstableEstimateError
from .formula import DesignMatrix, build_design, parse_formula

__all__ = [
    "LogisticFit",
    "ScoreFits",
    "PrincipalScores",
    "WeightingResult",
    "fit_logistic",
    "fit_scores",
    "principal_scores",
    "tau_weighting",
    "wald_cace",
    "STRATA",
]

STRATA = ("01", "11", "00")  # compliers, always-takers, never-takers
STRATUM_ALIASES = {"c": "01", "a": "11", "n": "00", "10": "01"}
CLIP = 1e-6
MONO_TOL = -0.02
MONO_FRAC = 0.01
MIN_ESS = 10.0
SEPARATION_ETA = 18.0  # |logit| beyond this means a fitted probability within 2e-8 of 0 or 1


@dataclass
class LogisticFit:
    coef: np.ndarray
    columns: tuple[str, ...]
    converged: bool
    n_iter: int
    ridge: float = 0.0

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.clip(special.expit(X @ self.coef), CLIP, 1.0 - CLIP)


def _newton(X, y, ridge, max_iter=50, tol=1e-8):
    b = np.zeros(X.shape[1])

    def objective(b):
        eta = X @ b
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)) - 0.5 * ridge * b @ b)

    cur = objective(b)
    for it in range(1, max_iter + 1):
        mu = special.expit(X @ b)
        score = X.T @ (y - mu) - ridge * b
        if np.max(np.abs(score), initial=0.0) < tol:
            return b, True, it - 1
        w = mu * (1.0 - mu)
        H = (X * w[:, None]).T @ X + ridge * np.eye(X.shape[1])
        try:
            step = linalg.solve(H, score, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            return b, False, it
        t = 1.0
        while t > 1e-10:
            nb = b + t * step
            new = objective(nb)
            if new >= cur - 1e-12:
                break
            t *= 0.5
        b, cur = nb, new
        if not np.all(np.isfinite(b)) or np.max(np.abs(b)) > 50:
            return b, False, it
    mu = special.expit(X @ b)
    ok = np.max(np.abs(X.T @ (y - mu) - ridge * b), initial=0.0) < tol
    return b, bool(ok), max_iter


def fit_logistic(X: np.ndarray, y: np.ndarray, columns=(), label: str = "logistic") -> LogisticFit:
    """Maximum-likelihood logistic regression; falls back to a 1e-4 ridge.

    Convergence means every score component is below 1e-8 in absolute value
    (at most 50 Newton steps).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise DataError(f"{label}: no observations")
    b, ok, it = _newton(X, y, 0.0)
    # under separation the score vanishes at a finite but huge coefficient;
    # fitted probabilities numerically 0 or 1 give it away
    if ok and np.max(np.abs(X @ b), initial=0.0) < SEPARATION_ETA:
        return LogisticFit(b, tuple(columns), True, it)
    warnings.warn(f"{label}: no finite maximum-likelihood fit (separation?); "
                  "refitting with ridge penalty 1e-4", RuntimeWarning, stacklevel=2)
    b, ok, it = _newton(X, y, 1e-4, max_iter=200)
    return LogisticFit(b, tuple(columns), ok, it, ridge=1e-4)


@dataclass
class ScoreFits:
    """Propensity and arm-wise intermediate-variable models."""

    propensity: LogisticFit
    arm0: LogisticFit
    arm1: LogisticFit
    rhs: str
    treatment: str
    intermediate: str

    def design(self, data: pd.DataFrame) -> np.ndarray:
        return _design(self.rhs, data).values

    def predict(self, data: pd.DataFrame):
        """(pi(X), p_0(X), p_1(X)) for every row of ``data``."""
        X = self.design(data)
        return self.propensity.predict(X), self.arm0.predict(X), self.arm1.predict(X)

    @property
    def converged(self) -> bool:
        return self.propensity.converged and self.arm0.converged and self.arm1.converged


def _split_formula(formula: str, treatment, intermediate):
    if "~" in formula:
        ast = parse_formula(formula)
        lhs = ast.lhs_vars
        if lhs:
            if len(lhs) != 2:
                raise DataError("principal-score weighting handles one treatment and one "
                                "intermediate variable ('Z + D ~ X')")
            treatment, intermediate = lhs
        rhs = formula.split("~", 1)[1].strip()
    else:
        rhs = formula.strip() or "1"
    return rhs, treatment or "Z", intermediate or "D"


def _design(rhs: str, data: pd.DataFrame) -> DesignMatrix:
    ast = parse_formula(f"response ~ {rhs}")
    if ast.random_terms:
        raise DataError("random-effect terms are not supported by principal-score weighting")
    return build_design(ast, data)


def _binary(data, col):
    if col not in data.columns:
        raise DataError(f"column {col!r} not found")
    v = data[col].to_numpy(dtype=float)
    if not np.isin(v, (0.0, 1.0)).all():
        raise DataError(f"column {col!r} must be binary 0/1")
    return v


def fit_scores(data: pd.DataFrame, s_formula_rhs: str = "1", treatment: str | None = None,
               intermediate: str | None = None) -> ScoreFits:
    """Fit pi(X), p_0(X) and p_1(X) by logistic regression.

    ``s_formula_rhs`` is either a right-hand side (``"X1 + X2"``) or a full
    S-formula (``"Z + D ~ X1 + X2"``), which also names the columns.
    """
    rhs, treatment, intermediate = _split_formula(s_formula_rhs, treatment, intermediate)
    design = _design(rhs, data)
    X = design.values
    z = _binary(data, treatment)
    d = _binary(data, intermediate)
    prop = fit_logistic(X, z, design.column_names, "propensity model")
    arms = []
    for arm in (0, 1):
        sel = z == arm
        if not sel.any():
            raise DataError(f"no units with {treatment}={arm}")
        arms.append(fit_logistic(X[sel], d[sel], design.column_names, f"intermediate model, arm {arm}"))
    return ScoreFits(prop, arms[0], arms[1], rhs, treatment, intermediate)


@dataclass
class PrincipalScores:
    """Per-unit scores (columns in :data:`STRATA` order) and their means."""

    values: np.ndarray  # (n, 3)
    labels: tuple[str, ...] = STRATA
    n_clipped: int = 0

    @property
    def marginals(self) -> dict[str, float]:
        return dict(zip(self.labels, map(float, self.values.mean(axis=0))))

    def __getitem__(self, stratum: str) -> np.ndarray:
        return self.values[:, self.labels.index(_canon(stratum))]


def _scores_from_probs(p0, p1) -> PrincipalScores:
    e = np.column_stack([p1 - p0, p0, 1.0 - p1])
    neg = e[:, 0] < MONO_TOL
    if neg.mean() > MONO_FRAC:
        raise MonotonicityError(
            f"estimated complier score p1 - p0 is below {MONO_TOL} for {neg.mean():.1%} of units; "
            "the data contradict monotonicity (no defiers)")
    clipped = int(np.sum(e < 0))
    e = np.clip(e, 0.0, 1.0)
    e /= e.sum(axis=1, keepdims=True)
    return PrincipalScores(e, STRATA, clipped)


def principal_scores(fits: ScoreFits, data: pd.DataFrame) -> PrincipalScores:
    """Apply the monotonicity identities to the fitted arm-wise probabilities."""
    _, p0, p1 = fits.predict(data)
    return _scores_from_probs(p0, p1)


def _canon(stratum) -> str:
    s = str(stratum).replace("|", "").strip()
    s = STRATUM_ALIASES.get(s, s)
    if s not in STRATA:
        raise ValueError(f"stratum must be one of {STRATA} (or c/a/n), got {stratum!r}")
    return s


def _kish(w):
    s2 = float(np.sum(w**2))
    return float(np.sum(w) ** 2 / s2) if s2 > 0 else 0.0


def _estimate(y, z, d, pi, p0, p1, stratum: str, assumption: str):
    """Point estimate and Kish effective sample size per arm."""
    scores = _scores_from_probs(p0, p1)
    e = scores[stratum]
    if assumption == "ER":
        w1 = z / pi
        w0 = (1 - z) / (1 - pi)
        ess = (_kish(w0), _kish(w1))
        if stratum != "01":
            return 0.0, ess
        itt = np.sum(w1 * y) / np.sum(w1) - np.sum(w0 * y) / np.sum(w0)
        share = float(np.mean(scores["01"]))
        if share <= 0:
            raise UnstableEstimateError("estimated complier share is zero")
        return float(itt / share), ess
    # principal ignorability: weight units whose (Z, D) the stratum produces
    d0, d1 = int(stratum[0]), int(stratum[1])
    pd0 = np.where(d0 == 1, p0, 1 - p0)
    pd1 = np.where(d1 == 1, p1, 1 - p1)
    w1 = z * (d == d1) * e / (pi * pd1)
    w0 = (1 - z) * (d == d0) * e / ((1 - pi) * pd0)
    ess = (_kish(w0), _kish(w1))
    if min(ess) < MIN_ESS:
        raise UnstableEstimateError(
            f"stratum {stratum}: effective sample size per arm {ess[0]:.1f}/{ess[1]:.1f} is below {MIN_ESS:g}")
    return float(np.sum(w1 * y) / np.sum(w1) - np.sum(w0 * y) / np.sum(w0)), ess


@dataclass
class WeightingResult:
    stratum: str
    estimate: float
    ci_low: float
    ci_high: float
    ess_arm0: float
    ess_arm1: float
    assumption: str
    n_boot: int
    n_failed: int = 0
    boot: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in
                ("stratum", "estimate", "ci_low", "ci_high", "ess_arm0", "ess_arm1", "assumption",
                 "n_boot", "n_failed")}


def tau_weighting(
    data: pd.DataFrame,
    fits: ScoreFits,
    stratum="01",
    outcome: str = "Y",
    assumption: str = "ER",
    n_boot: int = 500,
    seed: int = 0,
    level: float = 0.95,
) -> WeightingResult:
    """Weighting estimate of a stratum's effect with a percentile bootstrap interval.

    Each bootstrap replicate resamples units with replacement, refits the
    three score models and recomputes the estimate; replicate ``r`` draws
    from its own stream spawned from ``seed``.

    Raises
    ------
    UnstableEstimateError
        If either arm's Kish effective sample size is below 10.
    """
    stratum = _canon(stratum)
    assumption = assumption.upper()
    if assumption not in ("ER", "PI"):
        raise ValueError("assumption must be 'ER' or 'PI'")
    if outcome not in data.columns:
        raise DataError(f"outcome column {outcome!r} not found")
    y = data[outcome].to_numpy(dtype=float)
    z = _binary(data, fits.treatment)
    d = _binary(data, fits.intermediate)
    pi, p0, p1 = fits.predict(data)
    est, ess = _estimate(y, z, d, pi, p0, p1, stratum, assumption)
    if min(ess) < MIN_ESS:
        raise UnstableEstimateError(f"effective sample size per arm {ess[0]:.1f}/{ess[1]:.1f} "
                                    f"is below {MIN_ESS:g}")

    X = fits.design(data)
    n = len(y)
    boots, failed = [], 0
    streams = np.random.SeedSequence(seed).spawn(n_boot)
    for ss in streams:
        idx = np.random.default_rng(ss).integers(0, n, size=n)
        Xb, zb, db, yb = X[idx], z[idx], d[idx], y[idx]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                pr = fit_logistic(Xb, zb).predict(Xb)
                q0 = fit_logistic(Xb[zb == 0], db[zb == 0]).predict(Xb)
                q1 = fit_logistic(Xb[zb == 1], db[zb == 1]).predict(Xb)
            boots.append(_estimate(yb, zb, db, pr, q0, q1, stratum, assumption)[0])
        except (UnstableEstimateError, MonotonicityError, DataError):
            failed += 1
    boots = np.asarray(boots)
    alpha = (1.0 - level) / 2.0
    if len(boots):
        lo, hi = np.quantile(boots, [alpha, 1.0 - alpha])
    else:
        lo = hi = np.nan
    return WeightingResult(stratum, est, float(lo), float(hi), ess[0], ess[1], assumption,
                           n_boot, failed, boots)


def wald_cace(data: pd.DataFrame, treatment: str = "Z", intermediate: str = "D", outcome: str = "Y") -> float:
    """Instrumental-variable ratio (difference in Y means) / (difference in D means)."""
    z = _binary(data, treatment)
    d = data[intermediate].to_numpy(dtype=float)
    y = data[outcome].to_numpy(dtype=float)
    if z.all() or not z.any():
        raise DataError("both arms must be present")
    den = d[z == 1].mean() - d[z == 0].mean()
    if den == 0:
        raise ZeroDivisionError("treatment does not shift the intermediate variable (zero first stage)")
    return float((y[z == 1].mean() - y[z == 0].mean()) / den)
