"""Outcome families, link functions and survival likelihoods.

Every family exposes ``loglik(y, eta, aux, event)`` returning the pointwise
log-likelihood together with its derivatives with respect to the linear
predictor and the *unconstrained* auxiliary parameter (``log sigma``,
``log alpha``, ``log lambda``, or the Weibull shape exponent ``theta`` which
already lives on the real line). Invalid means (a log-link probability above
one, a non-positive Gamma mean, ...) yield ``-inf`` with zero derivatives.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from scipy import special

from .exceptions import ConfigError, DataError

__all__ = ["FamilySpec", "Link", "Family", "get_family", "LINKS", "FAMILY_LINKS"]

LOG_2PI = np.log(2.0 * np.pi)

FAMILY_LINKS: dict[str, tuple[str, ...]] = {
    "gaussian": ("identity", "log", "inverse"),
    "binomial": ("logit", "probit", "cauchit", "log", "cloglog"),
    "Gamma": ("inverse", "identity", "log"),
    "poisson": ("log", "identity", "sqrt"),
    "inverse.gaussian": ("1/mu^2", "inverse", "identity", "log"),
    "survival": ("Cox", "AFT"),
}
_AUX = {"gaussian": "sigma", "Gamma": "alpha", "inverse.gaussian": "lambda"}


@dataclass(frozen=True)
class FamilySpec:
    """Outcome family plus link (or survival method, ``Cox`` / ``AFT``)."""

    family: str
    link: str | None = None

    def __post_init__(self):
        if self.family not in FAMILY_LINKS:
            raise ConfigError(f"unknown family {self.family!r}; supported families: "
                              f"{', '.join(FAMILY_LINKS)}")
        legal = FAMILY_LINKS[self.family]
        if self.link is None:
            object.__setattr__(self, "link", legal[0])
        elif self.link not in legal:
            what = "method" if self.family == "survival" else "link"
            raise ConfigError(f"{what} {self.link!r} is not available for family "
                              f"{self.family!r}; choose from {legal}")

    @property
    def is_survival(self) -> bool:
        return self.family == "survival"

    @property
    def aux_name(self) -> str | None:
        if self.family == "survival":
            return "theta" if self.link == "Cox" else "sigma"
        return _AUX.get(self.family)

    def __str__(self) -> str:
        if self.is_survival:
            return f'survival(method = "{self.link}")'
        return f'{self.family}(link = "{self.link}")'

    @classmethod
    def coerce(cls, spec) -> "FamilySpec":
        """Accept a FamilySpec, a mapping, or strings like ``'binomial(link = "logit")'``."""
        if isinstance(spec, FamilySpec):
            return spec
        if isinstance(spec, dict):
            spec = dict(spec)
            fam = spec.pop("family", None)
            link = spec.pop("link", None) or spec.pop("method", None)
            if fam is None or spec:
                raise ConfigError(f"family mapping needs 'family' and optionally 'link'/'method', "
                                  f"got extra keys {sorted(spec)}")
            return cls(fam, link)
        if not isinstance(spec, str):
            raise ConfigError(f"cannot interpret family {spec!r}")
        m = re.fullmatch(r"\s*([A-Za-z.]+)\s*(?:\((.*)\))?\s*", spec)
        if m is None:
            raise ConfigError(f"cannot interpret family {spec!r}")
        fam, args = m.group(1), (m.group(2) or "").strip()
        link = None
        if args:
            am = re.fullmatch(r"(?:(?:link|method)\s*=\s*)?[\"']?([^\"']+)[\"']?", args)
            if am is None:
                raise ConfigError(f"cannot interpret family arguments {args!r}")
            link = am.group(1).strip()
        return cls(fam, link)


# ---------------------------------------------------------------------------- links


class Link:
    """Inverse link ``mu = g^{-1}(eta)`` and its derivative."""

    name = ""

    def inverse(self, eta):
        raise NotImplementedError

    def dmu(self, eta):
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"Link({self.name!r})"


class _Identity(Link):
    name = "identity"

    def inverse(self, eta):
        return np.asarray(eta, dtype=float)

    def dmu(self, eta):
        return np.ones_like(np.asarray(eta, dtype=float))


class _Log(Link):
    name = "log"

    def inverse(self, eta):
        return np.exp(eta)

    def dmu(self, eta):
        return np.exp(eta)


class _Inverse(Link):
    name = "inverse"

    def inverse(self, eta):
        with np.errstate(divide="ignore"):
            return 1.0 / np.asarray(eta, dtype=float)

    def dmu(self, eta):
        with np.errstate(divide="ignore"):
            return -1.0 / np.asarray(eta, dtype=float) ** 2


class _Sqrt(Link):
    name = "sqrt"

    def inverse(self, eta):
        return np.asarray(eta, dtype=float) ** 2

    def dmu(self, eta):
        return 2.0 * np.asarray(eta, dtype=float)


class _InvSquare(Link):
    name = "1/mu^2"

    def inverse(self, eta):
        eta = np.asarray(eta, dtype=float)
        with np.errstate(all="ignore"):
            return np.where(eta > 0, 1.0 / np.sqrt(np.abs(eta)), np.nan)

    def dmu(self, eta):
        eta = np.asarray(eta, dtype=float)
        with np.errstate(all="ignore"):
            return np.where(eta > 0, -0.5 * np.abs(eta) ** -1.5, np.nan)


class _Logit(Link):
    name = "logit"

    def inverse(self, eta):
        return special.expit(eta)

    def dmu(self, eta):
        p = special.expit(eta)
        return p * (1.0 - p)


class _Probit(Link):
    name = "probit"

    def inverse(self, eta):
        return special.ndtr(eta)

    def dmu(self, eta):
        return np.exp(-0.5 * np.asarray(eta, dtype=float) ** 2 - 0.5 * LOG_2PI)


class _Cauchit(Link):
    name = "cauchit"

    def inverse(self, eta):
        return np.arctan2(1.0, -np.asarray(eta, dtype=float)) / np.pi

    def dmu(self, eta):
        return 1.0 / (np.pi * (1.0 + np.asarray(eta, dtype=float) ** 2))


class _Cloglog(Link):
    name = "cloglog"

    def inverse(self, eta):
        return -np.expm1(-np.exp(eta))

    def dmu(self, eta):
        eta = np.asarray(eta, dtype=float)
        return np.exp(eta - np.exp(eta))


LINKS: dict[str, Link] = {
    cls.name: cls()
    for cls in (_Identity, _Log, _Inverse, _Sqrt, _InvSquare, _Logit, _Probit, _Cauchit, _Cloglog)
}


# ------------------------------------------------------------------------- families


def _bernoulli_parts(link: str, eta):
    """log(mu), log(1-mu) and their eta-derivatives, evaluated stably."""
    eta = np.asarray(eta, dtype=float)
    with np.errstate(all="ignore"):
        if link == "logit":
            lm, l1m = -np.logaddexp(0.0, -eta), -np.logaddexp(0.0, eta)
            return lm, l1m, special.expit(-eta), -special.expit(eta)
        if link == "probit":
            lm, l1m = special.log_ndtr(eta), special.log_ndtr(-eta)
            lphi = -0.5 * eta**2 - 0.5 * LOG_2PI
            return lm, l1m, np.exp(lphi - lm), -np.exp(lphi - l1m)
        if link == "cauchit":
            mu, omu = np.arctan2(1.0, -eta) / np.pi, np.arctan2(1.0, eta) / np.pi
            dmu = 1.0 / (np.pi * (1.0 + eta**2))
            return np.log(mu), np.log(omu), dmu / mu, -dmu / omu
        if link == "log":
            ok = eta < 0
            e = np.where(ok, eta, -1.0)
            lm = np.where(ok, e, np.inf)
            l1m = np.where(ok, np.log(-np.expm1(e)), -np.inf)
            return lm, l1m, np.ones_like(e), np.where(ok, np.exp(e) / np.expm1(e), 0.0)
        if link == "cloglog":
            ee = np.exp(eta)
            lm = np.log(-np.expm1(-ee))
            return lm, -ee, ee / np.expm1(ee), -ee
    raise ConfigError(f"unsupported binomial link {link!r}")


class Family:
    """Pointwise likelihood for one :class:`FamilySpec`."""

    def __init__(self, spec: FamilySpec):
        self.spec = spec
        self.name = spec.family
        self.aux_name = spec.aux_name
        self.link = None if spec.is_survival else LINKS[spec.link]

    @property
    def has_aux(self) -> bool:
        return self.aux_name is not None

    @property
    def aux_positive(self) -> bool:
        return self.has_aux and self.aux_name != "theta"

    def __repr__(self) -> str:
        return f"Family({self.spec})"

    # -- support --------------------------------------------------------------
    def check_support(self, y, event=None) -> None:
        y = np.asarray(y, dtype=float)
        bad = ~np.isfinite(y)
        what = "finite"
        if self.name == "binomial":
            bad |= ~np.isin(y, (0.0, 1.0))
            what = "0 or 1"
        elif self.name == "poisson":
            bad |= (y < 0) | (y != np.floor(y))
            what = "a non-negative integer"
        elif self.name in ("Gamma", "inverse.gaussian", "survival"):
            bad |= y <= 0
            what = "positive"
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DataError(f"{self.name} outcome must be {what}; unit {i} has y={y[i]!r}")
        if self.name == "survival":
            ev = np.asarray(event, dtype=float)
            if ev.shape != y.shape or not np.isin(ev, (0.0, 1.0)).all():
                raise DataError("survival event indicator must be 0/1 for every unit")

    # -- densities in mean space (used by tests and simulation) --------------
    def logpdf(self, y, mu, aux=None):
        """log f(y; mu, aux) with ``aux`` on its natural scale."""
        ll, _, _ = self._mean_space(np.asarray(y, dtype=float), np.asarray(mu, dtype=float), aux)
        return ll

    def _mean_space(self, y, mu, aux):
        """(loglik, d/dmu, d/d unconstrained aux)."""
        with np.errstate(all="ignore"):
            if self.name == "gaussian":
                r = (y - mu) / aux
                return -0.5 * LOG_2PI - np.log(aux) - 0.5 * r**2, r / aux, r**2 - 1.0
            if self.name == "binomial":
                ok = (mu > 0) & (mu < 1)
                ll = np.where(ok, y * np.log(mu) + (1 - y) * np.log1p(-mu), -np.inf)
                return ll, np.where(ok, y / mu - (1 - y) / (1 - mu), 0.0), 0.0
            if self.name == "poisson":
                ok = mu > 0
                ll = np.where(ok, special.xlogy(y, mu) - mu - special.gammaln(y + 1), -np.inf)
                return ll, np.where(ok, y / mu - 1.0, 0.0), 0.0
            if self.name == "Gamma":
                a = aux
                ok = mu > 0
                ll = (a * np.log(a / mu) - special.gammaln(a) + (a - 1) * np.log(y) - a * y / mu)
                d_mu = a * (y - mu) / mu**2
                d_a = a * (np.log(a / mu) + 1.0 - special.digamma(a) + np.log(y) - y / mu)
                return (np.where(ok, ll, -np.inf), np.where(ok, d_mu, 0.0), np.where(ok, d_a, 0.0))
            if self.name == "inverse.gaussian":
                lam = aux
                ok = mu > 0
                q = (y - mu) ** 2 / (y * mu**2)
                ll = 0.5 * (np.log(lam) - LOG_2PI - 3 * np.log(y)) - 0.5 * lam * q
                d_mu = lam * (y - mu) / mu**3
                d_l = 0.5 - 0.5 * lam * q
                return (np.where(ok, ll, -np.inf), np.where(ok, d_mu, 0.0), np.where(ok, d_l, 0.0))
        raise ValueError(f"{self.name} has no mean-space density")

    # -- linear-predictor space ---------------------------------------------
    def loglik(self, y, eta, aux=None, event=None):
        """Pointwise log-likelihood and derivatives w.r.t. ``eta`` and unconstrained aux.

        ``aux`` is on its natural scale (sigma, alpha, lambda; theta for Cox).
        Arrays broadcast together.
        """
        if self.name == "survival":
            return self._survival(y, eta, aux, event)
        y = np.asarray(y, dtype=float)
        eta = np.asarray(eta, dtype=float)
        if self.name == "binomial":
            lm, l1m, dlm, dl1m = _bernoulli_parts(self.spec.link, eta)
            with np.errstate(invalid="ignore"):
                ll = np.where(y == 1, lm, 0.0) + np.where(y == 0, l1m, 0.0)
                d = np.where(y == 1, dlm, 0.0) + np.where(y == 0, dl1m, 0.0)
            ok = np.isfinite(ll) & (ll <= 0)
            return np.where(ok, ll, -np.inf), np.where(ok, d, 0.0), np.zeros_like(ll)
        with np.errstate(all="ignore"):
            mu = self.link.inverse(eta)
            dmu = self.link.dmu(eta)
            ll, d_mu, d_aux = self._mean_space(y, mu, aux)
            ok = np.isfinite(ll) & np.isfinite(dmu)
            d_eta = np.where(ok, d_mu * dmu, 0.0)
        ll = np.where(ok, ll, -np.inf)
        d_aux = np.where(ok, d_aux, 0.0) * np.ones_like(ll)
        return ll, d_eta, d_aux

    def _survival(self, y, eta, aux, event):
        y = np.asarray(y, dtype=float)
        eta = np.asarray(eta, dtype=float)
        ev = np.asarray(event, dtype=float)
        logy = np.log(y)
        if self.spec.link == "Cox":
            theta = aux
            k = np.exp(theta)
            with np.errstate(over="ignore"):
                H = np.exp(k * logy + eta - theta)  # cumulative hazard
            ll = ev * ((k - 1.0) * logy + eta) - H
            d_eta = ev - H
            d_theta = ev * k * logy - H * (k * logy - 1.0)
        else:
            sigma = aux
            r = (logy - eta) / sigma
            lphi = -0.5 * r**2 - 0.5 * LOG_2PI
            lsurv = special.log_ndtr(-r)
            mills = np.exp(lphi - lsurv)
            ll = np.where(ev == 1, lphi - np.log(sigma) - logy, lsurv)
            d_eta = np.where(ev == 1, r / sigma, mills / sigma)
            d_theta = np.where(ev == 1, r**2 - 1.0, mills * r)
        ok = np.isfinite(ll)
        return np.where(ok, ll, -np.inf), np.where(ok, d_eta, 0.0), np.where(ok, d_theta, 0.0)

    # -- estimand helpers -----------------------------------------------------
    def mean(self, eta):
        return self.link.inverse(eta)

    def survival_prob(self, t, eta, aux):
        """Pr(T > t) under the Weibull-Cox or log-normal AFT model."""
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            if self.spec.link == "Cox":
                k = np.exp(aux)
                return np.exp(-np.exp(k * np.log(t) + eta - aux))
            return special.ndtr(-(np.log(t) - eta) / aux)

    def hazard(self, t, eta, aux):
        t = np.asarray(t, dtype=float)
        if self.spec.link == "Cox":
            return t ** (np.exp(aux) - 1.0) * np.exp(eta)
        r = (np.log(t) - eta) / aux
        return np.exp(-0.5 * r**2 - 0.5 * LOG_2PI - special.log_ndtr(-r)) / (aux * t)


def get_family(spec) -> Family:
    return Family(FamilySpec.coerce(spec))
