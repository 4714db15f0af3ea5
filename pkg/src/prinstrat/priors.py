"""Prior distributions and the per-class prior set.

Real-line priors: flat, normal, t, cauchy, lasso (double exponential),
logistic. Positive priors: chisq, inv_chisq, exponential (rate), gamma
(shape, rate), inv_gamma (shape, scale), weibull (shape, scale).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import special

from .exceptions import ConfigError

__all__ = ["Prior", "PriorSpec", "make_prior", "PRIOR_CLASSES", "POSITIVE_CLASSES"]

LOG_2PI = np.log(2.0 * np.pi)

# name -> (domain, ordered parameter names with defaults)
_DISTS: dict[str, tuple[str, tuple[tuple[str, float], ...]]] = {
    "flat": ("real", ()),
    "normal": ("real", (("mean", 0.0), ("sigma", 1.0))),
    "t": ("real", (("mean", 0.0), ("sigma", 1.0), ("df", 1.0))),
    "cauchy": ("real", (("mean", 0.0), ("sigma", 1.0))),
    "lasso": ("real", (("mean", 0.0), ("sigma", 1.0))),
    "logistic": ("real", (("mean", 0.0), ("sigma", 1.0))),
    "chisq": ("positive", (("df", 1.0),)),
    "inv_chisq": ("positive", (("df", 1.0),)),
    "exponential": ("positive", (("beta", 1.0),)),
    "gamma": ("positive", (("alpha", 1.0), ("beta", 1.0))),
    "inv_gamma": ("positive", (("alpha", 1.0), ("beta", 1.0))),
    "weibull": ("positive", (("alpha", 1.0), ("sigma", 1.0))),
}

PRIOR_CLASSES = ("intercept", "coefficient", "sigma", "alpha", "lambda", "theta", "re_sd")
POSITIVE_CLASSES = frozenset({"sigma", "alpha", "lambda", "re_sd"})


@dataclass(frozen=True)
class Prior:
    dist: str
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.dist not in _DISTS:
            raise ConfigError(f"unknown prior {self.dist!r}; supported: {', '.join(_DISTS)}")
        names = _DISTS[self.dist][1]
        if len(self.params) != len(names):
            raise ConfigError(f"prior_{self.dist} takes {len(names)} parameters")
        for (n, _), v in zip(names, self.params):
            if not np.isfinite(v) or (n != "mean" and v <= 0):
                raise ConfigError(f"prior_{self.dist}: {n} must be {'finite' if n == 'mean' else 'positive'}")

    @property
    def domain(self) -> str:
        return _DISTS[self.dist][0]

    @property
    def kwargs(self) -> dict[str, float]:
        return {n: v for (n, _), v in zip(_DISTS[self.dist][1], self.params)}

    def __str__(self) -> str:
        args = ", ".join(f"{k} = {v:g}" for k, v in self.kwargs.items())
        return f"prior_{self.dist}({args})"

    def logpdf(self, x):
        """Elementwise log density (0 everywhere for the flat prior)."""
        return self._eval(np.asarray(x, dtype=float))[0]

    def grad(self, x):
        return self._eval(np.asarray(x, dtype=float))[1]

    def logpdf_and_grad(self, x):
        return self._eval(np.asarray(x, dtype=float))

    def _eval(self, x):
        d, p = self.dist, self.params
        with np.errstate(divide="ignore", invalid="ignore"):
            if d == "flat":
                return np.zeros_like(x), np.zeros_like(x)
            if d == "normal":
                m, s = p
                r = (x - m) / s
                return -0.5 * r**2 - np.log(s) - 0.5 * LOG_2PI, -r / s
            if d in ("t", "cauchy"):
                m, s = p[:2]
                nu = p[2] if d == "t" else 1.0
                r = (x - m) / s
                c = special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * np.log(nu * np.pi) - np.log(s)
                return c - (nu + 1) / 2 * np.log1p(r**2 / nu), -(nu + 1) * r / (s * (nu + r**2))
            if d == "lasso":
                m, s = p
                return -np.log(2 * s) - np.abs(x - m) / s, -np.sign(x - m) / s
            if d == "logistic":
                m, s = p
                r = (x - m) / s
                return -np.log(s) - r - 2 * np.logaddexp(0.0, -r), -np.tanh(r / 2) / s
            # positive support
            pos = x > 0
            if d == "chisq":
                k = p[0] / 2
                lp = (k - 1) * np.log(x) - x / 2 - k * np.log(2) - special.gammaln(k)
                g = (k - 1) / x - 0.5
            elif d == "inv_chisq":
                k = p[0] / 2
                lp = -k * np.log(2) - special.gammaln(k) - (k + 1) * np.log(x) - 1 / (2 * x)
                g = -(k + 1) / x + 1 / (2 * x**2)
            elif d == "exponential":
                b = p[0]
                lp, g = np.log(b) - b * x, -b * np.ones_like(x)
            elif d == "gamma":
                a, b = p
                lp = a * np.log(b) - special.gammaln(a) + (a - 1) * np.log(x) - b * x
                g = (a - 1) / x - b
            elif d == "inv_gamma":
                a, b = p
                lp = a * np.log(b) - special.gammaln(a) - (a + 1) * np.log(x) - b / x
                g = -(a + 1) / x + b / x**2
            else:  # weibull
                a, s = p
                lp = np.log(a) - np.log(s) + (a - 1) * (np.log(x) - np.log(s)) - (x / s) ** a
                g = (a - 1) / x - a * x ** (a - 1) / s**a
            return np.where(pos, lp, -np.inf), np.where(pos, g, 0.0)


def make_prior(spec) -> Prior:
    """Build a prior from a :class:`Prior`, a mapping or a call string.

    Accepted forms: ``Prior("normal", (0, 1))``, ``{"dist": "normal", "mean": 0}``,
    ``"prior_normal(0, 1)"``, ``"normal(mean = 0, sigma = 2)"``, ``"flat"``.
    """
    if isinstance(spec, Prior):
        return spec
    if isinstance(spec, Mapping):
        spec = dict(spec)
        dist = spec.pop("dist", None) or spec.pop("distribution", None)
        if dist is None:
            raise ConfigError(f"prior mapping needs a 'dist' key: {spec!r}")
        dist = dist.removeprefix("prior_")
        return _from_kwargs(dist, [], spec)
    if not isinstance(spec, str):
        raise ConfigError(f"cannot interpret prior {spec!r}")
    m = re.fullmatch(r"\s*(?:prior_)?([a-z_]+)\s*(?:\((.*)\))?\s*", spec)
    if m is None:
        raise ConfigError(f"cannot interpret prior {spec!r}")
    dist, args = m.group(1), (m.group(2) or "").strip()
    positional, named = [], {}
    for part in filter(None, (a.strip() for a in args.split(","))):
        if "=" in part:
            k, v = (s.strip() for s in part.split("=", 1))
            named[k] = v
        else:
            positional.append(part)
    return _from_kwargs(dist, positional, named)


def _from_kwargs(dist: str, positional: list, named: dict) -> Prior:
    if dist not in _DISTS:
        raise ConfigError(f"unknown prior {dist!r}; supported: {', '.join(_DISTS)}")
    names = _DISTS[dist][1]
    if len(positional) > len(names):
        raise ConfigError(f"prior_{dist} takes at most {len(names)} parameters")
    unknown = set(named) - {n for n, _ in names}
    if unknown:
        raise ConfigError(f"prior_{dist} has no parameter(s) {sorted(unknown)}")
    vals = []
    for i, (n, default) in enumerate(names):
        raw = positional[i] if i < len(positional) else named.get(n, default)
        try:
            vals.append(float(raw))
        except (TypeError, ValueError):
            raise ConfigError(f"prior_{dist}: {n}={raw!r} is not a number") from None
    return Prior(dist, tuple(vals))


def _default_priors() -> dict[str, Prior]:
    ig = Prior("inv_gamma", (1.0, 1.0))
    return {
        "intercept": Prior("flat"),
        "coefficient": Prior("normal", (0.0, 1.0)),
        "sigma": ig,
        "alpha": ig,
        "lambda": ig,
        "theta": Prior("normal", (0.0, 1.0)),
        "re_sd": ig,
    }


@dataclass(frozen=True)
class PriorSpec:
    """One prior per parameter class; unspecified classes keep their defaults."""

    priors: Mapping[str, Prior] = field(default_factory=_default_priors)

    def __post_init__(self):
        full = _default_priors()
        for cls, p in dict(self.priors).items():
            if cls not in PRIOR_CLASSES:
                raise ConfigError(f"unknown prior class {cls!r}; classes are {PRIOR_CLASSES}")
            full[cls] = make_prior(p)
        for cls, p in full.items():
            want = "positive" if cls in POSITIVE_CLASSES else "real"
            if p.domain != want:
                raise ConfigError(f"prior for {cls} must have {want} support, got {p}")
        object.__setattr__(self, "priors", full)

    @classmethod
    def from_overrides(cls, **overrides) -> "PriorSpec":
        return cls({k: v for k, v in overrides.items() if v is not None})

    def __getitem__(self, cls: str) -> Prior:
        return self.priors[cls]
