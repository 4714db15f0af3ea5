"""Seeded data generators for the benchmark designs and a flu-trial analog.

Each design draws a latent stratum per unit, a randomized assignment Z,
realizes the intermediate variables from the stratum label and draws the
outcome from the stratum-by-arm outcome model. :func:`generate` returns the
observed data and a :class:`TruthRecord` with the latent strata and the true
estimands.

Designs
-------
sim1
    One-sided-free noncompliance, two N(0, 1) covariates, gaussian outcome.
sim2
    Two intermediate variables, five strata, no covariates.
sim3
    Noncompliance with a Weibull-Cox event time and exponential censoring.
sim4
    As sim1 (without the interaction) plus a shared N(0, 1) cluster effect.
flu_analog
    Encouragement design with binary hospitalisation outcome, age and COPD
    covariates. Parameters are chosen so the three strata have proportions
    near (0.69, 0.11, 0.19).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
import pandas as pd
from scipy import special

from .exceptions import ConfigError
from .strata import d_of, parse_strata

__all__ = ["SimDesign", "TruthRecord", "generate", "DESIGNS", "sim3_survival"]

DESIGNS = ("sim1", "sim2", "sim3", "sim4", "flu_analog")

_DEFAULT_N = {"sim1": 10000, "sim2": 10000, "sim3": 10000, "sim4": 1000, "flu_analog": 2861}

_STRATA = {
    "sim1": {"n": "00*", "c": "01", "a": "11*"},
    "sim2": {"nn": "00|00*", "nc": "00|01", "cc": "01|01", "na": "00|11*", "aa": "11|11*"},
    "sim3": {"n": "00", "c": "01", "a": "11"},
    "sim4": {"n": "00*", "c": "01", "a": "11*"},
    "flu_analog": {"n": "00*", "c": "01", "a": "11*"},
}

_PROBS = {
    "sim1": (0.3, 0.5, 0.2),
    "sim2": (0.15, 0.30, 0.20, 0.20, 0.15),
    "sim3": (0.25, 0.60, 0.15),
    "sim4": (0.3, 0.5, 0.2),
}

# Weibull-Cox (theta, alpha) per stratum and arm for sim3
SIM3_COX = {
    "n": ((np.log(2.0), -4.0), (np.log(1.5), -3.0)),
    "c": ((np.log(1.5), -2.5), (np.log(1.0), -1.5)),
    "a": ((np.log(1.0), -1.0), (np.log(0.6), 0.0)),
}

# (mean, sd) per stratum and arm for sim2
SIM2_GAUSS = {
    "nn": ((3.0, 1.0), (3.0, 1.0)),
    "nc": ((-1.0, 0.5), (-3.0, 0.5)),
    "cc": ((2.0, 0.5), (5.0, 0.5)),
    "na": ((-1.0, 3.0), (-1.0, 3.0)),
    "aa": ((1.0, 2.0), (1.0, 2.0)),
}

# flu analog: S-model scores relative to "n", and outcome logits, as
# (intercept, age, copd); age is standardized, copd ~ Bernoulli(0.25)
FLU_S = {"c": (np.log(0.114 / 0.694) + 0.025, 0.05, -0.10), "a": (np.log(0.192 / 0.694) - 0.075, 0.25, 0.30)}
FLU_Y = {
    "n": (special.logit(0.082) - 0.125, 0.3, 0.5),
    "c:0": (special.logit(0.167) - 0.125, 0.3, 0.5),
    "c:1": (special.logit(0.069) - 0.125, 0.3, 0.5),
    "a": (special.logit(0.100) - 0.125, 0.3, 0.5),
}

# model calls matching each design; mixture cells leave the intercepts weakly
# identified, so every design uses a proper N(0, 1) intercept prior
_PRIOR = {"prior_intercept": "normal(0, 1)"}
FIT_HINTS = {
    "sim1": dict(s_formula="Z + D ~ 1", y_formula="Y ~ X1 * X2", family="gaussian",
                 strata={"n": "00*", "c": "01", "a": "11*"}, **_PRIOR),
    "sim2": dict(s_formula="Z + D1 + D2 ~ 1", y_formula="Y ~ 1", family="gaussian",
                 strata={"nn": "00|00*", "nc": "00|01", "cc": "01|01", "na": "00|11*", "aa": "11|11*"}, **_PRIOR),
    "sim3": dict(s_formula="Z + D ~ 1", y_formula="Y + delta ~ 1", family="survival(method = \"Cox\")",
                 strata={"n": "00", "c": "01", "a": "11"}, **_PRIOR),
    "sim4": dict(s_formula="Z + D ~ 1", y_formula="Y ~ X1 + X2 + (1 | C)", family="gaussian",
                 strata={"n": "00*", "c": "01", "a": "11*"}, **_PRIOR),
    "flu_analog": dict(s_formula="encouragement + vaccination ~ age + copd",
                       y_formula="hospital ~ age + copd", family="binomial(link = \"logit\")",
                       strata={"n": "00*", "c": "01", "a": "11*"}, prior_coefficient="normal(0, 1)", **_PRIOR),
}


@dataclass(frozen=True)
class SimDesign:
    """Which design to draw, how many units, and the seed.

    ``overrides`` may replace ``probs`` (stratum probabilities, sim1-sim4),
    ``censor_rate`` (sim3) or ``n_clusters`` (sim4).
    """

    design: str
    n: int | None = None
    seed: int = 1
    overrides: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ConfigError(f"unknown design {self.design!r}; choose from {DESIGNS}")
        if self.n is not None and self.n < 1:
            raise ConfigError("n must be at least 1")
        unknown = set(self.overrides) - {"probs", "censor_rate", "n_clusters"}
        if unknown:
            raise ConfigError(f"unsupported overrides {sorted(unknown)}")
        if "probs" in self.overrides:
            p = np.asarray(self.overrides["probs"], dtype=float)
            if self.design == "flu_analog":
                raise ConfigError("flu_analog strata probabilities follow from its S-model")
            if len(p) != len(_STRATA[self.design]) or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
                raise ConfigError("probs must be non-negative, one per stratum, and sum to 1")

    @property
    def size(self) -> int:
        return self.n if self.n is not None else _DEFAULT_N[self.design]

    @property
    def probs(self) -> tuple[float, ...] | None:
        if "probs" in self.overrides:
            return tuple(float(v) for v in self.overrides["probs"])
        return _PROBS.get(self.design)


@dataclass
class TruthRecord:
    """Latent strata and true estimands for one generated dataset.

    ``pi`` and ``means`` are population values where they are available in
    closed form; ``sample_pi`` and ``sample_contrasts`` are computed on the
    drawn units. ``means`` is keyed ``"stratum:z"``; ``contrasts`` by stratum
    (arm 1 minus arm 0).
    """

    design: str
    n: int
    seed: int
    strata: dict[str, str]
    pi: dict[str, float]
    means: dict[str, float]
    contrasts: dict[str, float]
    sample_pi: dict[str, float]
    sample_contrasts: dict[str, float]
    latent: np.ndarray = field(repr=False)
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def cace(self) -> float:
        key = "c" if "c" in self.contrasts else next(iter(self.contrasts))
        return self.contrasts[key]

    def to_dict(self, include_latent: bool = True) -> dict:
        out = {
            "design": self.design,
            "n": self.n,
            "seed": self.seed,
            "strata": self.strata,
            "pi": self.pi,
            "means": self.means,
            "contrasts": self.contrasts,
            "sample_pi": self.sample_pi,
            "sample_contrasts": self.sample_contrasts,
            "fit": FIT_HINTS[self.design],
            **{k: v for k, v in self.extra.items() if k != "event_time"},
        }
        if include_latent:
            out["latent"] = [str(v) for v in self.latent]
        return out

    def to_json(self, path=None, include_latent: bool = True) -> str:
        text = json.dumps(self.to_dict(include_latent), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def sim3_survival(stratum: str, z: int, t) -> np.ndarray:
    """True Pr(T > t | S = stratum, Z = z) in sim3."""
    theta, alpha = SIM3_COX[stratum][z]
    t = np.asarray(t, dtype=float)
    return np.exp(-np.exp(np.exp(theta) * np.log(t) + alpha - theta))


def _assign(rng, n, spec, probs):
    s = rng.choice(len(spec), size=n, p=np.asarray(probs) / np.sum(probs))
    z = (rng.uniform(size=n) < 0.5).astype(int)
    codes = np.array([[d_of(lab, arm) for arm in (0, 1)] for lab in spec.strata])  # (S, 2, K)
    d = codes[s, z]
    return s, z, d


def _sample_stats(names, s, contrast_per_unit):
    n = len(s)
    pi = {nm: float(np.mean(s == k)) if n else 0.0 for k, nm in enumerate(names)}
    con = {}
    for k, nm in enumerate(names):
        sel = s == k
        con[nm] = float(np.mean(contrast_per_unit[sel, k])) if sel.any() else float("nan")
    return pi, con


def generate(design: SimDesign | str, n: int | None = None, seed: int | None = None):
    """Draw a dataset and its :class:`TruthRecord`.

    >>> data, truth = generate(SimDesign("sim1", n=200, seed=1))
    >>> truth.cace
    6.0
    """
    if isinstance(design, str):
        design = SimDesign(design, n=n, seed=1 if seed is None else seed)
    rng = np.random.default_rng(design.seed)
    spec = parse_strata(_STRATA[design.design])
    names = spec.names
    n = design.size
    fn = {"sim1": _sim1, "sim2": _sim2, "sim3": _sim3, "sim4": _sim4, "flu_analog": _flu}[design.design]
    data, truth_parts = fn(rng, n, spec, design)
    s = truth_parts.pop("latent_index")
    per_unit = truth_parts.pop("unit_contrast")
    sample_pi, sample_con = _sample_stats(names, s, per_unit)
    if "sample_contrasts" in truth_parts:
        sample_con = truth_parts.pop("sample_contrasts")
    truth = TruthRecord(
        design=design.design,
        n=n,
        seed=design.seed,
        strata=dict(_STRATA[design.design]),
        pi=truth_parts.pop("pi"),
        means=truth_parts.pop("means"),
        contrasts=truth_parts.pop("contrasts"),
        sample_pi=sample_pi,
        sample_contrasts=sample_con,
        latent=np.array(names, dtype=object)[s],
        extra=truth_parts,
    )
    return data, truth


def _sim1_means(x1, x2, z, with_interaction=True):
    """(n, 3) outcome means for strata n, c, a under arm z."""
    mn = x1 - x2 + (x1 * x2 if with_interaction else 0.0)
    mc = 2 * x1 - (1 + z) * x2 + 2 + 6 * z
    ma = x1 + x2 - 1
    return np.column_stack([np.broadcast_to(v, np.shape(x1)) for v in (mn, mc, ma)])


def _gaussian_noncompliance(rng, n, spec, design, with_interaction, cluster_effect=None):
    probs = design.probs
    x1 = rng.standard_normal(n)
    x2 = rng.standard_normal(n)
    s, z, d = _assign(rng, n, spec, probs)
    mean = _sim1_means(x1, x2, z, with_interaction)[np.arange(n), s]
    if cluster_effect is not None:
        mean = mean + cluster_effect
    sd = np.array([0.3, 0.2, 0.2])[s]
    y = mean + sd * rng.standard_normal(n)
    data = pd.DataFrame({"Z": z, "D": d[:, 0], "Y": y, "X1": x1, "X2": x2})
    unit_con = _sim1_means(x1, x2, 1, with_interaction) - _sim1_means(x1, x2, 0, with_interaction)
    names = spec.names
    parts = {
        "pi": dict(zip(names, map(float, probs))),
        "means": {"n:0": 0.0, "n:1": 0.0, "c:0": 2.0, "c:1": 8.0, "a:0": -1.0, "a:1": -1.0},
        "contrasts": {"n": 0.0, "c": 6.0, "a": 0.0},
        "latent_index": s,
        "unit_contrast": unit_con,
    }
    return data, parts


def _sim1(rng, n, spec, design):
    return _gaussian_noncompliance(rng, n, spec, design, with_interaction=True)


def _sim4(rng, n, spec, design):
    j = int(design.overrides.get("n_clusters", 10))
    xi = rng.standard_normal(j)
    cluster = rng.integers(0, j, size=n)
    data, parts = _gaussian_noncompliance(rng, n, spec, design, with_interaction=False,
                                          cluster_effect=xi[cluster])
    data["C"] = cluster + 1
    parts["cluster_effects"] = xi.tolist()
    return data, parts


def _sim2(rng, n, spec, design):
    probs = design.probs
    s, z, d = _assign(rng, n, spec, probs)
    names = spec.names
    mu = np.array([[SIM2_GAUSS[nm][a][0] for a in (0, 1)] for nm in names])
    sd = np.array([[SIM2_GAUSS[nm][a][1] for a in (0, 1)] for nm in names])
    y = mu[s, z] + sd[s, z] * rng.standard_normal(n)
    data = pd.DataFrame({"Z": z, "D1": d[:, 0], "D2": d[:, 1], "Y": y})
    means = {f"{nm}:{a}": float(mu[k, a]) for k, nm in enumerate(names) for a in (0, 1)}
    contrasts = {nm: float(mu[k, 1] - mu[k, 0]) for k, nm in enumerate(names)}
    return data, {
        "pi": dict(zip(names, map(float, probs))),
        "means": means,
        "contrasts": contrasts,
        "latent_index": s,
        "unit_contrast": np.broadcast_to(mu[:, 1] - mu[:, 0], (n, len(names))),
    }


def _sim3(rng, n, spec, design):
    probs = design.probs
    rate = float(design.overrides.get("censor_rate", 0.3))
    s, z, d = _assign(rng, n, spec, probs)
    names = spec.names
    theta = np.array([[SIM3_COX[nm][a][0] for a in (0, 1)] for nm in names])[s, z]
    alpha = np.array([[SIM3_COX[nm][a][1] for a in (0, 1)] for nm in names])[s, z]
    u = rng.uniform(size=n)
    # invert S(t) = exp(-t^k exp(alpha - theta)), k = exp(theta)
    t = (-np.log(u) * np.exp(theta - alpha)) ** np.exp(-theta)
    c = rng.exponential(1.0 / rate, size=n)
    y = np.minimum(t, c)
    delta = (t <= c).astype(int)
    data = pd.DataFrame({"Z": z, "D": d[:, 0], "Y": y, "delta": delta})
    # mean survival time of a Weibull with shape k and scale lambda^{-1/k}
    means = {}
    for nm in names:
        for a in (0, 1):
            th, al = SIM3_COX[nm][a]
            k = np.exp(th)
            lam = np.exp(al - th)
            means[f"{nm}:{a}"] = float(lam ** (-1.0 / k) * special.gamma(1.0 + 1.0 / k))
    contrasts = {nm: means[f"{nm}:1"] - means[f"{nm}:0"] for nm in names}
    return data, {
        "pi": dict(zip(names, map(float, probs))),
        "means": means,
        "contrasts": contrasts,
        "latent_index": s,
        "unit_contrast": np.broadcast_to(np.array(list(contrasts.values())), (n, len(names))),
        "cox": {nm: [list(map(float, SIM3_COX[nm][a])) for a in (0, 1)] for nm in names},
        "censor_rate": rate,
        "event_time": t,
    }


def _flu(rng, n, spec, design):
    names = spec.names
    age = rng.standard_normal(n)
    copd = (rng.uniform(size=n) < 0.25).astype(int)
    X = np.column_stack([np.ones(n), age, copd])
    scores = np.column_stack([np.zeros(n)] + [X @ np.array(FLU_S[nm]) for nm in names[1:]])
    p = special.softmax(scores, axis=1)
    u = rng.uniform(size=n)
    s = np.minimum((np.cumsum(p, axis=1) < u[:, None]).sum(axis=1), len(names) - 1)
    z = (rng.uniform(size=n) < 0.5).astype(int)
    codes = np.array([[d_of(lab, arm) for arm in (0, 1)] for lab in spec.strata])
    d = codes[s, z][:, 0]
    # (n, S, 2) outcome probabilities
    mu = np.empty((n, len(names), 2))
    for k, nm in enumerate(names):
        for a in (0, 1):
            key = nm if nm in FLU_Y else f"{nm}:{a}"
            mu[:, k, a] = special.expit(X @ np.array(FLU_Y[key]))
    y = (rng.uniform(size=n) < mu[np.arange(n), s, z]).astype(int)
    data = pd.DataFrame({"encouragement": z, "vaccination": d, "hospital": y,
                         "age": age, "copd": copd})
    # estimands on the drawn covariates, weighting units by their true stratum probabilities
    w = p / p.sum(axis=0)
    means = {f"{nm}:{a}": float(np.sum(w[:, k] * mu[:, k, a])) for k, nm in enumerate(names) for a in (0, 1)}
    contrasts = {nm: means[f"{nm}:1"] - means[f"{nm}:0"] for nm in names}
    return data, {
        "pi": {nm: float(p[:, k].mean()) for k, nm in enumerate(names)},
        "means": means,
        "contrasts": contrasts,
        "latent_index": s,
        "unit_contrast": mu[:, :, 1] - mu[:, :, 0],
    }
