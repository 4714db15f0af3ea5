"""Posterior estimands: stratum proportions, outcome means, survival curves, contrasts.

Every estimand is averaged over the empirical covariate distribution of the
fitted data, one posterior draw at a time:

    pi_s        = mean_i p_is
    mu_sz       = sum_i m_sz(x_i) p_is / sum_i p_is
    mu_sz(t)    = sum_i Pr(T_i > t | s, z, x_i) p_is / sum_i p_is

where p_is is unit i's stratum probability under the S-model. Results are
:class:`EstimandCube` objects (labelled axes plus a trailing draw axis) that
:func:`contrast` differences and :func:`summarize` condenses.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .model import PsModel
from .sampler import DrawMatrix

__all__ = [
    "EstimandCube",
    "SummaryTable",
    "ContrastSpec",
    "unit_stratum_probs",
    "strata_proportions",
    "outcome_means",
    "survival_outcome",
    "time_grid",
    "contrast",
    "summarize",
    "itt_decomposition",
    "QUANTILES",
]

QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)
# a stratum whose probabilities sum below this over all units has no usable weight
_MIN_WEIGHT = 1e-12


@dataclass(frozen=True)
class EstimandCube:
    """Posterior draws of an estimand indexed by labelled axes.

    ``values`` has shape ``(*[len(l) for l in labels], n_draws)``. Draws that
    could not be evaluated are NaN and counted in ``n_flagged``.
    """

    axes: tuple[str, ...]
    labels: tuple[tuple[str, ...], ...]
    values: np.ndarray = field(repr=False)
    n_flagged: int = 0
    coords: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        shape = tuple(len(l) for l in self.labels)
        if len(self.axes) != len(self.labels) or self.values.shape[:-1] != shape:
            raise ValueError(f"values shape {self.values.shape} does not match axes {shape}")

    @property
    def n_draws(self) -> int:
        return self.values.shape[-1]

    def axis(self, name: str) -> int:
        try:
            return self.axes.index(name)
        except ValueError:
            raise KeyError(f"cube has no axis {name!r}; axes are {self.axes}") from None

    def row_labels(self) -> list[str]:
        return [":".join(combo) for combo in itertools.product(*self.labels)]

    def rows(self) -> np.ndarray:
        """(n_rows, n_draws) with rows in :meth:`row_labels` order."""
        return self.values.reshape(-1, self.n_draws)

    def __getitem__(self, label: str) -> np.ndarray:
        """Draws of one cell, addressed by its row label (e.g. ``"c:{1}-{0}"``)."""
        labels = self.row_labels()
        try:
            return self.rows()[labels.index(label)]
        except ValueError:
            raise KeyError(f"no cell {label!r}; have {labels[:8]}{' ...' if len(labels) > 8 else ''}") from None

    def to_long(self) -> pd.DataFrame:
        """Long format: one column per axis, then ``draw`` and ``value``."""
        combos = list(itertools.product(*self.labels))
        b = self.n_draws
        cols = {ax: np.repeat([c[k] for c in combos], b) for k, ax in enumerate(self.axes)}
        cols["draw"] = np.tile(np.arange(b), len(combos))
        cols["value"] = self.rows().reshape(-1)
        return pd.DataFrame(cols)


@dataclass(frozen=True)
class ContrastSpec:
    """Axes to difference, applied in the given order (each at most once)."""

    axes: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.axes)) != len(self.axes):
            raise ValueError(f"each axis may be contrasted once; got {self.axes}")

    @classmethod
    def coerce(cls, spec) -> "ContrastSpec":
        if isinstance(spec, ContrastSpec):
            return spec
        if isinstance(spec, str):
            spec = [a.strip() for a in spec.split(",") if a.strip()]
        return cls(tuple(spec))


@dataclass
class SummaryTable:
    """Posterior mean, sd and quantiles per estimand cell."""

    frame: pd.DataFrame  # index: row labels; columns mean, sd, 2.5%, ...
    axes: tuple[str, ...] = ()
    axis_values: pd.DataFrame | None = None
    n_draws: int = 0
    n_flagged: int = 0

    @property
    def columns(self) -> list[str]:
        return list(self.frame.columns)

    def __getitem__(self, key):
        return self.frame[key]

    @property
    def index(self):
        return self.frame.index

    def to_frame(self, with_axes: bool = True) -> pd.DataFrame:
        df = self.frame.copy()
        if with_axes and self.axis_values is not None:
            df = pd.concat([self.axis_values.set_index(df.index), df], axis=1)
        df.index.name = "estimand"
        return df.reset_index()

    def to_csv(self, path=None, header_lines: Sequence[str] = ()) -> str:
        text = "".join(f"# {h}\n" for h in header_lines)
        text += self.to_frame().to_csv(index=False, float_format="%.10g")
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def __str__(self) -> str:
        body = self.frame.to_string(float_format=lambda v: f"{v:.7g}")
        if self.n_flagged:
            body += f"\n({self.n_flagged} draw(s) excluded: stratum weight numerically zero)"
        return body

    __repr__ = __str__


# ------------------------------------------------------------------ draw access


def _draw_array(draws) -> np.ndarray:
    if isinstance(draws, DrawMatrix):
        return draws.flat()
    arr = np.asarray(draws, dtype=float)
    return arr[None, :] if arr.ndim == 1 else arr


def _unit_probs(model: PsModel, p) -> np.ndarray:
    eta = model.s_linear(p)
    eta = eta - eta.max(axis=1, keepdims=True)
    e = np.exp(eta)
    return e / e.sum(axis=1, keepdims=True)


def unit_stratum_probs(draws, model: PsModel) -> np.ndarray:
    """(n_units, n_strata, n_draws) stratum probabilities.

    This materializes every draw at once; for large fits prefer the
    summaries, which loop over draws.
    """
    arr = _draw_array(draws)
    out = np.empty((model.n, model.n_strata, len(arr)))
    for k, theta in enumerate(arr):
        out[:, :, k] = _unit_probs(model, model.unpack(theta))
    return out


def mean_unit_stratum_probs(draws, model: PsModel) -> np.ndarray:
    """Posterior mean of p_is, shape (n_units, n_strata)."""
    arr = _draw_array(draws)
    acc = np.zeros((model.n, model.n_strata))
    for theta in arr:
        acc += _unit_probs(model, model.unpack(theta))
    return acc / max(len(arr), 1)


def strata_proportions(draws, model: PsModel) -> EstimandCube:
    """Marginal stratum proportions pi_s, averaged over the fitted units."""
    arr = _draw_array(draws)
    vals = np.empty((model.n_strata, len(arr)))
    for k, theta in enumerate(arr):
        vals[:, k] = _unit_probs(model, model.unpack(theta)).mean(axis=0)
    return EstimandCube(("stratum",), (tuple(model.strata.names),), vals)


def _weighted_cell_means(model: PsModel, probs: np.ndarray, per_cell: np.ndarray):
    """mu[s, z, ...] = sum_i per_cell[i, cell(s, z), ...] p_is / sum_i p_is."""
    S = model.n_strata
    denom = probs.sum(axis=0)  # (S,)
    out = np.empty((S, 2) + per_cell.shape[2:])
    bad = denom < _MIN_WEIGHT
    for s in range(S):
        for z in (0, 1):
            c = model.cells[s, z]
            out[s, z] = np.tensordot(probs[:, s], per_cell[:, c], axes=(0, 0)) / max(denom[s], _MIN_WEIGHT)
    out[bad] = np.nan
    return out, bad


def outcome_means(draws, model: PsModel) -> EstimandCube:
    """Potential-outcome means mu_sz for every stratum and arm."""
    if model.family_spec.is_survival:
        raise TypeError("use survival_outcome for survival families")
    arr = _draw_array(draws)
    vals = np.empty((model.n_strata, 2, len(arr)))
    flagged = 0
    for k, theta in enumerate(arr):
        p = model.unpack(theta)
        probs = _unit_probs(model, p)
        mu = model.family.mean(model.y_linear(p))  # (n, C)
        vals[:, :, k], bad = _weighted_cell_means(model, probs, mu)
        flagged += int(bad.any())
    return EstimandCube(("stratum", "z"), (tuple(model.strata.names), ("0", "1")), vals, flagged)


def time_grid(model: PsModel, points=None) -> np.ndarray:
    """Evaluation times for survival curves.

    ``points`` may be an explicit increasing sequence of positive times or an
    integer ``m`` (default 10), giving ``j * q90 / m`` for ``j = 1..m`` where
    q90 is the 90% quantile of the observed event times.
    """
    if points is None:
        points = 10
    if np.isscalar(points) and float(points).is_integer() and not isinstance(points, float):
        m = int(points)
        if m < 1:
            raise ValueError("the time grid needs at least one point")
        ev = model.y[model.event == 1] if model.event is not None else model.y
        if len(ev) == 0:
            ev = model.y
        q90 = float(np.quantile(ev, 0.9))
        return q90 * np.arange(1, m + 1) / m
    t = np.asarray(points, dtype=float).ravel()
    if t.size == 0:
        raise ValueError("empty time grid")
    if np.any(t <= 0) or np.any(np.diff(t) <= 0) or not np.all(np.isfinite(t)):
        raise ValueError("time points must be positive, finite and strictly increasing")
    return t


def _fmt_time(t: float) -> str:
    return f"{t:.6g}"


def survival_outcome(draws, model: PsModel, timepoints=None) -> EstimandCube:
    """Survival curves mu_sz(t) = Pr(T(z) > t | S = s) on a time grid."""
    if not model.family_spec.is_survival:
        raise TypeError("survival_outcome needs a survival family")
    grid = time_grid(model, timepoints)
    arr = _draw_array(draws)
    vals = np.empty((model.n_strata, 2, len(grid), len(arr)))
    flagged = 0
    for k, theta in enumerate(arr):
        p = model.unpack(theta)
        probs = _unit_probs(model, p)
        eta = model.y_linear(p)  # (n, C)
        surv = model.family.survival_prob(grid[None, None, :], eta[:, :, None], p.aux[None, :, None])
        vals[:, :, :, k], bad = _weighted_cell_means(model, probs, surv)
        flagged += int(bad.any())
    return EstimandCube(
        ("stratum", "z", "time"),
        (tuple(model.strata.names), ("0", "1"), tuple(_fmt_time(t) for t in grid)),
        # the weighted average can creep up by rounding; curves are non-increasing
        np.minimum.accumulate(np.clip(vals, 0.0, 1.0), axis=2),
        flagged,
        coords={"time": grid},
    )


def contrast(cube: EstimandCube, spec) -> EstimandCube:
    """All pairwise differences (later minus earlier) along each requested axis.

    Differences are taken in the order the axes are listed; labels read
    ``"{b}-{a}"`` for ``value[b] - value[a]``.
    """
    spec = ContrastSpec.coerce(spec)
    vals, labels = cube.values, list(cube.labels)
    coords = dict(cube.coords)
    for ax_name in spec.axes:
        ax = cube.axis(ax_name)
        n = len(labels[ax])
        if n < 2:
            raise ValueError(f"cannot contrast axis {ax_name!r} of size 1")
        pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
        moved = np.moveaxis(vals, ax, 0)
        diff = np.stack([moved[b] - moved[a] for a, b in pairs])
        vals = np.moveaxis(diff, 0, ax)
        labels[ax] = tuple(f"{{{labels[ax][b]}}}-{{{labels[ax][a]}}}" for a, b in pairs)
        coords.pop(ax_name, None)
    return EstimandCube(cube.axes, tuple(labels), vals, cube.n_flagged, coords)


def summarize(cube: EstimandCube) -> SummaryTable:
    """Mean, sd (n - 1 denominator) and the 2.5/25/50/75/97.5% quantiles per cell.

    Quantiles interpolate linearly between order statistics. NaN draws are
    left out of each row's summary.
    """
    rows = cube.rows()
    with np.errstate(invalid="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN rows
        mean = np.nanmean(rows, axis=1)
        sd = np.nanstd(rows, axis=1, ddof=1)
        qs = np.nanquantile(rows, QUANTILES, axis=1, method="linear")
    # constant rows can pick up rounding noise in the mean; pin them exactly
    const = np.all(rows == rows[:, :1], axis=1)
    mean = np.where(const, rows[:, 0], mean)
    sd = np.where(const, 0.0, sd)
    frame = pd.DataFrame({"mean": mean, "sd": sd}, index=cube.row_labels())
    for q, v in zip(QUANTILES, qs):
        frame[f"{100 * q:g}%"] = v
    combos = list(itertools.product(*cube.labels))
    axis_values = pd.DataFrame([list(c) for c in combos], columns=list(cube.axes))
    return SummaryTable(frame, cube.axes, axis_values, cube.n_draws, cube.n_flagged)


def itt_decomposition(draws, model: PsModel) -> tuple[np.ndarray, np.ndarray]:
    """Intention-to-treat effect per draw, computed two ways.

    Returns ``(sum_s pi_s (mu_s1 - mu_s0), mean_i sum_s p_is (m_is1 - m_is0))``.
    The two agree up to rounding; the pair serves as an internal check.
    """
    arr = _draw_array(draws)
    via, direct = np.empty(len(arr)), np.empty(len(arr))
    cells = model.cells.cells
    for k, theta in enumerate(arr):
        p = model.unpack(theta)
        probs = _unit_probs(model, p)
        mu = model.family.mean(model.y_linear(p))
        pi = probs.mean(axis=0)
        means, _ = _weighted_cell_means(model, probs, mu)
        via[k] = float(np.sum(pi * (means[:, 1] - means[:, 0])))
        direct[k] = float(np.mean(np.sum(probs * (mu[:, cells[:, 1]] - mu[:, cells[:, 0]]), axis=1)))
    return via, direct
