"""Joint principal-stratification model: S-model, Y-model, priors and posterior.

The observed-data likelihood marginalises the latent stratum: for unit ``i``

    log sum_{s compatible with (Z_i, D_i)} Pr(S=s | X_i) f(Y_i | s, Z_i, X_i)

where Pr(S | X) is a multinomial logit with the first declared stratum as
reference and f is a GLM, Weibull-Cox or log-normal AFT density whose
parameters live in the (stratum, arm) cells of :func:`strata.cell_map`.

All positive parameters are sampled on the log scale (the Jacobian is part
of the log-posterior). Gradients are accumulated backwards through the
mixture by hand, so one evaluation costs a few dense passes over the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import sparse

from .exceptions import DataError
from .families import Family, FamilySpec
from .formula import (
    INTERCEPT,
    DesignMatrix,
    FormulaAst,
    RoleBinding,
    bind_roles,
    build_design,
    parse_formula,
)
from .priors import PriorSpec
from .strata import CellMap, StrataSpec, cell_map, compatibility_matrix, parse_strata

__all__ = ["Block", "ParamLayout", "PsModel", "build_model"]

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Block:
    """A contiguous span of the flat parameter vector."""

    kind: str  # beta | gamma | aux | re_s | sd_s | re_y | sd_y
    start: int
    shape: tuple[int, ...]
    names: tuple[str, ...]
    positive: bool = False
    prior_class: tuple[str, ...] | None = None
    owner: int = -1  # stratum (S blocks) or cell (Y blocks)
    re_index: int = -1

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 0

    @property
    def stop(self) -> int:
        return self.start + self.size

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)


@dataclass(frozen=True)
class ParamLayout:
    blocks: tuple[Block, ...]

    @property
    def width(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def names(self) -> list[str]:
        return [n for b in self.blocks for n in b.names]

    @property
    def positive(self) -> np.ndarray:
        out = np.zeros(self.width, dtype=bool)
        for b in self.blocks:
            out[b.slice] = b.positive
        return out

    def of_kind(self, kind: str) -> list[Block]:
        return [b for b in self.blocks if b.kind == kind]

    def span(self, kind: str) -> slice:
        bs = self.of_kind(kind)
        if not bs:
            return slice(0, 0)
        return slice(bs[0].start, bs[-1].stop)


class _LayoutBuilder:
    def __init__(self):
        self.blocks: list[Block] = []
        self.pos = 0

    def add(self, kind, shape, names, **kw) -> Block:
        b = Block(kind, self.pos, tuple(shape), tuple(names), **kw)
        assert b.size == len(b.names)
        self.blocks.append(b)
        self.pos += b.size
        return b


def _coef_classes(columns: Sequence[str]) -> tuple[str, ...]:
    return tuple("intercept" if c == INTERCEPT else "coefficient" for c in columns)


@dataclass(eq=False)
class PsModel:
    """Immutable bundle of data, design and parameter layout.

    Build with :func:`build_model`. Methods taking ``u`` expect the flat
    *unconstrained* parameter vector.
    """

    roles: RoleBinding
    s_ast: FormulaAst
    y_ast: FormulaAst
    s_design: DesignMatrix
    y_design: DesignMatrix
    strata: StrataSpec
    cells: CellMap
    family_spec: FamilySpec
    priors: PriorSpec
    layout: ParamLayout
    z: np.ndarray
    d: np.ndarray
    y: np.ndarray
    event: np.ndarray | None
    compat: np.ndarray = field(repr=False)
    cell_idx: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.family = Family(self.family_spec)
        n = len(self.z)
        self._s_groups = [_group_matrix(b.group_index, b.n_groups) for b in self.s_design.random]
        self._y_groups = [_group_matrix(b.group_index, b.n_groups) for b in self.y_design.random]
        # strata-major copies for the hot path: reductions over a short
        # leading axis are much cheaper than over a short trailing one
        self._xs = np.ascontiguousarray(self.s_design.values)
        self._xy = np.ascontiguousarray(self.y_design.values)
        self._xs_t = np.ascontiguousarray(self._xs.T)
        self._xy_t = np.ascontiguousarray(self._xy.T)
        self._cell_t = np.ascontiguousarray(self.cell_idx.T)
        self._cols = np.arange(n)[None, :]
        self._compat_t = np.ascontiguousarray(self.compat.T)
        self._y_row = self.y[None, :]
        self._ev_row = None if self.event is None else self.event[None, :]
        ref = self.strata.reference_index
        self._others = [s for s in range(len(self.strata)) if s != ref]
        pos = self.layout.positive
        self._pos_mask = pos
        # prior bookkeeping: flat index arrays per prior class
        idx: dict[str, list[int]] = {}
        for b in self.layout.blocks:
            if b.prior_class is None:
                continue
            for k, cls in enumerate(b.prior_class):
                idx.setdefault(cls, []).append(b.start + k)
        self._prior_idx = {k: np.asarray(v, dtype=np.intp) for k, v in idx.items()}

    # ------------------------------------------------------------------ basics
    @property
    def n(self) -> int:
        return len(self.z)

    @property
    def n_strata(self) -> int:
        return len(self.strata)

    @property
    def n_cells(self) -> int:
        return self.cells.n_cells

    @property
    def width(self) -> int:
        return self.layout.width

    @property
    def param_names(self) -> list[str]:
        return self.layout.names

    @property
    def multilevel(self) -> bool:
        return bool(self.s_design.random or self.y_design.random)

    def constrain(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(over="ignore"):
            return np.where(self._pos_mask, np.exp(np.where(self._pos_mask, u, 0.0)), u)

    def unconstrain(self, theta):
        theta = np.asarray(theta, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self._pos_mask, np.log(np.where(self._pos_mask, theta, 1.0)), theta)

    def vector(self, values: Mapping[str, float] | None = None, default: float = 0.0) -> np.ndarray:
        """Unconstrained vector from constrained values given by parameter name.

        Unnamed entries take ``default`` on the unconstrained scale (so
        positive parameters default to exp(0) = 1).
        """
        u = np.full(self.width, float(default))
        if values:
            index = {n: i for i, n in enumerate(self.param_names)}
            for k, v in values.items():
                if k not in index:
                    raise KeyError(f"unknown parameter {k!r}")
                i = index[k]
                u[i] = np.log(v) if self._pos_mask[i] else v
        return u

    def random_init(self, rng: np.random.Generator, radius: float = 2.0) -> np.ndarray:
        return rng.uniform(-radius, radius, size=self.width)

    # --------------------------------------------------------------- unpacking
    def unpack(self, theta) -> SimpleNamespace:
        """Structured view of a *constrained* parameter vector."""
        theta = np.asarray(theta, dtype=float)
        S, C = self.n_strata, self.n_cells
        ref = self.strata.reference_index
        pS, pY = self.s_design.n_fixed, self.y_design.n_fixed
        beta = np.zeros((S, pS))
        others = [s for s in range(S) if s != ref]
        beta[others] = theta[self.layout.span("beta")].reshape(len(others), pS)
        gamma = theta[self.layout.span("gamma")].reshape(C, pY)
        aux = theta[self.layout.span("aux")] if self.family.has_aux else None
        re_s, sd_s = [], []
        for k, blk in enumerate(self.s_design.random):
            r = np.zeros((S, blk.n_groups, blk.width))
            sd = np.ones((S, blk.width))
            for b in self.layout.blocks:
                if b.re_index == k and b.kind == "re_s":
                    r[b.owner] = theta[b.slice].reshape(b.shape)
                elif b.re_index == k and b.kind == "sd_s":
                    sd[b.owner] = theta[b.slice]
            re_s.append(r)
            sd_s.append(sd)
        re_y, sd_y = [], []
        for k, blk in enumerate(self.y_design.random):
            r = np.zeros((C, blk.n_groups, blk.width))
            sd = np.ones((C, blk.width))
            for b in self.layout.blocks:
                if b.re_index == k and b.kind == "re_y":
                    r[b.owner] = theta[b.slice].reshape(b.shape)
                elif b.re_index == k and b.kind == "sd_y":
                    sd[b.owner] = theta[b.slice]
            re_y.append(r)
            sd_y.append(sd)
        return SimpleNamespace(beta=beta, gamma=gamma, aux=aux, re_s=re_s, sd_s=sd_s,
                               re_y=re_y, sd_y=sd_y)

    # ------------------------------------------------------- linear predictors
    def s_linear(self, p: SimpleNamespace, design: DesignMatrix | None = None) -> np.ndarray:
        """(n, S) S-model scores; the reference column is identically zero."""
        design = design or self.s_design
        eta = design.values @ p.beta.T
        for blk, r in zip(design.random, p.re_s):
            eta += np.einsum("nq,snq->ns", blk.values, r[:, blk.group_index, :])
        return eta

    def y_linear(self, p: SimpleNamespace, design: DesignMatrix | None = None) -> np.ndarray:
        """(n, C) Y-model linear predictor for every unit in every cell."""
        design = design or self.y_design
        eta = design.values @ p.gamma.T
        for blk, r in zip(design.random, p.re_y):
            eta += np.einsum("nq,cnq->nc", blk.values, r[:, blk.group_index, :])
        return eta

    # ------------------------------------------------------------ unit terms
    def _terms(self, u):
        """Strata-major (S, n) log stratum probabilities, outcome log-lik and derivatives."""
        theta = self.constrain(u)
        p = self.unpack(theta)
        eta_s = p.beta @ self._xs_t
        for blk, r in zip(self.s_design.random, p.re_s):
            eta_s += np.einsum("snq,nq->sn", r[:, blk.group_index, :], blk.values)
        log_ps = eta_s - _col_lse(eta_s)[0]
        eta_c = p.gamma @ self._xy_t
        for blk, r in zip(self.y_design.random, p.re_y):
            eta_c += np.einsum("cnq,nq->cn", r[:, blk.group_index, :], blk.values)
        eta_y = eta_c[self._cell_t, self._cols]
        aux = None if p.aux is None else p.aux[self._cell_t]
        ll, d_eta, d_aux = self.family.loglik(self._y_row, eta_y, aux, self._ev_row)
        return theta, p, log_ps, ll, d_eta, d_aux

    def s_log_probs(self, u, i: int | None = None) -> np.ndarray:
        """Log stratum probabilities, (S,) for unit ``i`` or (n, S) for all."""
        p = self.unpack(self.constrain(u))
        eta = self.s_linear(p)
        lp = (eta.T - _col_lse(eta.T)[0]).T
        return lp if i is None else lp[i]

    def y_log_density(self, cell: int, i: int, u) -> float:
        """log f(Y_i | cell parameters); for survival this is the censored likelihood."""
        p = self.unpack(self.constrain(u))
        eta = self.y_linear(p)[i, cell]
        aux = None if p.aux is None else p.aux[cell]
        ev = None if self.event is None else self.event[i]
        return float(self.family.loglik(self.y[i], eta, aux, ev)[0])

    def survival_log_lik(self, cell: int, i: int, u) -> float:
        if not self.family_spec.is_survival:
            raise TypeError("survival_log_lik requires a survival family")
        return self.y_log_density(cell, i, u)

    def mixture_log_lik(self, u, i: int | None = None):
        """Per-unit marginal log-likelihood (scalar for one unit, else (n,))."""
        _, _, log_ps, ll, _, _ = self._terms(u)
        out = _col_lse(np.where(self._compat_t, log_ps + ll, -np.inf))[0][0]
        return out if i is None else float(out[i])

    def log_likelihood(self, u) -> float:
        return float(np.sum(self.mixture_log_lik(u)))

    # ---------------------------------------------------------------- posterior
    def log_posterior(self, u) -> float:
        return self.log_posterior_and_grad(u)[0]

    def log_posterior_and_grad(self, u) -> tuple[float, np.ndarray]:
        """Unnormalised log-posterior on the unconstrained scale and its gradient.

        Returns ``(-inf, zeros)`` when the density is not finite (the sampler
        treats that as a divergent point).
        """
        u = np.asarray(u, dtype=float)
        if not np.all(np.isfinite(u)):
            return -np.inf, np.zeros_like(u)
        # overflow far in the tails only produces non-finite values, which are rejected below
        with np.errstate(over="ignore", invalid="ignore"):
            return self._log_posterior_and_grad(u)

    def _log_posterior_and_grad(self, u):
        grad = np.zeros_like(u)
        lay = self.layout
        C, n = self.n_cells, self.n
        theta, p, log_ps, ll, d_eta, d_aux = self._terms(u)

        total = 0.0
        if n:
            lse, resp = _col_lse(np.where(self._compat_t, log_ps + ll, -np.inf))
            if not np.all(np.isfinite(lse)):
                return -np.inf, grad
            total = float(lse.sum())  # resp: posterior stratum membership
            g_s = resp - np.exp(log_ps)  # d total / d eta_s, (S, n)
            g_y = np.zeros((C, n))
            g_y[self._cell_t, self._cols] = resp * d_eta
            grad[lay.span("beta")] = (g_s[self._others] @ self._xs).ravel()
            grad[lay.span("gamma")] = (g_y @ self._xy).ravel()
            if self.family.has_aux:
                g_aux = np.zeros((C, n))
                g_aux[self._cell_t, self._cols] = resp * d_aux
                grad[lay.span("aux")] = g_aux.sum(axis=1)
            for k, (blk, gm) in enumerate(zip(self.s_design.random, self._s_groups)):
                # (J, S, q): sum over units of cluster j of g_s[s, i] * Z[i, q]
                g = np.stack([gm @ (g_s * blk.values[:, q]).T for q in range(blk.width)], axis=-1)
                for b in lay.blocks:
                    if b.kind == "re_s" and b.re_index == k:
                        grad[b.slice] = g[:, b.owner, :].ravel()
            for k, (blk, gm) in enumerate(zip(self.y_design.random, self._y_groups)):
                g = np.stack([gm @ (g_y * blk.values[:, q]).T for q in range(blk.width)], axis=-1)
                for b in lay.blocks:
                    if b.kind == "re_y" and b.re_index == k:
                        grad[b.slice] = g[:, b.owner, :].ravel()

        # fixed-effect and auxiliary priors (with log-Jacobian for positive ones)
        for cls, idx in self._prior_idx.items():
            prior = self.priors[cls]
            lp, gp = prior.logpdf_and_grad(theta[idx])
            if self._pos_mask[idx].any():
                total += float(np.sum(lp + u[idx]))
                grad[idx] += gp * theta[idx] + 1.0
            else:
                total += float(np.sum(lp))
                grad[idx] += gp

        # hierarchical random effects: re ~ N(0, sd^2), sd ~ re_sd prior
        re_prior = self.priors["re_sd"]
        for b in lay.blocks:
            if b.kind not in ("re_s", "re_y"):
                continue
            sd_block = next(c for c in lay.blocks if c.kind == ("sd_s" if b.kind == "re_s" else "sd_y")
                            and c.owner == b.owner and c.re_index == b.re_index)
            r = theta[b.slice].reshape(b.shape)  # (J, q)
            sd = theta[sd_block.slice]
            zsc = r / sd
            total += float(np.sum(-0.5 * zsc**2 - np.log(sd) - 0.5 * LOG_2PI))
            grad[b.slice] += (-zsc / sd).ravel()
            grad[sd_block.slice] += np.sum(zsc**2 - 1.0, axis=0)
        for b in lay.blocks:
            if b.kind in ("sd_s", "sd_y"):
                sd = theta[b.slice]
                lp, gp = re_prior.logpdf_and_grad(sd)
                total += float(np.sum(lp + u[b.slice]))
                grad[b.slice] += gp * sd + 1.0

        if not np.isfinite(total) or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros_like(u)
        return total, grad

    # ------------------------------------------------------------- convenience
    def describe(self) -> str:
        lines = [
            f"S-model: {self.s_ast}",
            f"Y-model: {self.y_ast}  [{self.family_spec}]",
            "strata:  " + ", ".join(f"{s.name}={s.code}{'*' if e else ''}"
                                     for s, e in zip(self.strata.strata, self.strata.er_flags)),
            f"cells:   {', '.join(self.cells.names)}",
            f"units:   {self.n}, parameters: {self.width}",
        ]
        return "\n".join(lines)


def _col_lse(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Log-sum-exp over axis 0 (kept as a (1, n) row) and weights exp(a - lse)."""
    m = a.max(axis=0, keepdims=True)
    m[~np.isfinite(m)] = 0.0
    e = np.exp(a - m)
    tot = e.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        lse = np.log(tot) + m
        w = e / tot
    return lse, w


def _group_matrix(index: np.ndarray, n_groups: int):
    n = len(index)
    return sparse.csr_matrix((np.ones(n), (index, np.arange(n))), shape=(n_groups, n))


def _make_layout(strata: StrataSpec, cells: CellMap, family: Family,
                 s_design: DesignMatrix, y_design: DesignMatrix) -> ParamLayout:
    lb = _LayoutBuilder()
    ref = strata.reference_index
    s_cols, y_cols = s_design.column_names, y_design.column_names
    for s, lab in enumerate(strata.strata):
        if s == ref:
            continue
        lb.add("beta", (len(s_cols),), [f"beta[{lab.name}][{c}]" for c in s_cols],
               prior_class=_coef_classes(s_cols), owner=s)
    for c, cname in enumerate(cells.names):
        lb.add("gamma", (len(y_cols),), [f"gamma[{cname}][{col}]" for col in y_cols],
               prior_class=_coef_classes(y_cols), owner=c)
    if family.has_aux:
        for c, cname in enumerate(cells.names):
            lb.add("aux", (1,), [f"{family.aux_name}[{cname}]"], positive=family.aux_positive,
                   prior_class=(family.aux_name,), owner=c)
    for k, blk in enumerate(s_design.random):
        for s, lab in enumerate(strata.strata):
            if s == ref:
                continue
            lb.add("re_s", (blk.n_groups, blk.width),
                   [f"re_S[{lab.name}][{col}|{blk.group_var}][{lvl}]"
                    for lvl in blk.levels for col in blk.column_names], owner=s, re_index=k)
            lb.add("sd_s", (blk.width,),
                   [f"sd_S[{lab.name}][{col}|{blk.group_var}]" for col in blk.column_names],
                   positive=True, owner=s, re_index=k)
    for k, blk in enumerate(y_design.random):
        for c, cname in enumerate(cells.names):
            lb.add("re_y", (blk.n_groups, blk.width),
                   [f"re_Y[{cname}][{col}|{blk.group_var}][{lvl}]"
                    for lvl in blk.levels for col in blk.column_names], owner=c, re_index=k)
            lb.add("sd_y", (blk.width,),
                   [f"sd_Y[{cname}][{col}|{blk.group_var}]" for col in blk.column_names],
                   positive=True, owner=c, re_index=k)
    return ParamLayout(tuple(lb.blocks))


def build_model(
    s_formula: str | FormulaAst,
    y_formula: str | FormulaAst,
    family,
    data: pd.DataFrame,
    strata: StrataSpec | Mapping[str, str],
    er=None,
    priors: PriorSpec | Mapping | None = None,
    treatment=None,
) -> PsModel:
    """Validate inputs and assemble a :class:`PsModel`.

    Parameters
    ----------
    s_formula, y_formula
        ``"Z + D ~ X"`` and ``"Y ~ X"`` (``"Y + delta ~ X"`` for survival).
    family
        A :class:`FamilySpec` or anything :meth:`FamilySpec.coerce` accepts.
    strata
        A :class:`StrataSpec` or a ``name -> label`` mapping such as
        ``{"n": "00*", "c": "01", "a": "11*"}``.
    er
        Optional explicit exclusion-restriction flags.
    priors
        A :class:`PriorSpec` or a mapping of prior class to prior.
    """
    s_ast = s_formula if isinstance(s_formula, FormulaAst) else parse_formula(s_formula)
    y_ast = y_formula if isinstance(y_formula, FormulaAst) else parse_formula(y_formula)
    fam_spec = FamilySpec.coerce(family)
    if not isinstance(data, pd.DataFrame):
        data = pd.DataFrame(data)
    roles = bind_roles(s_ast, y_ast, fam_spec, data, treatment=treatment)
    spec = strata if isinstance(strata, StrataSpec) else parse_strata(strata, er)
    if spec.K != roles.n_intermediates:
        raise DataError(f"strata describe {spec.K} intermediate variable(s) but the S-formula "
                        f"names {roles.n_intermediates}")
    if priors is None:
        priors = PriorSpec()
    elif not isinstance(priors, PriorSpec):
        priors = PriorSpec(dict(priors))

    s_design = build_design(s_ast, data)
    y_design = build_design(y_ast, data)
    z = data[roles.treatment].to_numpy(dtype=float).astype(int)
    d = data[list(roles.intermediates)].to_numpy(dtype=float).astype(int).reshape(len(data), roles.n_intermediates)
    y = data[roles.outcome].to_numpy(dtype=float)
    event = None if roles.event is None else data[roles.event].to_numpy(dtype=float)
    family_obj = Family(fam_spec)
    family_obj.check_support(y, event)

    compat = compatibility_matrix(spec, z, d)
    cells = cell_map(spec)
    cell_idx = cells.cells[:, z].T.copy() if len(z) else np.zeros((0, len(spec)), dtype=np.intp)
    layout = _make_layout(spec, cells, family_obj, s_design, y_design)
    return PsModel(roles, s_ast, y_ast, s_design, y_design, spec, cells, fam_spec, priors,
                   layout, z, d, y, event, compat, cell_idx)
