"""No-U-Turn sampling with windowed warmup, and convergence diagnostics.

The transition follows the multinomial NUTS variant: trajectories double in
a random direction, the proposal is drawn from the whole trajectory with
weights exp(-H), and building stops on a generalized U-turn or when the
energy error exceeds 1000. Warmup tunes the step size by dual averaging and
a diagonal inverse metric from windows of draws (15% / 75% / 10% split,
windows doubling from 25 iterations).

Any object with ``width``, ``param_names``, ``constrain(u)`` and
``log_posterior_and_grad(u)`` can be sampled; :class:`FunctionTarget` wraps a
bare callable.
"""

from __future__ import annotations

import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy import optimize, special, stats

from .exceptions import ConfigError, SamplerError

__all__ = [
    "SamplerConfig",
    "DrawMatrix",
    "Diagnostics",
    "FunctionTarget",
    "sample",
    "diagnose",
    "split_rhat",
    "ess_bulk",
]

STAT_NAMES = ("logp", "accept_stat", "divergent", "treedepth", "n_leapfrog", "step_size", "energy")
MAX_DELTA_H = 1000.0
RHAT_THRESHOLD = 1.05


@dataclass(frozen=True)
class SamplerConfig:
    """NUTS settings; ``iter`` counts warmup plus kept iterations."""

    chains: int = 4
    warmup: int = 1000
    iter: int = 2000
    seed: int = 1
    target_accept: float = 0.8
    max_treedepth: int = 10
    cores: int = 1
    refresh: int = 0
    init_radius: float = 2.0
    init_tries: int = 1

    def __post_init__(self):
        if self.chains < 1:
            raise ConfigError("chains must be at least 1")
        if self.warmup < 0 or self.iter <= self.warmup:
            raise ConfigError(f"need iter > warmup >= 0 (got iter={self.iter}, warmup={self.warmup})")
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigError("target_accept must lie in (0, 1)")
        if self.max_treedepth < 1:
            raise ConfigError("max_treedepth must be positive")
        if self.cores < 1:
            raise ConfigError("cores must be at least 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a non-negative 64-bit integer")
        if self.init_tries < 1:
            raise ConfigError("init_tries must be at least 1")
        if not self.init_radius > 0:
            raise ConfigError("init_radius must be positive")

    @property
    def n_draws(self) -> int:
        return self.iter - self.warmup


@dataclass(eq=False)
class FunctionTarget:
    """Adapter turning ``f(u) -> (logp, grad)`` into a samplable target."""

    fn: Callable[[np.ndarray], tuple[float, np.ndarray]]
    width: int
    names: Sequence[str] | None = None

    @property
    def param_names(self) -> list[str]:
        return list(self.names) if self.names is not None else [f"x[{i}]" for i in range(self.width)]

    def constrain(self, u):
        return np.asarray(u, dtype=float)

    def log_posterior_and_grad(self, u):
        lp, g = self.fn(np.asarray(u, dtype=float))
        return float(lp), np.asarray(g, dtype=float)


@dataclass(eq=False)
class DrawMatrix:
    """Post-warmup draws on the constrained scale.

    Attributes
    ----------
    draws : ndarray, shape (chains, draws, width)
    names : list of str
    stats : dict of ndarray, each (chains, draws)
        ``logp``, ``accept_stat``, ``divergent``, ``treedepth``,
        ``n_leapfrog``, ``step_size``, ``energy``.
    step_size, inv_metric : adapted values per chain.
    """

    draws: np.ndarray
    names: list[str]
    stats: dict[str, np.ndarray]
    step_size: np.ndarray = field(default_factory=lambda: np.zeros(0))
    inv_metric: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    config: SamplerConfig | None = None

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    @property
    def width(self) -> int:
        return self.draws.shape[2]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __getitem__(self, name: str) -> np.ndarray:
        """(chains, draws) array for one parameter."""
        return self.draws[:, :, self.index(name)]

    def flat(self) -> np.ndarray:
        """(chains * draws, width), chains stacked in order."""
        return self.draws.reshape(-1, self.width)

    @property
    def n_divergent(self) -> int:
        return int(self.stats["divergent"].sum())

    def to_frame(self, include_stats: bool = True) -> pd.DataFrame:
        c, d = self.n_chains, self.n_draws
        df = pd.DataFrame(self.flat(), columns=self.names)
        df.insert(0, "draw", np.tile(np.arange(d), c))
        df.insert(0, "chain", np.repeat(np.arange(c), d))
        if include_stats:
            for k in STAT_NAMES:
                df[f"{k}__"] = self.stats[k].reshape(-1)
        return df


# ----------------------------------------------------------------------- NUTS core


class _Point:
    __slots__ = ("q", "p", "logp", "grad")

    def __init__(self, q, p, logp, grad):
        self.q, self.p, self.logp, self.grad = q, p, logp, grad

    def copy(self):
        return _Point(self.q.copy(), self.p.copy(), self.logp, self.grad.copy())


class _Nuts:
    def __init__(self, target, rng: np.random.Generator, max_depth: int):
        self.target = target
        self.rng = rng
        self.max_depth = max_depth
        self.inv_metric = np.ones(target.width)
        self.eps = 1.0

    # -- Hamiltonian dynamics -------------------------------------------------
    def logp_grad(self, q):
        lp, g = self.target.log_posterior_and_grad(q)
        if not np.isfinite(lp) or not np.all(np.isfinite(g)):
            return -np.inf, np.zeros_like(q)
        return lp, g

    def hamiltonian(self, z: _Point) -> float:
        return -z.logp + 0.5 * float(np.dot(z.p, self.inv_metric * z.p))

    def p_sharp(self, z: _Point) -> np.ndarray:
        return self.inv_metric * z.p

    def sample_momentum(self, z: _Point) -> None:
        z.p = self.rng.standard_normal(len(z.q)) / np.sqrt(self.inv_metric)

    def leapfrog(self, z: _Point, eps: float) -> None:
        p = z.p + 0.5 * eps * z.grad
        q = z.q + eps * self.inv_metric * p
        if not np.all(np.isfinite(q)):
            z.q, z.p, z.logp, z.grad = q, p, -np.inf, np.zeros_like(q)
            return
        lp, g = self.logp_grad(q)
        z.q, z.logp, z.grad = q, lp, g
        z.p = p + 0.5 * eps * g

    def energy(self, z: _Point) -> float:
        h = self.hamiltonian(z)
        return np.inf if math.isnan(h) else h

    # -- step-size heuristic -------------------------------------------------
    def init_stepsize(self, z0: _Point) -> None:
        z = z0.copy()
        self.sample_momentum(z)
        h0 = self.energy(z)
        self.leapfrog(z, self.eps)
        delta = h0 - self.energy(z)
        direction = 1 if delta > math.log(0.8) else -1
        while True:
            z = z0.copy()
            self.sample_momentum(z)
            h0 = self.energy(z)
            self.leapfrog(z, self.eps)
            delta = h0 - self.energy(z)
            if direction == 1 and not delta > math.log(0.8):
                break
            if direction == -1 and not delta < math.log(0.8):
                break
            self.eps = self.eps * 2.0 if direction == 1 else self.eps * 0.5
            if self.eps > 1e7:
                raise SamplerError("step size diverged to infinity; the posterior is likely improper")
            if self.eps == 0:
                raise SamplerError("step size collapsed to zero; check the model for non-smooth regions")

    # -- transition -------------------------------------------------------------
    def transition(self, z0: _Point) -> tuple[_Point, dict]:
        z = z0.copy()
        self.sample_momentum(z)
        h0 = self.energy(z)
        z_fwd, z_bck, z_sample = z.copy(), z.copy(), z.copy()

        p_sharp = self.p_sharp(z)
        p_ff, ps_ff = z.p.copy(), p_sharp.copy()
        p_fb, ps_fb = z.p.copy(), p_sharp.copy()
        p_bf, ps_bf = z.p.copy(), p_sharp.copy()
        p_bb, ps_bb = z.p.copy(), p_sharp.copy()
        rho = z.p.copy()
        log_sum_w = 0.0
        self._n_leapfrog = 0
        self._sum_metro = 0.0
        self._divergent = False
        self._h0 = h0
        depth = 0

        while depth < self.max_depth:
            if self.rng.uniform() > 0.5:
                rho_bck = rho.copy()
                p_bf, ps_bf = p_fb.copy(), ps_fb.copy()
                res = self._build(depth, z_fwd, 1)
                if res is None:
                    break
                z_prop, lsw_sub, rho_fwd, (p_fb, ps_fb), (p_ff, ps_ff) = res
            else:
                rho_fwd = rho.copy()
                p_fb, ps_fb = p_bf.copy(), ps_bf.copy()
                res = self._build(depth, z_bck, -1)
                if res is None:
                    break
                z_prop, lsw_sub, rho_bck, (p_bf, ps_bf), (p_bb, ps_bb) = res
            depth += 1
            if lsw_sub > log_sum_w or self.rng.uniform() < math.exp(lsw_sub - log_sum_w):
                z_sample = z_prop
            log_sum_w = float(np.logaddexp(log_sum_w, lsw_sub))
            rho = rho_bck + rho_fwd
            persist = _no_uturn(ps_bb, ps_ff, rho)
            persist &= _no_uturn(ps_bb, ps_fb, rho_bck + p_fb)
            persist &= _no_uturn(ps_bf, ps_ff, rho_fwd + p_bf)
            if not persist:
                break

        n_lf = max(self._n_leapfrog, 1)
        out = {
            "logp": z_sample.logp,
            "accept_stat": self._sum_metro / n_lf,
            "divergent": float(self._divergent),
            "treedepth": float(depth),
            "n_leapfrog": float(self._n_leapfrog),
            "step_size": self.eps,
            "energy": self.hamiltonian(z_sample),
        }
        return z_sample, out

    def _build(self, depth: int, z: _Point, sign: int):
        """Extend the trajectory by 2**depth steps from ``z`` (mutated in place).

        Returns ``None`` on divergence or sub-tree U-turn, else
        (proposal, log weight, rho, (p_beg, p_sharp_beg), (p_end, p_sharp_end)).
        """
        if depth == 0:
            self.leapfrog(z, sign * self.eps)
            self._n_leapfrog += 1
            h = self.energy(z)
            if h - self._h0 > MAX_DELTA_H:
                self._divergent = True
            d = self._h0 - h
            self._sum_metro += 1.0 if d > 0 else math.exp(d)
            if self._divergent:
                return None
            ps = self.p_sharp(z)
            return z.copy(), d, z.p.copy(), (z.p.copy(), ps), (z.p.copy(), ps)

        init = self._build(depth - 1, z, sign)
        if init is None:
            return None
        z_prop, lsw_init, rho_init, beg, init_end = init
        final = self._build(depth - 1, z, sign)
        if final is None:
            return None
        z_final, lsw_final, rho_final, final_beg, end = final

        lsw = float(np.logaddexp(lsw_init, lsw_final))
        if lsw_final > lsw or self.rng.uniform() < math.exp(lsw_final - lsw):
            z_prop = z_final
        rho_sub = rho_init + rho_final
        persist = _no_uturn(beg[1], end[1], rho_sub)
        persist &= _no_uturn(beg[1], final_beg[1], rho_init + final_beg[0])
        persist &= _no_uturn(init_end[1], end[1], rho_final + init_end[0])
        if not persist:
            return None
        return z_prop, lsw, rho_sub, beg, end


def _no_uturn(p_sharp_minus, p_sharp_plus, rho) -> bool:
    return float(np.dot(p_sharp_plus, rho)) > 0 and float(np.dot(p_sharp_minus, rho)) > 0


# ------------------------------------------------------------------- adaptation


class _DualAveraging:
    def __init__(self, delta: float, gamma=0.05, kappa=0.75, t0=10.0):
        self.delta, self.gamma, self.kappa, self.t0 = delta, gamma, kappa, t0
        self.mu = 0.0
        self.restart()

    def restart(self):
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def learn(self, accept: float) -> float:
        self.counter += 1
        accept = min(1.0, accept)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    def final(self) -> float:
        return math.exp(self.x_bar)


class _Windows:
    """Slow-adaptation window schedule (doubling windows between fast buffers)."""

    def __init__(self, n_warmup: int, base: int = 25):
        self.n = n_warmup
        self.init = int(0.15 * n_warmup)
        self.term = int(0.10 * n_warmup)
        self.base = min(base, n_warmup - self.init - self.term)
        self.active = n_warmup >= 20 and self.base > 0
        self.counter = 0
        self.size = self.base
        self.next_end = self.init + self.size - 1

    def in_window(self) -> bool:
        return self.init <= self.counter < self.n - self.term and self.counter != self.n

    def at_end(self) -> bool:
        return self.counter == self.next_end and self.counter != self.n

    def advance(self):
        last = self.n - self.term - 1
        if self.next_end == last:
            return
        self.size *= 2
        self.next_end = self.counter + self.size
        if self.next_end != last and self.next_end + 2 * self.size >= self.n - self.term:
            self.next_end = last


class _Welford:
    def __init__(self, width):
        self.n = 0
        self.mean = np.zeros(width)
        self.m2 = np.zeros(width)

    def add(self, x):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def variance(self):
        return self.m2 / (self.n - 1.0)


# ----------------------------------------------------------------------- driver


def _initial_point(target, rng, radius: float) -> np.ndarray:
    for _ in range(100):
        u = rng.uniform(-radius, radius, size=target.width)
        lp, g = target.log_posterior_and_grad(u)
        if np.isfinite(lp) and np.all(np.isfinite(g)):
            return u
    raise SamplerError(f"could not find a finite log density at 100 random starting points "
                       f"in [-{radius:g}, {radius:g}]^{target.width}")


def _optimised_start(target, rng, radius: float, tries: int) -> np.ndarray:
    """Best local mode reached by L-BFGS from ``tries`` uniform starting points.

    Mixture posteriors can hold spurious local modes far below the main one;
    a chain started inside one never leaves it.
    """
    def objective(u):
        lp, g = target.log_posterior_and_grad(u)
        if not (np.isfinite(lp) and np.all(np.isfinite(g))):
            return np.inf, np.zeros_like(u)
        return -lp, -g

    best, best_lp = None, -np.inf
    for _ in range(tries):
        u0 = _initial_point(target, rng, radius)
        res = optimize.minimize(objective, u0, jac=True, method="L-BFGS-B", options={"maxiter": 500})
        u = res.x if np.isfinite(res.fun) else u0
        lp = -res.fun if np.isfinite(res.fun) else target.log_posterior_and_grad(u0)[0]
        if best is None or lp > best_lp:
            best, best_lp = u, lp
    return best


def _run_chain(target, cfg: SamplerConfig, chain: int, init=None):
    rng = np.random.default_rng((int(cfg.seed) + chain) % 2**64)
    if init is not None:
        q = np.asarray(init, dtype=float)
    elif cfg.init_tries > 1:
        q = _optimised_start(target, rng, cfg.init_radius, cfg.init_tries)
    else:
        q = _initial_point(target, rng, cfg.init_radius)
    nuts = _Nuts(target, rng, cfg.max_treedepth)
    lp, g = nuts.logp_grad(q)
    if not np.isfinite(lp):
        raise SamplerError(f"chain {chain}: initial values give a non-finite log density")
    z = _Point(q, np.zeros_like(q), lp, g)
    n_keep = cfg.n_draws
    draws = np.empty((n_keep, target.width))
    st = {k: np.empty(n_keep) for k in STAT_NAMES}

    if target.width == 0:
        raise SamplerError("the model has no parameters")
    nuts.init_stepsize(z)
    da = _DualAveraging(cfg.target_accept)
    da.mu = math.log(10.0 * nuts.eps)
    win = _Windows(cfg.warmup)
    wel = _Welford(target.width)
    t_start = time.perf_counter()

    for it in range(cfg.iter):
        warm = it < cfg.warmup
        z, info = nuts.transition(z)
        if warm:
            nuts.eps = da.learn(info["accept_stat"])
            if win.active:
                if win.in_window():
                    wel.add(z.q)
                if win.at_end():
                    win.advance()
                    n = wel.n
                    var = wel.variance()
                    nuts.inv_metric = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                    wel = _Welford(target.width)
                    nuts.init_stepsize(z)
                    da.mu = math.log(10.0 * nuts.eps)
                    da.restart()
                win.counter += 1
            if it == cfg.warmup - 1:
                nuts.eps = da.final()
        else:
            k = it - cfg.warmup
            draws[k] = target.constrain(z.q)
            for name in STAT_NAMES:
                st[name][k] = info[name]
        if cfg.refresh and ((it + 1) % cfg.refresh == 0 or it + 1 == cfg.iter):
            phase = "warmup" if warm else "sampling"
            print(f"chain {chain + 1}: iteration {it + 1:>{len(str(cfg.iter))}} / {cfg.iter} "
                  f"[{100 * (it + 1) // cfg.iter:3d}%] ({phase}) {time.perf_counter() - t_start:.1f}s",
                  file=sys.stderr, flush=True)
    if not np.all(np.isfinite(draws)):
        raise SamplerError(f"chain {chain}: non-finite constrained draws")
    return draws, st, nuts.eps, nuts.inv_metric


def sample(target, cfg: SamplerConfig | None = None, inits=None) -> DrawMatrix:
    """Run ``cfg.chains`` NUTS chains and return their post-warmup draws.

    Chain ``c`` uses a generator seeded with ``seed + c``, so results do not
    depend on whether chains run sequentially or in worker processes.

    Parameters
    ----------
    target : PsModel or FunctionTarget
    cfg : SamplerConfig
    inits : optional sequence of unconstrained starting vectors, one per chain.
    """
    cfg = cfg or SamplerConfig()
    if inits is not None and len(inits) != cfg.chains:
        raise ConfigError("inits must provide one vector per chain")
    args = [(target, cfg, c, None if inits is None else inits[c]) for c in range(cfg.chains)]
    workers = min(cfg.cores, cfg.chains, os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_chain_star, args))
    else:
        results = [_run_chain(*a) for a in args]
    draws = np.stack([r[0] for r in results])
    st = {k: np.stack([r[1][k] for r in results]) for k in STAT_NAMES}
    return DrawMatrix(
        draws=draws,
        names=list(target.param_names),
        stats=st,
        step_size=np.array([r[2] for r in results]),
        inv_metric=np.stack([r[3] for r in results]),
        config=cfg,
    )


def _run_chain_star(a):
    return _run_chain(*a)


# ------------------------------------------------------------------- diagnostics


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = stats.rankdata(x, method="average").reshape(x.shape)
    return special.ndtri((r - 0.375) / (x.size + 0.25))


def _split(x: np.ndarray) -> np.ndarray:
    """(chains, n) -> (2 * chains, n // 2), dropping the middle draw for odd n."""
    n = x.shape[1] // 2
    return np.concatenate([x[:, :n], x[:, x.shape[1] - n:]], axis=0)


def _basic_rhat(x: np.ndarray) -> float:
    m, n = x.shape
    means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    if w <= 0 or not np.isfinite(w):
        return 1.0 if b <= 0 else np.inf
    return float(np.sqrt(((n - 1) / n * w + b / n) / w))


def split_rhat(x) -> float:
    """Rank-normalized split R-hat (max of bulk and folded versions).

    ``x`` is (chains, draws). Returns NaN for a single chain and 1 when
    every draw is identical.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        return np.nan
    if np.all(x == x.flat[0]):
        return 1.0
    s = _split(x)
    bulk = _basic_rhat(_rank_normalize(s))
    folded = np.abs(s - np.median(s))
    tail = _basic_rhat(_rank_normalize(folded))
    return max(bulk, tail)


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    n = x.shape[-1]
    xc = x - x.mean(axis=-1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, n=size)
    ac = np.fft.irfft(f * np.conj(f), n=size)[..., :n]
    return ac / n


def _ess(x: np.ndarray) -> float:
    m, n = x.shape
    if n < 4:
        return np.nan
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float(m * n)
    rho = np.zeros(n)
    mean_acov = acov.mean(axis=0)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - mean_acov[1]) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 5 and rho_even + rho_odd > 0:
        rho_even = 1.0 - (mean_var - mean_acov[t + 1]) / var_plus
        rho_odd = 1.0 - (mean_var - mean_acov[t + 2]) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = (rho[t - 1] + rho[t]) / 2.0
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * rho[:max_t].sum() + rho[max_t]
    tau = max(tau, 1.0 / math.log10(total))
    return float(total / tau)


def ess_bulk(x) -> float:
    """Bulk effective sample size of a (chains, draws) array."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if np.all(x == x.flat[0]):
        return float(x.size)
    return _ess(_rank_normalize(_split(x)))


@dataclass
class Diagnostics:
    names: list[str]
    rhat: np.ndarray
    ess_bulk: np.ndarray
    n_divergent: int
    mean_treedepth: float
    n_chains: int
    n_draws: int
    rhat_threshold: float = RHAT_THRESHOLD

    @property
    def rhat_available(self) -> bool:
        return self.n_chains >= 2

    @property
    def max_rhat(self) -> float:
        return float(np.nanmax(self.rhat)) if self.rhat_available and len(self.rhat) else np.nan

    @property
    def rhat_flag(self) -> bool:
        return self.rhat_available and bool(np.any(self.rhat > self.rhat_threshold))

    @property
    def divergence_flag(self) -> bool:
        return self.n_divergent > 0

    @property
    def ok(self) -> bool:
        return not (self.rhat_flag or self.divergence_flag)

    def warnings(self) -> list[str]:
        out = []
        if self.rhat_flag:
            bad = [n for n, r in zip(self.names, self.rhat) if r > self.rhat_threshold]
            out.append(f"{len(bad)} parameter(s) with R-hat > {self.rhat_threshold}: "
                       + ", ".join(bad[:5]) + (" ..." if len(bad) > 5 else ""))
        if self.divergence_flag:
            out.append(f"{self.n_divergent} divergent transition(s) after warmup")
        if not self.rhat_available:
            out.append("R-hat needs at least two chains; not reported")
        return out

    def table(self) -> pd.DataFrame:
        return pd.DataFrame({"parameter": self.names, "rhat": self.rhat, "ess_bulk": self.ess_bulk})

    def to_dict(self) -> dict:
        def clean(v):
            return None if not np.isfinite(v) else float(v)

        return {
            "n_chains": self.n_chains,
            "n_draws": self.n_draws,
            "n_divergent": self.n_divergent,
            "mean_treedepth": self.mean_treedepth,
            "max_rhat": clean(self.max_rhat),
            "rhat_flag": self.rhat_flag,
            "divergence_flag": self.divergence_flag,
            "parameters": {n: {"rhat": clean(r), "ess_bulk": clean(e)}
                           for n, r, e in zip(self.names, self.rhat, self.ess_bulk)},
        }


def diagnose(draws: DrawMatrix) -> Diagnostics:
    """Split R-hat, bulk ESS, divergences and mean tree depth."""
    if draws.n_draws < 4:
        raise ValueError("diagnostics need at least 4 draws per chain")
    rh = np.array([split_rhat(draws.draws[:, :, k]) for k in range(draws.width)])
    es = np.array([ess_bulk(draws.draws[:, :, k]) for k in range(draws.width)])
    return Diagnostics(
        names=list(draws.names),
        rhat=rh,
        ess_bulk=es,
        n_divergent=draws.n_divergent,
        mean_treedepth=float(draws.stats["treedepth"].mean()),
        n_chains=draws.n_chains,
        n_draws=draws.n_draws,
    )
