from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from prinstrat.exceptions import ConfigError, SamplerError
from prinstrat.sampler import (
    DrawMatrix,
    FunctionTarget,
    SamplerConfig,
    _Nuts,
    _Point,
    diagnose,
    ess_bulk,
    sample,
    split_rhat,
)


def gaussian_target(cov):
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    prec = np.linalg.inv(cov)

    def fn(x):
        g = -prec @ x
        return 0.5 * float(x @ g), g

    return FunctionTarget(fn, cov.shape[0])


def test_standard_normal_recovered():
    d = sample(gaussian_target([[1.0]]), SamplerConfig(chains=4, warmup=1000, iter=2000, seed=11))
    x = d.flat()[:, 0]
    assert d.draws.shape == (4, 1000, 1)
    assert abs(x.mean()) < 0.05
    assert abs(x.std(ddof=1) - 1.0) < 0.05


def test_correlated_gaussian_covariance():
    cov = np.array([[1.0, 0.9], [0.9, 1.0]])
    d = sample(gaussian_target(cov), SamplerConfig(chains=4, warmup=1000, iter=2000, seed=12))
    est = np.cov(d.flat(), rowvar=False)
    np.testing.assert_allclose(est, cov, rtol=0.10)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_ks_standard_normal(seed):
    d = sample(gaussian_target([[1.0]]), SamplerConfig(chains=1, warmup=500, iter=1500, seed=seed))
    assert stats.kstest(d.flat()[:, 0], "norm").pvalue > 0.01


def test_same_seed_is_bit_identical():
    cfg = SamplerConfig(chains=2, warmup=100, iter=200, seed=5)
    a = sample(gaussian_target(np.eye(3)), cfg)
    b = sample(gaussian_target(np.eye(3)), cfg)
    np.testing.assert_array_equal(a.draws, b.draws)
    for k in a.stats:
        np.testing.assert_array_equal(a.stats[k], b.stats[k])
    c = sample(gaussian_target(np.eye(3)), SamplerConfig(chains=2, warmup=100, iter=200, seed=6))
    assert not np.array_equal(a.draws, c.draws)


def test_worker_processes_match_sequential():
    seq = sample(gaussian_target(np.eye(2)), SamplerConfig(chains=2, warmup=50, iter=100, seed=9))
    par = sample(gaussian_target(np.eye(2)), SamplerConfig(chains=2, warmup=50, iter=100, seed=9, cores=2))
    np.testing.assert_array_equal(seq.draws, par.draws)


def test_chain_c_uses_seed_plus_c():
    two = sample(gaussian_target(np.eye(2)), SamplerConfig(chains=2, warmup=50, iter=100, seed=20))
    one = sample(gaussian_target(np.eye(2)), SamplerConfig(chains=1, warmup=50, iter=100, seed=21))
    np.testing.assert_array_equal(two.draws[1], one.draws[0])


def test_leapfrog_energy_drift():
    target = gaussian_target(np.diag([1.0, 4.0, 0.25]))
    nuts = _Nuts(target, np.random.default_rng(0), 10)
    q = np.array([0.5, -1.0, 0.3])
    lp, g = target.log_posterior_and_grad(q)
    z = _Point(q, np.array([0.2, 0.7, -1.1]), lp, g)
    h0 = nuts.hamiltonian(z)
    for _ in range(100):
        nuts.leapfrog(z, 1e-3)
    assert abs(nuts.hamiltonian(z) - h0) <= 1e-4


@pytest.mark.parametrize("scale", [1.0, 2.0])
def test_acceptance_tracks_target_under_rescaling(scale):
    dim = 20
    d = sample(gaussian_target(np.eye(dim) * scale**2), SamplerConfig(chains=2, warmup=1000, iter=1500, seed=4))
    assert abs(d.stats["accept_stat"].mean() - 0.8) <= 0.05


def test_divergences_flagged_not_dropped():
    # a hard wall at x = 1 makes trajectories that cross it divergent
    def fn(x):
        if x[0] > 1.0:
            return -np.inf, np.zeros(1)
        return -0.5 * x[0] ** 2, -x

    d = sample(FunctionTarget(fn, 1), SamplerConfig(chains=1, warmup=100, iter=400, seed=1, init_radius=0.5))
    assert d.n_draws == 300
    assert d.n_divergent > 0
    assert d.n_divergent == int(d.stats["divergent"].sum())
    assert np.all(d.flat() <= 1.0)


def test_initialisation_failure():
    target = FunctionTarget(lambda x: (-np.inf, np.zeros_like(x)), 2)
    with pytest.raises(SamplerError, match="100"):
        sample(target, SamplerConfig(chains=1, warmup=10, iter=20))


@pytest.mark.parametrize("kw", [dict(chains=0), dict(warmup=10, iter=10), dict(target_accept=1.0),
                                dict(max_treedepth=0), dict(seed=-1), dict(cores=0),
                                dict(init_tries=0), dict(init_radius=0.0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        SamplerConfig(**kw)


def test_optimised_start_finds_higher_mode():
    # two wells; the right one is far deeper, and warmup alone rarely crosses the barrier
    def fn(x):
        a = -0.5 * ((x[0] + 1.5) / 0.1) ** 2
        b = -0.5 * ((x[0] - 1.5) / 0.1) ** 2 + 50.0
        m = max(a, b)
        wa, wb = np.exp(a - m), np.exp(b - m)
        g = (wa * -(x[0] + 1.5) / 0.01 + wb * -(x[0] - 1.5) / 0.01) / (wa + wb)
        return m + np.log(wa + wb), np.array([g])

    cfg = SamplerConfig(chains=4, warmup=50, iter=100, seed=2, init_tries=8)
    d = sample(FunctionTarget(fn, 1), cfg)
    assert np.all(d.draws[:, :, 0].mean(axis=1) > 1.0)
    np.testing.assert_array_equal(d.draws, sample(FunctionTarget(fn, 1), cfg).draws)


def test_progress_lines(capsys):
    sample(gaussian_target([[1.0]]), SamplerConfig(chains=1, warmup=10, iter=20, refresh=10))
    err = capsys.readouterr().err
    assert "iteration 10 / 20" in err and "(sampling)" in err


# ---------------------------------------------------------------- diagnostics


def test_constant_chains_rhat_one():
    assert split_rhat(np.ones((4, 100))) == 1.0


def test_shifted_chains_rhat_large():
    rng = np.random.default_rng(0)
    x = np.stack([rng.standard_normal(500), 5 + rng.standard_normal(500)])
    assert split_rhat(x) > 1.1


def test_iid_ess():
    x = np.random.default_rng(1).standard_normal((4, 1000))
    assert 2000 <= ess_bulk(x) <= 4400
    assert 0.99 < split_rhat(x) < 1.01


def fake_draws(x, divergent=0):
    chains, draws = x.shape[:2]
    st = {k: np.zeros((chains, draws)) for k in ("logp", "accept_stat", "divergent", "treedepth",
                                                 "n_leapfrog", "step_size", "energy")}
    st["divergent"].flat[:divergent] = 1
    return DrawMatrix(x, [f"x[{i}]" for i in range(x.shape[2])], st, np.ones(chains),
                      np.ones((chains, x.shape[2])), SamplerConfig(chains=chains, warmup=0, iter=draws))


def test_single_chain_rhat_absent():
    diag = diagnose(fake_draws(np.random.default_rng(2).standard_normal((1, 100, 2))))
    assert not diag.rhat_available
    assert np.all(np.isnan(diag.rhat))
    assert not diag.rhat_flag


def test_flags():
    rng = np.random.default_rng(3)
    good = diagnose(fake_draws(rng.standard_normal((4, 200, 2))))
    assert good.ok and good.warnings() == []
    bad = rng.standard_normal((2, 200, 1))
    bad[1] += 5
    diag = diagnose(fake_draws(bad, divergent=3))
    assert diag.rhat_flag and diag.divergence_flag and not diag.ok
    assert diag.n_divergent == 3
    assert len(diag.warnings()) == 2
    assert set(diag.table().columns) >= {"rhat", "ess_bulk"}
