from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from prinstrat.exceptions import ConfigError
from prinstrat.simgen import DESIGNS, SIM3_COX, SimDesign, generate, sim3_survival
from prinstrat.strata import d_of, parse_strata


@pytest.fixture(scope="module")
def sim3():
    return generate("sim3", n=20000, seed=3)


def test_sim1_strata_frequencies_large_n():
    _, truth = generate("sim1", n=100_000, seed=1)
    for name, p in zip("nca", (0.3, 0.5, 0.2)):
        assert truth.sample_pi[name] == pytest.approx(p, abs=0.01)


def test_sim1_true_cace():
    _, truth = generate("sim1", n=50, seed=2)
    assert truth.cace == 6.0
    assert truth.contrasts == {"n": 0.0, "c": 6.0, "a": 0.0}


def test_sim1_complier_mean_formula():
    data, truth = generate("sim1", n=4000, seed=5)
    c = truth.latent == "c"
    for z in (0, 1):
        sel = c & (data["Z"].to_numpy() == z)
        x1, x2 = data["X1"][sel], data["X2"][sel]
        resid = data["Y"][sel] - (2 * x1 - (1 + z) * x2 + 2 + 6 * z)
        assert abs(resid.mean()) < 0.02
        assert resid.std() == pytest.approx(0.2, abs=0.02)


def test_sim3_event_rate(sim3):
    data, _ = sim3
    assert data["delta"].mean() == pytest.approx(0.35, abs=0.03)


def test_sim3_exponential_cell(sim3):
    data, truth = sim3
    t = truth.extra["event_time"][(truth.latent == "a") & (data["Z"].to_numpy() == 0)]
    assert SIM3_COX["a"][0] == (np.log(1.0), -1.0)
    assert t.mean() == pytest.approx(np.e, rel=0.08)
    assert truth.means["a:0"] == pytest.approx(np.e, rel=1e-12)


@pytest.mark.parametrize("stratum", ["n", "c", "a"])
@pytest.mark.parametrize("z", [0, 1])
def test_sim3_times_follow_closed_form(sim3, stratum, z):
    data, truth = sim3
    t = truth.extra["event_time"][(truth.latent == stratum) & (data["Z"].to_numpy() == z)]
    res = stats.kstest(t, lambda v: 1.0 - sim3_survival(stratum, z, v))
    assert res.pvalue > 0.01


@pytest.mark.parametrize("design", DESIGNS)
def test_observed_d_matches_latent_stratum(design):
    data, truth = generate(design, n=500, seed=7)
    z = data.iloc[:, 0].to_numpy()
    dcols = [c for c in data.columns[1:] if c.startswith("D")] or ["vaccination"]
    spec = parse_strata(truth.strata)
    labels = dict(zip(spec.names, spec.strata))
    for i in range(len(data)):
        expect = d_of(labels[truth.latent[i]], int(z[i]))
        assert tuple(data.loc[i, dcols]) == tuple(expect)


@pytest.mark.parametrize("design", DESIGNS)
def test_same_seed_bit_identical(design):
    a, ta = generate(design, n=300, seed=11)
    b, tb = generate(design, n=300, seed=11)
    pd.testing.assert_frame_equal(a, b, check_exact=True)
    assert ta.to_json() == tb.to_json()
    c, _ = generate(design, n=300, seed=12)
    assert not a.equals(c)


def test_sim2_shape_and_frequencies():
    data, truth = generate("sim2", n=40000, seed=4)
    assert list(data.columns) == ["Z", "D1", "D2", "Y"]
    for name, p in truth.pi.items():
        assert truth.sample_pi[name] == pytest.approx(p, abs=0.01)
    assert sum(truth.pi.values()) == pytest.approx(1.0)


def test_sim4_clusters():
    data, truth = generate("sim4", seed=2)
    assert len(data) == 1000
    assert set(data["C"]) == set(range(1, 11))
    assert len(truth.extra["cluster_effects"]) == 10
    assert truth.cace == 6.0


def test_flu_analog_proportions():
    _, truth = generate("flu_analog", n=60000, seed=1)
    for name, p in zip("nca", (0.69, 0.11, 0.19)):
        assert truth.pi[name] == pytest.approx(p, abs=0.02)
    assert truth.contrasts["n"] == 0.0 and truth.contrasts["a"] == 0.0
    assert truth.contrasts["c"] < 0


def test_overrides_and_validation():
    _, truth = generate(SimDesign("sim1", n=20000, seed=1, overrides={"probs": (0.1, 0.1, 0.8)}))
    assert truth.sample_pi["a"] == pytest.approx(0.8, abs=0.01)
    data, _ = generate(SimDesign("sim3", n=5000, seed=1, overrides={"censor_rate": 1e-6}))
    assert data["delta"].mean() > 0.99
    for bad in (dict(design="sim9"), dict(design="sim1", n=0),
                dict(design="sim1", overrides={"probs": (0.5, 0.6, -0.1)}),
                dict(design="sim1", overrides={"colour": 1}),
                dict(design="flu_analog", overrides={"probs": (0.3, 0.3, 0.4)})):
        with pytest.raises(ConfigError):
            SimDesign(**bad)


def test_truth_json_round_trip(tmp_path):
    import json

    _, truth = generate("sim3", n=100, seed=1)
    truth.to_json(tmp_path / "t.json")
    back = json.loads((tmp_path / "t.json").read_text())
    assert back["pi"] == truth.pi and len(back["latent"]) == 100
    assert "event_time" not in back
