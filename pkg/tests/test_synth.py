import json
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from exposure_erf.config import RunConfig
from exposure_erf.mcmc import build_model_spec, run_chains
from exposure_erf.synth import (
    ExposureLaw,
    SynthScenario,
    generate,
    load_scenario,
    mc_expectation_exp,
    save_truth,
    scenario_from_dict,
)


def test_mgf_of_standard_normal():
    est, se = mc_expectation_exp(ExposureLaw("normal", 0.0, 1.0), 1.0, n_draws=10**6, seed=1)
    assert abs(est - np.exp(0.5)) < 3 * se


def test_lognormal_oracle_brackets_taylor():
    g = 0.005
    est, se = mc_expectation_exp(ExposureLaw("lognormal", 20.0, 25.0), g, n_draws=10**6, seed=2)
    l3 = (25 / 20) * (25 / 20 + 3)
    taylor = np.exp(g * 20 + g**2 * 25 / 2 + g**3 * l3 / 6)
    assert abs(est - taylor) < 3 * se


def test_zero_gamma_is_exact():
    assert mc_expectation_exp(ExposureLaw("lognormal", 20.0, 25.0), 0.0, n_draws=10**5) == (1.0, 0.0)


def test_oracle_determinism_and_error_rate():
    law = ExposureLaw("lognormal", 20.0, 100.0)
    a = mc_expectation_exp(law, 0.02, n_draws=10**5, seed=9)
    assert a == mc_expectation_exp(law, 0.02, n_draws=10**5, seed=9)
    big = mc_expectation_exp(law, 0.02, n_draws=4 * 10**5, seed=9)
    assert big[1] / a[1] == pytest.approx(0.5, rel=0.1)
    with pytest.raises(ValueError):
        mc_expectation_exp(law, 0.02, n_draws=10**4)


def test_fixed_law_is_degenerate(rng):
    assert np.all(ExposureLaw("fixed", 3.0).sample(rng, 5) == 3.0)
    with pytest.raises(ValueError):
        ExposureLaw("gamma", 1.0, 1.0).sample(rng, 2)


def test_generated_shapes_and_truth(tiny_data, tiny_scenario):
    d = tiny_data
    assert d.exposure.exposure.shape == (tiny_scenario.n_days, tiny_scenario.k)
    assert d.monitor.shape == (tiny_scenario.n_days, tiny_scenario.districts)
    assert len(d.health) == tiny_scenario.n_days
    assert d.truth["rr10"] == pytest.approx(np.exp(0.05))
    assert np.exp(0.05) == pytest.approx(1.0513, abs=1e-4)
    assert len(d.truth["alpha"]) == len(d.truth["alpha_names"]) == 1 + 3 + 1


def test_counts_are_poisson_around_truth():
    d = generate(SynthScenario(seed=11, replicates=5))
    lag = 2
    mu = np.array(d.truth["mu"])[lag:]
    y = d.health.counts[lag:]
    disp = np.mean((y - mu) ** 2 / mu)
    assert disp == pytest.approx(1.0, abs=0.2)


def test_null_effect_counts_ignore_exposure_path():
    base = SynthScenario(gamma=0.0, n_days=200, replicates=5, seed=21)
    a = generate(base)
    b = generate(replace(base, theta=5.0, phi=0.9, cv=0.2))
    np.testing.assert_array_equal(a.health.counts, b.health.counts)
    # permutation test of association between exposure means and count residuals
    lag = 2
    x = a.exposure.daily_means().to_numpy()[:-lag]
    r = a.health.counts[lag:] - np.array(a.truth["mu"])[lag:]
    obs = abs(np.corrcoef(x, r)[0, 1])
    gen = np.random.default_rng(0)
    perm = np.array([abs(np.corrcoef(gen.permutation(x), r)[0, 1]) for _ in range(999)])
    p = (1 + np.sum(perm >= obs)) / 1000
    assert p > 0.01


def test_fixed_exposure_round_trip_recovers_alpha():
    sc = SynthScenario(law="fixed", count_model="ii", n_days=200, replicates=2, districts=4, time_df=4, temp_df=1, seed=31)
    d = generate(sc)
    cfg = RunConfig(model="ii", time_df=4, temp_df=1)
    spec = build_model_spec(cfg, d.health, d.monitor, d.exposure)
    draws = run_chains(spec, 2, 1000, 4000, 2, seed=3)
    lo, hi = np.quantile(draws.alpha.reshape(-1, draws.alpha.shape[-1]), [0.005, 0.995], axis=0)
    truth = np.array(d.truth["alpha"])
    assert np.all((lo <= truth) & (truth <= hi))


def test_scenario_files(tmp_path, tiny_data):
    sc, raw = load_scenario()
    assert sc.gamma == 0.005 and raw["iterations"] == 20000
    assert scenario_from_dict({"gamma": 0.01, "burn_in": 3}).gamma == 0.01
    save_truth(tiny_data.truth, tmp_path / "truth.json")
    assert json.loads((tmp_path / "truth.json").read_text())["gamma"] == 0.005
    with pytest.raises(ValueError):
        SynthScenario(law="weibull")
    with pytest.raises(ValueError):
        SynthScenario(n_days=5)


def test_ambient_has_yearly_cycle():
    d = generate(SynthScenario(seed=2, replicates=2))
    amb = d.monitor.ambient.mean(axis=1)
    t = np.arange(len(amb))
    r = stats.pearsonr(np.cos(2 * np.pi * t / 365.25), amb)[0]
    assert r > 0.3
