import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from exposure_erf.mcmc import PosteriorDraws
from exposure_erf.micro_sim import ExposurePanel
from exposure_erf.risk import (
    FIGURES,
    attenuation_fit,
    boxplot_table,
    default_grid,
    emit_plot_data,
    exceedance,
    figure3_tables,
    gamma_attenuation_check,
    predictive_samples,
    relative_risk,
    risk_table,
    write_risk,
    write_tables,
)

gammas = arrays(float, st.integers(1, 300), elements=st.floats(-0.05, 0.05, allow_nan=False))


def _normal_gamma(rr_median, rr_lo, rr_hi, n=400_000, seed=0):
    """Gamma draws whose RR10 matches a given median and 95% interval."""
    g = np.random.default_rng(seed)
    mean = np.log(rr_median) / 10
    sd = (np.log(rr_hi) - np.log(rr_lo)) / 10 / 3.92
    return g.normal(mean, sd, n)


def test_null_effect_gives_unit_risk():
    s = relative_risk(np.zeros(1000))
    assert all(v == 1.0 for v in s.quantiles.values())
    assert s.p_above_one == 0.0


def test_exceedance_limits():
    g = np.random.default_rng(1).normal(0.003, 0.002, 5000)
    e = exceedance(g, 10, [0.0, 1e300])
    assert e.iloc[0] == 1.0 and e.iloc[1] == 0.0
    with pytest.raises(ValueError):
        exceedance(g, 10, [])


def test_default_grids():
    g10 = default_grid(10)
    assert g10[0] == 1.0 and g10[-1] == 1.1 and np.allclose(np.diff(g10), 0.005)
    g50 = default_grid(50)
    assert g50[-1] == 1.5 and np.allclose(np.diff(g50), 0.025)


@settings(max_examples=60, deadline=None)
@given(g=gammas, inc=st.sampled_from([1.0, 10.0, 50.0]))
def test_quantiles_and_exceedance_monotone(g, inc):
    s = relative_risk(g, inc)
    q = [s.quantiles[p] for p in sorted(s.quantiles)]
    assert np.all(np.diff(q) >= 0)
    assert np.all(np.diff(s.exceedance.to_numpy()) <= 0)


@settings(max_examples=60, deadline=None)
@given(g=gammas)
def test_exceedance_complement(g):
    p_gt = exceedance(g, 10, [1.0]).iloc[0]
    p_le = np.mean(np.exp(g * 10) <= 1.0)
    assert p_gt + p_le == pytest.approx(1.0)


def test_normal_approximation_of_target_rows_reproduces_exceedance_contrast():
    ambient = relative_risk(_normal_gamma(1.022, 1.007, 1.037), label="ambient")
    personal = relative_risk(_normal_gamma(1.051, 1.013, 1.090), label="personal")
    assert ambient.median == pytest.approx(1.022, abs=5e-4)
    assert personal.interval == pytest.approx((1.013, 1.090), abs=2e-3)
    p_a = exceedance(_normal_gamma(1.022, 1.007, 1.037), 10, [1.02]).iloc[0]
    p_p = exceedance(_normal_gamma(1.051, 1.013, 1.090), 10, [1.02]).iloc[0]
    assert p_a == pytest.approx(0.600, abs=0.015)
    assert p_p == pytest.approx(0.943, abs=0.01)
    assert p_p > p_a


def test_table_and_files(tmp_path):
    draws = PosteriorDraws(model="iv", param_names=["gamma"], beta=_normal_gamma(1.05, 1.01, 1.09, 2000)[None, :, None],
                           deviance=np.zeros((1, 2000)))
    s10, s50 = relative_risk(draws, 10), relative_risk(draws, 50)
    table = risk_table([s10, s50])
    assert list(table.columns) == ["model", "increment", "q2.5", "q25", "q50", "q75", "q97.5", "p_rr_gt_1"]
    assert table.loc[0, "model"] == "Log-normal exposure model (iv)"
    write_risk([s10, s50], tmp_path)
    back = pd.read_csv(tmp_path / "risk_table.csv")
    assert back["q50"].tolist() == pytest.approx(table["q50"].tolist(), rel=1e-5)
    assert len(json.loads((tmp_path / "risk_summary.json").read_text())) == 2
    assert s10.covers(s10.median)


# --- attenuation


def test_attenuation_identity():
    a = pd.Series(np.linspace(10, 60, 50))
    fit = attenuation_fit(a, a)
    assert fit.theta == pytest.approx(0, abs=1e-10) and fit.phi == pytest.approx(1)


def test_attenuation_constructed_line():
    a = np.random.default_rng(0).uniform(10, 80, 100)
    fit = attenuation_fit(a, 0.83 + 0.40 * a)
    assert (fit.theta, fit.phi) == pytest.approx((0.83, 0.40))
    assert fit.slope_sign == "positive"


@settings(max_examples=40, deadline=None)
@given(c=st.floats(0.01, 100), seed=st.integers(0, 1000))
def test_attenuation_scale_equivariant(c, seed):
    g = np.random.default_rng(seed)
    a = g.uniform(10, 80, 60)
    p = 0.8 + 0.4 * a + g.normal(0, 2, 60)
    assert attenuation_fit(c * a, p).phi == pytest.approx(attenuation_fit(a, p).phi / c, rel=1e-8)


def test_attenuation_errors():
    with pytest.raises(ValueError, match="variance"):
        attenuation_fit(np.full(10, 3.0), np.arange(10.0))
    with pytest.raises(ValueError):
        attenuation_fit([1.0, 2.0], [1.0, 2.0])


def test_attenuation_aligns_dates():
    idx = pd.date_range("2000-01-01", periods=10)
    a = pd.Series(np.arange(10.0), idx)
    p = pd.Series(2 * np.arange(10.0), idx)[3:]
    fit = attenuation_fit(a, p)
    assert fit.n == 7 and fit.phi == pytest.approx(2.0)


def test_gamma_check_identical():
    g = np.random.default_rng(3).normal(0.005, 0.001, 1000)
    assert gamma_attenuation_check(g, g, 1.0)["relative_discrepancy"] == pytest.approx(0, abs=1e-12)


# --- plot data


def _panel(x):
    x = np.asarray(x, dtype=float)
    return ExposurePanel(
        dates=pd.date_range("2001-01-01", periods=x.shape[0]),
        districts=["a"] * x.shape[1],
        replicates=np.arange(x.shape[1]),
        ambient_component=x,
        indoor_component=np.zeros_like(x),
    )


def _moment_draws(panel):
    m = panel.exposure.mean(axis=1)
    v = panel.exposure.var(axis=1, ddof=1)
    shape = (2, 50, len(m))
    return PosteriorDraws(
        model="iv", param_names=["gamma"], beta=np.zeros((2, 50, 1)), deviance=np.zeros((2, 50)),
        lambda1=np.broadcast_to(m, shape).copy(), lambda2=np.broadcast_to(v, shape).copy(), lambda_dates=panel.dates,
    )


def test_unknown_selector():
    with pytest.raises(ValueError, match="unknown figure"):
        emit_plot_data("figure9")
    assert "figure3" in FIGURES


def test_boxplot_rows():
    x = np.random.default_rng(0).gamma(2, 10, (12, 40))
    t = emit_plot_data("boxplot", panel=_panel(x))["boxplot"]
    assert len(t) == 12
    assert list(t.columns[:5]) == ["min", "q1", "median", "q3", "max"]
    assert np.all(t["min"] <= t["q1"]) and np.all(t["q3"] <= t["max"])


def test_figure3_degenerate_day_is_spike():
    x = np.full((3, 30), 20.0)
    x[1] = np.linspace(10, 30, 30)
    panel = _panel(x)
    draws = _moment_draws(panel)
    dens, summ = figure3_tables(panel, panel.dates[0], draws_iv=draws, n=2000)
    assert summ.loc["empirical", "variance"] == 0
    assert summ.loc["model_iv", "variance"] == pytest.approx(0, abs=1e-18)
    assert summ.loc["model_iv", "mean"] == pytest.approx(20.0)
    assert (dens["empirical"] > 0).sum() == 1


def test_lognormal_predictive_matches_moments_and_support():
    g = np.random.default_rng(5)
    x = g.lognormal(3, 0.6, size=(2, 800))
    panel = _panel(x)
    draws = _moment_draws(panel)
    ln = predictive_samples(draws, panel.dates[0], "lognormal", n=200_000, seed=1)
    nm = predictive_samples(draws, panel.dates[0], "normal", n=200_000, seed=1)
    assert np.all(ln > 0)
    assert np.mean(nm < 0) > 0.001
    assert ln.mean() == pytest.approx(x[0].mean(), rel=0.02)
    assert ln.var() == pytest.approx(x[0].var(ddof=1), rel=0.05)
    with pytest.raises(ValueError):
        predictive_samples(draws, panel.dates[0], "gamma")


def test_write_tables(tmp_path):
    x = np.random.default_rng(0).gamma(2, 10, (4, 10))
    paths = write_tables(emit_plot_data("boxplot", panel=_panel(x)), tmp_path)
    back = pd.read_csv(paths[0])
    assert back.columns[0] == "date" and len(back) == 4
    assert boxplot_table(_panel(x))["median"].iloc[0] == pytest.approx(back["median"].iloc[0])
