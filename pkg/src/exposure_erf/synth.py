"""Synthetic datasets with known truth, and Monte Carlo oracles.

Scenarios stand in for real city data: ambient levels follow
a yearly cycle plus autocorrelated noise, personal exposures are linked to
ambient levels through ``theta + phi * ambient``, and counts are Poisson
draws from the exact model mean at the true parameters.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from .data_io import HealthSeries, MonitorPanel, Site, spatial_average
from .mcmc import covariate_design
from .micro_sim import ExposurePanel
from .moments import lognormal_from_moments, third_order_term

LAWS = ("lognormal", "normal", "fixed")


@dataclass(frozen=True)
class SynthScenario:
    gamma: float = 0.005
    law: str = "lognormal"
    count_model: str = "iv"
    n_days: int = 363
    districts: int = 8
    replicates: int = 100
    theta: float = 0.83
    phi: float = 0.40
    cv: float = 0.4  # within-day coefficient of variation of personal exposure
    personal_noise_sd: float = 0.0  # day-level noise around theta + phi * ambient
    ambient_mean: float = 48.0
    ambient_amplitude: float = 12.0
    ambient_noise_sd: float = 10.0
    ambient_ar: float = 0.5
    site_sd: float = 3.0
    baseline_deaths: float = 25.0
    season_amplitude: float = 0.15
    temp_effect: float = -0.01  # log-rate per deg C
    alpha_noise_sd: float = 0.0  # RMS log-rate wiggle per orthonormal direction of the design
    time_df: int = 11
    temp_df: int = 2
    lag: int = 2
    lambda3: str = "ratio"
    start_date: str = "1997-01-02"
    seed: int = 2024

    def __post_init__(self):
        if self.law not in LAWS:
            raise ValueError(f"law must be one of {LAWS}")
        if self.count_model not in ("i", "ii", "iii", "iv"):
            raise ValueError("count_model must be one of i, ii, iii, iv")
        if self.n_days <= self.lag + self.time_df + self.temp_df + 2:
            raise ValueError("too few days for the scenario")

    @property
    def k(self) -> int:
        return self.districts * self.replicates


def scenario_from_dict(data: dict) -> SynthScenario:
    known = {f.name for f in fields(SynthScenario)}
    return SynthScenario(**{k: v for k, v in data.items() if k in known})


def load_scenario(path: str | Path | None = None) -> tuple[SynthScenario, dict]:
    """Scenario file (a RunConfig superset); ``None`` loads the bundled one.

    Returns the scenario and the raw mapping, so run settings can be read
    from the same file.
    """
    if path is None:
        text = resources.files("exposure_erf").joinpath("data/scenario_gamma005.json").read_text()
    else:
        text = Path(path).read_text()
    data = json.loads(text)
    return scenario_from_dict(data), data


@dataclass
class SynthData:
    monitor: MonitorPanel
    exposure: ExposurePanel
    health: HealthSeries
    truth: dict


@dataclass(frozen=True)
class ExposureLaw:
    family: str
    mean: float
    variance: float = 0.0

    def sample(self, rng, size):
        if self.family == "fixed" or self.variance == 0:
            return np.full(size, float(self.mean))
        if self.family == "normal":
            return rng.normal(self.mean, np.sqrt(self.variance), size)
        if self.family == "lognormal":
            p = lognormal_from_moments(self.mean, self.variance)
            return rng.lognormal(p.m, np.sqrt(p.s2), size)
        raise ValueError(f"unknown family {self.family!r}")


def mc_expectation_exp(law: ExposureLaw, gamma: float, n_draws: int = 10**6, seed: int = 0, chunk: int = 10**6):
    """Monte Carlo ``E[exp(gamma X)]`` and its standard error."""
    if n_draws < 10**5:
        raise ValueError("n_draws must be >= 1e5")
    if gamma == 0:
        return 1.0, 0.0
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        v = np.exp(gamma * law.sample(rng, m))
        total += float(v.sum())
        total_sq += float(np.dot(v, v))
        done += m
    mean = total / n_draws
    var = max(total_sq / n_draws - mean**2, 0.0) * n_draws / (n_draws - 1)
    return mean, float(np.sqrt(var / n_draws))


def _ambient(sc: SynthScenario, rng, t):
    season = np.cos(2 * np.pi * t / 365.25)
    noise = np.empty(len(t))
    noise[0] = rng.normal(0, sc.ambient_noise_sd)
    innov_sd = sc.ambient_noise_sd * np.sqrt(1 - sc.ambient_ar**2)
    for i in range(1, len(t)):
        noise[i] = sc.ambient_ar * noise[i - 1] + rng.normal(0, innov_sd)
    base = sc.ambient_mean + sc.ambient_amplitude * season + noise
    sites = base[:, None] + rng.normal(0, sc.site_sd, (len(t), sc.districts))
    return np.maximum(sites, 1.0)


def reference_inputs(n_days: int = 363, districts: int = 8, seed: int = 1, start: str = "1997-01-02"):
    """Ambient monitor panel and daily temperature at urban-background scale.

    Mean level about 28 with a winter peak, AR(1) day-to-day noise and small
    site offsets; temperature runs opposite to the pollution cycle.  These are
    the inputs the bundled simulator profile was calibrated against.

    Returns
    -------
    monitor : MonitorPanel
    temperature : numpy.ndarray
    """
    rng = np.random.default_rng(seed)
    dates = pd.date_range(start, periods=n_days, freq="D")
    season = np.cos(2 * np.pi * np.arange(n_days) / 365.25)
    noise = np.zeros(n_days)
    for i in range(1, n_days):
        noise[i] = 0.6 * noise[i - 1] + rng.normal(0, 8)
    amb = 28 + 8 * season + noise
    amb = np.clip(amb[:, None] + rng.normal(0, 3, (n_days, districts)), 2, None)
    monitor = MonitorPanel([Site(f"s{j}", f"d{j}") for j in range(districts)], dates, amb)
    temperature = 14 - 7 * season + rng.normal(0, 2, n_days)
    return monitor, temperature


def generate(sc: SynthScenario) -> SynthData:
    """Draw a full dataset from ``sc``; the truth record holds every parameter."""
    rng = np.random.default_rng(sc.seed)
    n = sc.n_days
    dates = pd.date_range(sc.start_date, periods=n, freq="D")
    t = np.arange(n, dtype=float)
    season = np.cos(2 * np.pi * t / 365.25)
    temp_mean = 11.0 - 6.0 * season + rng.normal(0, 2.0, n)
    temp_max = temp_mean + 5.0 + rng.normal(0, 1.0, n)

    amb_sites = _ambient(sc, rng, t)
    monitor = MonitorPanel(
        sites=[Site(f"S{j + 1}", f"D{j + 1}") for j in range(sc.districts)],
        dates=dates,
        ambient=amb_sites,
    )
    ambient = spatial_average(monitor).to_numpy()

    day_noise = rng.normal(0, sc.personal_noise_sd, n) if sc.personal_noise_sd > 0 else 0.0
    lam1 = np.maximum(sc.theta + sc.phi * ambient + day_noise, 0.5)
    lam2 = (sc.cv * lam1) ** 2 if sc.law != "fixed" else np.zeros(n)
    k = sc.k
    x = np.empty((n, k))
    for d in range(n):
        x[d] = ExposureLaw(sc.law, lam1[d], lam2[d]).sample(rng, k)
    x = np.maximum(x, 0.0)
    exposure = ExposurePanel(
        dates=dates,
        districts=[f"D{j + 1}" for j in range(sc.districts) for _ in range(sc.replicates)],
        replicates=np.tile(np.arange(sc.replicates), sc.districts),
        ambient_component=x,
        indoor_component=np.zeros_like(x),
        seed=sc.seed,
    )

    # Poisson window: days t >= lag, paired with exposure day t - lag.
    lag = sc.lag
    win = slice(lag, n)
    src = slice(0, n - lag)
    design, names, _ = covariate_design(dates[win], temp_mean[win], sc.time_df, sc.temp_df)
    target = (
        np.log(sc.baseline_deaths)
        + sc.season_amplitude * season[win]
        + sc.temp_effect * (temp_mean[win] - temp_mean.mean())
    )
    if sc.alpha_noise_sd > 0:
        # random function spread evenly over the design's column space, so
        # every basis direction carries signal (not just the smooth ones)
        q, _ = np.linalg.qr(design)
        coef = rng.normal(0, sc.alpha_noise_sd, q.shape[1] - 1)
        target = target + np.sqrt(len(target)) * (q[:, 1:] @ coef)
    alpha, *_ = np.linalg.lstsq(design, target, rcond=None)

    if sc.count_model == "i":
        off = sc.gamma * ambient[src]
    elif sc.count_model == "ii":
        off = sc.gamma * lam1[src]
    else:
        l1, l2 = lam1[src], lam2[src]
        off = sc.gamma * l1 + 0.5 * sc.gamma**2 * l2
        if sc.count_model == "iv" and np.all(l2 > 0):
            off = off + sc.gamma**3 * third_order_term(l1, l2, sc.lambda3) / 6.0
    mu = np.empty(n)
    mu[win] = np.exp(off + design @ alpha)
    mu[:lag] = sc.baseline_deaths
    counts = rng.poisson(mu)

    health = HealthSeries(dates=dates, counts=counts, temp_mean=temp_mean, temp_max=temp_max)
    truth = dict(
        scenario=asdict(sc),
        gamma=sc.gamma,
        rr10=float(np.exp(10 * sc.gamma)),
        alpha=alpha.tolist(),
        alpha_names=names,
        lambda1=lam1.tolist(),
        lambda2=lam2.tolist(),
        mu=mu.tolist(),
    )
    return SynthData(monitor=monitor, exposure=exposure, health=health, truth=truth)


def save_truth(truth: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(truth, indent=1) + "\n")
