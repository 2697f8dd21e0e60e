"""Stage 1: personal exposure simulation through microenvironments.

Each simulated individual follows a semi-Markov activity sequence over a
small set of microenvironments on an hourly grid.  Every microenvironment
carries a single-compartment mass balance driven by the ambient level of
the individual's exposure district plus occupant-triggered indoor source
events.  The daily exposure is the 24-hour time-weighted average of the
concentrations experienced.

Ambient-origin and indoor-origin concentrations are tracked separately;
both recurrences are linear so their sum is the total concentration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from .data_io import MonitorPanel, spatial_average

KINDS = ("home-indoor", "other-indoor", "outdoor", "transit")
TOGGLES = ("all", "outdoor", "indoor")
HOURS = 24


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class Microenvironment:
    name: str
    kind: str
    penetration: float
    air_exchange: float  # per hour
    emission: float = 0.0  # ug/m3 added per source-active hour
    event_prob: float = 0.0  # per occupied hour

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ProfileError(f"unknown microenvironment kind {self.kind!r}")
        if not 0.0 <= self.penetration <= 1.0:
            raise ProfileError(f"{self.name}: penetration must lie in [0, 1]")
        if self.air_exchange <= 0:
            raise ProfileError(f"{self.name}: air exchange rate must be > 0")
        if self.emission < 0:
            raise ProfileError(f"{self.name}: emission rate must be >= 0")
        if not 0.0 <= self.event_prob <= 1.0:
            raise ProfileError(f"{self.name}: event probability must lie in [0, 1]")


@dataclass(frozen=True)
class TemperatureExchange:
    """Piecewise-linear multiplier on air exchange: warmer days ventilate more."""

    cold_c: float = 5.0
    warm_c: float = 20.0
    cold_factor: float = 0.5
    warm_factor: float = 1.0

    def __call__(self, temperature):
        return np.interp(temperature, [self.cold_c, self.warm_c], [self.cold_factor, self.warm_factor])


@dataclass(frozen=True)
class ActivityProfile:
    """Hourly semi-Markov activity model.

    ``transitions[b]`` is the row-stochastic matrix used when a stay ends
    during hour block ``b``; ``blocks`` lists the block start hours.
    Stay lengths are geometric with the given mean (at least one hour).
    """

    envs: tuple[str, ...]
    blocks: tuple[int, ...]
    transitions: np.ndarray  # (blocks, envs, envs)
    dwell_mean: np.ndarray  # (envs,) hours
    initial: str = "home"
    label: str = "seniors>=65"

    def __post_init__(self):
        t = np.asarray(self.transitions, dtype=float)
        object.__setattr__(self, "transitions", t)
        object.__setattr__(self, "dwell_mean", np.asarray(self.dwell_mean, dtype=float))
        n = len(self.envs)
        if t.shape != (len(self.blocks), n, n):
            raise ProfileError(f"transition array shape {t.shape} != {(len(self.blocks), n, n)}")
        if np.any(t < 0) or not np.allclose(t.sum(axis=2), 1.0, atol=1e-9):
            raise ProfileError("every transition row must be a probability vector summing to 1")
        if self.dwell_mean.shape != (n,) or np.any(self.dwell_mean < 1):
            raise ProfileError("dwell means must be >= 1 hour, one per microenvironment")
        if self.blocks[0] != 0 or list(self.blocks) != sorted(self.blocks) or self.blocks[-1] >= HOURS:
            raise ProfileError("blocks must be increasing start hours beginning at 0")
        if self.initial not in self.envs:
            raise ProfileError(f"initial microenvironment {self.initial!r} not in profile")

    def block_of_hour(self) -> np.ndarray:
        return np.searchsorted(np.asarray(self.blocks), np.arange(HOURS), side="right") - 1


@dataclass
class SimulationProfile:
    envs: list[Microenvironment]
    activity: ActivityProfile
    temperature: TemperatureExchange = field(default_factory=TemperatureExchange)

    def __post_init__(self):
        if not self.envs:
            raise ProfileError("empty microenvironment set")
        names = tuple(e.name for e in self.envs)
        if names != tuple(self.activity.envs):
            raise ProfileError(f"activity profile order {self.activity.envs} != environments {names}")


@dataclass
class ExposurePanel:
    """Simulated daily exposures: one column per (district, replicate)."""

    dates: pd.DatetimeIndex
    districts: list[str]  # per column
    replicates: np.ndarray  # per column, replicate number within district
    ambient_component: np.ndarray  # (days, columns)
    indoor_component: np.ndarray
    seed: int | None = None
    exposure: np.ndarray = field(init=False)

    def __post_init__(self):
        self.ambient_component = np.asarray(self.ambient_component, dtype=float)
        self.indoor_component = np.asarray(self.indoor_component, dtype=float)
        self.replicates = np.asarray(self.replicates, dtype=int)
        if self.ambient_component.shape != self.indoor_component.shape:
            raise ValueError("component matrices differ in shape")
        if self.ambient_component.shape != (len(self.dates), len(self.districts)):
            raise ValueError("component shape does not match dates x columns")
        if np.any(self.ambient_component < 0) or np.any(self.indoor_component < 0):
            raise ValueError("exposure components must be nonnegative")
        self.exposure = self.ambient_component + self.indoor_component

    @property
    def n_samples(self) -> int:
        return self.exposure.shape[1]

    def daily_means(self) -> pd.Series:
        return pd.Series(self.exposure.mean(axis=1), index=self.dates, name="personal_mean")


# --------------------------------------------------------------------------- profiles


def profile_from_dict(data: dict) -> SimulationProfile:
    envs = [Microenvironment(**e) for e in data["microenvironments"]]
    names = tuple(e.name for e in envs)
    act = data["activity"]
    dwell = act["dwell_mean_hours"]
    activity = ActivityProfile(
        envs=names,
        blocks=tuple(act["blocks"]),
        transitions=np.array([[act["transitions"][b][src] for src in names] for b in act["block_names"]]),
        dwell_mean=np.array([dwell[n] for n in names]),
        initial=act.get("initial", names[0]),
        label=data.get("label", "population"),
    )
    temp = TemperatureExchange(**data.get("temperature_exchange", {}))
    return SimulationProfile(envs=envs, activity=activity, temperature=temp)


def load_profile(path: str | Path | None = None) -> SimulationProfile:
    """Read a JSON profile; ``None`` gives the bundled calibrated default."""
    if path is None:
        text = resources.files("exposure_erf").joinpath("data/default_profile.json").read_text()
    else:
        text = Path(path).read_text()
    return profile_from_dict(json.loads(text))


def outdoor_only_profile() -> SimulationProfile:
    """A single always-outdoors microenvironment; exposure equals ambient."""
    env = Microenvironment("outdoor", "outdoor", penetration=1.0, air_exchange=1.0)
    act = ActivityProfile(
        envs=("outdoor",), blocks=(0,), transitions=np.ones((1, 1, 1)), dwell_mean=np.array([24.0]), initial="outdoor"
    )
    return SimulationProfile(envs=[env], activity=act)


# --------------------------------------------------------------------------- dynamics


def hourly_indoor_concentration(prev, ambient, env: Microenvironment, source_active=False, exchange=None):
    """One-hour mass-balance step ``C + a*(P*C_amb - C) + S*active`` clamped at 0.

    ``exchange`` overrides the per-hour exchange fraction ``a`` (default:
    the environment's air-exchange rate times one hour).
    """
    a = env.air_exchange if exchange is None else exchange
    nxt = prev + a * (env.penetration * ambient - prev) + env.emission * np.asarray(source_active, dtype=float)
    return np.maximum(nxt, 0.0)


def _district_inputs(panel: MonitorPanel) -> tuple[pd.DatetimeIndex, list[str], np.ndarray, np.ndarray]:
    """Per-district daily ambient with gaps filled; mask of usable days.

    A district with no reading on a day takes that day's spatial average.
    Days with no reading anywhere are simulated with the previous day's
    input (to keep the state continuous) and flagged unusable.
    """
    by_district = panel.district_series()
    overall = spatial_average(panel)
    usable = overall.notna().to_numpy()
    if not usable.any():
        raise ValueError("monitor panel has no complete day")
    filled = by_district.apply(lambda col: col.fillna(overall))
    filled = filled.ffill().bfill()
    return panel.dates, list(by_district.columns), filled.to_numpy(), usable


def simulate_panel(
    panel: MonitorPanel,
    temperature,
    profile: SimulationProfile | None = None,
    replicates: int = 100,
    source: str = "all",
    seed: int = 0,
) -> ExposurePanel:
    """Simulate ``replicates`` individuals in each exposure district.

    Parameters
    ----------
    panel : MonitorPanel
        Daily ambient concentrations; each district's residents see the mean
        of that district's sites.
    temperature : array-like
        Daily temperature (deg C) aligned with ``panel.dates``; modulates
        air exchange.
    profile : SimulationProfile, optional
        Defaults to the bundled calibrated profile.
    source : {"all", "outdoor", "indoor"}
        ``outdoor`` zeroes indoor emissions, ``indoor`` zeroes the ambient
        input.  Random draws are identical across toggles for one seed.

    Returns
    -------
    ExposurePanel
        Columns ordered district-major.  Days without any monitor reading
        are dropped.
    """
    if profile is None:
        profile = load_profile()
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    if source not in TOGGLES:
        raise ValueError(f"source must be one of {TOGGLES}")
    dates, districts, amb_daily, usable = _district_inputs(panel)
    temperature = np.asarray(temperature, dtype=float)
    if temperature.shape != (len(dates),):
        raise ValueError("temperature series must align with the monitor panel dates")
    temperature = pd.Series(temperature).interpolate(limit_direction="both").to_numpy()

    envs = profile.envs
    act = profile.activity
    n_env = len(envs)
    n_days = len(dates)
    col_district = np.repeat(np.arange(len(districts)), replicates)
    n_ind = col_district.size

    pen = np.array([e.penetration for e in envs])
    rate = np.array([e.air_exchange for e in envs])
    emis = np.array([e.emission for e in envs])
    prob = np.array([e.event_prob for e in envs])
    ventilated = np.array([e.kind in ("home-indoor", "other-indoor") for e in envs])
    if source == "outdoor":
        emis = np.zeros_like(emis)
    amb_scale = 0.0 if source == "indoor" else 1.0

    cum_trans = np.cumsum(act.transitions, axis=2)
    cum_trans[..., -1] = 1.0
    block = act.block_of_hour()
    stay_p = 1.0 / act.dwell_mean  # geometric success probability
    log_q = np.log1p(-np.minimum(stay_p, 1 - 1e-12))
    always_one = stay_p >= 1.0

    gens = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_ind)]
    rows = np.arange(n_ind)

    env_now = np.full(n_ind, act.envs.index(act.initial))
    remaining = np.zeros(n_ind, dtype=int)
    c_amb0 = amb_daily[0, col_district] * amb_scale
    conc_amb = pen[None, :] * c_amb0[:, None]  # start at steady state
    conc_ind = np.zeros((n_ind, n_env))

    out_amb = np.empty((n_days, n_ind))
    out_ind = np.empty((n_days, n_ind))
    for d in range(n_days):
        u = np.stack([g.random((3, HOURS)) for g in gens])  # (ind, 3, hours)
        c_amb = amb_daily[d, col_district] * amb_scale
        a = np.minimum(np.where(ventilated, rate * profile.temperature(temperature[d]), rate), 1.0)
        target = pen[None, :] * c_amb[:, None]
        acc_amb = np.zeros(n_ind)
        acc_ind = np.zeros(n_ind)
        for h in range(HOURS):
            move = remaining <= 0
            if move.any():
                idx = rows[move]
                cdf = cum_trans[block[h], env_now[idx]]
                nxt = (u[idx, 0, h, None] > cdf).sum(axis=1)
                env_now[idx] = nxt
                geo = 1 + np.floor(np.log(1.0 - u[idx, 1, h]) / log_q[nxt]).astype(int)
                remaining[idx] = np.where(always_one[nxt], 1, np.maximum(geo, 1))
            active = np.zeros((n_ind, n_env))
            active[rows, env_now] = u[:, 2, h] < prob[env_now]
            conc_amb = np.maximum(conc_amb + a * (target - conc_amb), 0.0)
            conc_ind = np.maximum(conc_ind - a * conc_ind + emis * active, 0.0)
            acc_amb += conc_amb[rows, env_now]
            acc_ind += conc_ind[rows, env_now]
            remaining -= 1
        out_amb[d] = acc_amb / HOURS
        out_ind[d] = acc_ind / HOURS

    return ExposurePanel(
        dates=dates[usable],
        districts=[districts[j] for j in col_district],
        replicates=np.tile(np.arange(replicates), len(districts)),
        ambient_component=out_amb[usable],
        indoor_component=out_ind[usable],
        seed=seed,
    )


def decompose_sources(panel: ExposurePanel) -> tuple[float, float]:
    """Mean daily share of exposure from indoor and from ambient sources."""
    total = panel.exposure.sum(axis=1)
    keep = total > 0
    if not keep.any():
        raise ValueError("total exposure is zero on every day")
    indoor = float(np.mean(panel.indoor_component.sum(axis=1)[keep] / total[keep]))
    return indoor, 1.0 - indoor


# --------------------------------------------------------------------------- file format

PANEL_COLUMNS = ["date", "replicate", "district", "exposure", "ambient_component", "indoor_component"]


def write_exposure_panel(panel: ExposurePanel, path: str | Path) -> None:
    n_days, n_col = panel.exposure.shape
    frame = pd.DataFrame(
        {
            "date": np.repeat(panel.dates.strftime("%Y-%m-%d").to_numpy(), n_col),
            "replicate": np.tile(panel.replicates, n_days),
            "district": np.tile(np.asarray(panel.districts, dtype=object), n_days),
            "exposure": panel.exposure.ravel(),
            "ambient_component": panel.ambient_component.ravel(),
            "indoor_component": panel.indoor_component.ravel(),
        }
    )
    frame.to_csv(path, index=False, float_format="%.10g")


def read_exposure_panel(path: str | Path) -> ExposurePanel:
    frame = pd.read_csv(path, dtype={"district": str}, float_precision="round_trip")
    if list(frame.columns) != PANEL_COLUMNS:
        raise ValueError(f"{path}: expected columns {','.join(PANEL_COLUMNS)}")
    frame["date"] = pd.to_datetime(frame["date"])
    dates = pd.DatetimeIndex(frame["date"].drop_duplicates())
    n_days = len(dates)
    n_col = len(frame) // n_days
    if n_col * n_days != len(frame):
        raise ValueError(f"{path}: ragged panel (rows not a multiple of days)")
    first = frame.iloc[:n_col]
    amb = frame["ambient_component"].to_numpy().reshape(n_days, n_col)
    ind = frame["indoor_component"].to_numpy().reshape(n_days, n_col)
    return ExposurePanel(
        dates=dates,
        districts=first["district"].tolist(),
        replicates=first["replicate"].to_numpy(),
        ambient_component=amb,
        indoor_component=ind,
    )
