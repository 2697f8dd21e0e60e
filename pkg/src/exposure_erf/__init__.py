"""Bayesian exposure-response models that carry the within-day distribution
of simulated personal exposures into a Poisson time-series regression."""

from .config import RunConfig, load_config
from .data_io import HealthSeries, MonitorPanel, load_health_series, load_monitor_panel
from .mcmc import PosteriorDraws, build_model_spec, holloman_variant, run_chains
from .micro_sim import ExposurePanel, simulate_panel
from .risk import RiskSummary, attenuation_fit, relative_risk

__all__ = [
    "ExposurePanel",
    "HealthSeries",
    "MonitorPanel",
    "PosteriorDraws",
    "RiskSummary",
    "RunConfig",
    "attenuation_fit",
    "build_model_spec",
    "holloman_variant",
    "load_config",
    "load_health_series",
    "load_monitor_panel",
    "relative_risk",
    "run_chains",
    "simulate_panel",
]
