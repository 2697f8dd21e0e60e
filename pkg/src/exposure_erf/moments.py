"""Daily exposure moments and the log-normal moment-matching bridge."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class DailyMoments:
    """Mean, variance and third-order term of one day's exposures."""

    lambda1: float
    lambda2: float
    lambda3: float
    k: int


@dataclass(frozen=True)
class LogNormalParams:
    m: float  # log-scale location
    s2: float  # log-scale variance

    def __post_init__(self):
        if self.s2 < 0:
            raise ValueError("s2 must be >= 0")


def ratio_lambda3(mean, variance):
    """Third-order term ``(v/m) * (v/m + 3)`` used in the log-normal mean function.

    This is the default rule for the three-term log-normal mean.  It does
    not have the units of a third central moment; see
    :func:`exact_third_central_moment` for that quantity.
    """
    mean = np.asarray(mean, dtype=float)
    if np.any(mean == 0):
        raise ZeroDivisionError("lambda3 undefined for zero mean")
    r = np.asarray(variance, dtype=float) / mean
    return r * (r + 3.0)


def exact_third_central_moment(mean, variance):
    """Third central moment of the log-normal with the given mean and variance.

    ``mu3 = (v/m**2 + 3) * v**2 / m``.
    """
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(mean <= 0):
        raise ValueError("mean must be > 0")
    return (variance / mean**2 + 3.0) * variance**2 / mean


def third_order_term(mean, variance, rule: str = "ratio"):
    if rule == "ratio":
        return ratio_lambda3(mean, variance)
    if rule == "exact":
        return exact_third_central_moment(mean, variance)
    raise ValueError(f"unknown lambda3 rule {rule!r}")


def sample_moments(samples, rule: str = "ratio") -> DailyMoments:
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("at least two samples are needed for a variance")
    if np.any(x < 0):
        raise ValueError("exposures must be nonnegative")
    m = float(x.mean())
    v = float(x.var(ddof=1))
    return DailyMoments(m, v, float(third_order_term(m, v, rule)), int(x.size))


def moments_table(exposure: np.ndarray, dates, rule: str = "ratio") -> pd.DataFrame:
    """Vectorised :func:`sample_moments` over a (days, samples) matrix."""
    x = np.asarray(exposure, dtype=float)
    if x.shape[1] < 2:
        raise ValueError("at least two samples per day are needed")
    lam1 = x.mean(axis=1)
    lam2 = x.var(axis=1, ddof=1)
    return pd.DataFrame(
        {
            "lambda1": lam1,
            "lambda2": lam2,
            "lambda3": third_order_term(lam1, lam2, rule),
            "k": np.full(len(lam1), x.shape[1], dtype=np.int64),
        },
        index=pd.DatetimeIndex(dates, name="date"),
    )


def write_moments(table: pd.DataFrame, path: str | Path) -> None:
    out = table.copy()
    out.index = out.index.strftime("%Y-%m-%d")
    out.index.name = "date"
    out.to_csv(path, float_format="%.10g")


def read_moments(path: str | Path) -> pd.DataFrame:
    table = pd.read_csv(path, parse_dates=["date"], index_col="date", float_precision="round_trip")
    expected = ["lambda1", "lambda2", "lambda3", "k"]
    if list(table.columns) != expected:
        raise ValueError(f"{path}: expected columns date,{','.join(expected)}")
    return table


def lognormal_from_moments(mean, variance):
    """Moment-matched log-normal: ``s2 = ln(1 + v/m^2)``, ``m = ln(mean) - s2/2``.

    Scalars give a :class:`LogNormalParams`; arrays give an ``(m, s2)`` tuple.
    """
    mean_a = np.asarray(mean, dtype=float)
    var_a = np.asarray(variance, dtype=float)
    if np.any(mean_a <= 0):
        raise ValueError("mean must be > 0")
    if np.any(var_a < 0):
        raise ValueError("variance must be >= 0")
    s2 = np.log1p(var_a / mean_a**2)
    m = np.log(mean_a) - 0.5 * s2
    if m.ndim == 0:
        return LogNormalParams(float(m), float(s2))
    return m, s2


def moments_from_lognormal(m, s2):
    """Mean and variance of ``LogNormal(m, s2)``."""
    m = np.asarray(m, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    mean = np.exp(m + 0.5 * s2)
    var = mean**2 * np.expm1(s2)
    if mean.ndim == 0:
        return float(mean), float(var)
    return mean, var


def lognormal_loglik(samples, params: LogNormalParams) -> float:
    x = np.asarray(samples, dtype=float)
    if np.any(x <= 0):
        raise ValueError("log-normal samples must be > 0")
    if params.s2 <= 0:
        raise ValueError("s2 must be > 0")
    lx = np.log(x)
    return float(
        -lx.sum()
        - 0.5 * x.size * np.log(2 * np.pi * params.s2)
        - ((lx - params.m) ** 2).sum() / (2 * params.s2)
    )
