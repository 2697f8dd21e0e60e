"""Relative risks, exceedance curves, attenuation and plot-ready tables."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from .mcmc import PosteriorDraws
from .micro_sim import ExposurePanel, decompose_sources
from .moments import lognormal_from_moments

RR_QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)
MODEL_LABELS = {
    "i": "Standard Poisson model (i)",
    "ii": "Standard Poisson model (ii)",
    "iii": "Normal exposure model (iii)",
    "iv": "Log-normal exposure model (iv)",
    "holloman": "Latent single-exposure model",
}
FIGURES = ("boxplot", "scatter", "figure3", "exceedance", "residuals")


def default_grid(increment: float) -> np.ndarray:
    """``1.00, 1.005, ..., 1.10`` for 10 units; ``1.0, 1.025, ..., 1.5`` otherwise."""
    if increment <= 10:
        return np.round(np.arange(0, 21) * 0.005 + 1.0, 10)
    return np.round(np.arange(0, 21) * 0.025 + 1.0, 10)


def _gamma_draws(draws) -> np.ndarray:
    if isinstance(draws, PosteriorDraws):
        return draws.gamma.reshape(-1)
    return np.asarray(draws, dtype=float).reshape(-1)


def exceedance(draws, increment: float = 10.0, c_grid=None) -> pd.Series:
    """Monte Carlo ``P(exp(gamma * increment) > c)`` for each ``c`` in the grid."""
    grid = default_grid(increment) if c_grid is None else np.asarray(c_grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValueError("c_grid must be nonempty")
    rr = np.sort(np.exp(_gamma_draws(draws) * increment))
    above = rr.size - np.searchsorted(rr, grid, side="right")
    return pd.Series(above / rr.size, index=pd.Index(grid, name="c"), name="p_exceed")


@dataclass
class RiskSummary:
    increment: float
    quantiles: dict[float, float]
    exceedance: pd.Series
    p_above_one: float
    label: str = ""

    def __post_init__(self):
        q = np.array([self.quantiles[p] for p in sorted(self.quantiles)])
        if np.any(np.diff(q) < 0):
            raise AssertionError("relative-risk quantiles are not monotone")
        if np.any(np.diff(self.exceedance.to_numpy()) > 0):
            raise AssertionError("exceedance curve is not nonincreasing")

    @property
    def median(self) -> float:
        return self.quantiles[0.5]

    @property
    def interval(self) -> tuple[float, float]:
        return self.quantiles[0.025], self.quantiles[0.975]

    def covers(self, value: float) -> bool:
        lo, hi = self.interval
        return lo <= value <= hi

    def row(self) -> dict:
        """One row of the model-comparison table."""
        out = {"model": self.label, "increment": self.increment}
        out.update({f"q{100 * p:g}": v for p, v in sorted(self.quantiles.items())})
        out["p_rr_gt_1"] = self.p_above_one
        return out

    def to_dict(self) -> dict:
        d = self.row()
        d["exceedance"] = {f"{c:g}": float(p) for c, p in self.exceedance.items()}
        return d


def relative_risk(draws, increment: float = 10.0, c_grid=None, label: str | None = None) -> RiskSummary:
    """Posterior summary of ``RR = exp(gamma * increment)``."""
    rr = np.exp(_gamma_draws(draws) * increment)
    q = np.quantile(rr, RR_QUANTILES)
    q = np.maximum.accumulate(q)  # guard against rounding in the interpolation
    if label is None:
        label = MODEL_LABELS.get(getattr(draws, "model", ""), getattr(draws, "model", ""))
    return RiskSummary(
        increment=float(increment),
        quantiles={p: float(v) for p, v in zip(RR_QUANTILES, q)},
        exceedance=exceedance(draws, increment, c_grid),
        p_above_one=float(np.mean(rr > 1.0)),
        label=label,
    )


def risk_table(summaries) -> pd.DataFrame:
    return pd.DataFrame([s.row() for s in summaries])


def write_risk(summaries, outdir: str | Path) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    summaries = list(summaries)
    risk_table(summaries).to_csv(outdir / "risk_table.csv", index=False, float_format="%.6g")
    curves = pd.concat(
        [s.exceedance.rename(f"{s.label} [{s.increment:g}]") for s in summaries], axis=1
    )
    curves.to_csv(outdir / "exceedance.csv", float_format="%.6g")
    (outdir / "risk_summary.json").write_text(json.dumps([s.to_dict() for s in summaries], indent=2) + "\n")


# --------------------------------------------------------------------------- attenuation


@dataclass
class AttenuationFit:
    theta: float
    phi: float
    r2: float
    n: int
    se_phi: float

    @property
    def slope_sign(self) -> str:
        return "positive" if self.phi > 0 else "negative" if self.phi < 0 else "zero"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slope_sign"] = self.slope_sign
        return d


def attenuation_fit(ambient, personal) -> AttenuationFit:
    """Least-squares ``personal = theta + phi * ambient`` over days present in both."""
    a = pd.Series(ambient) if not isinstance(ambient, pd.Series) else ambient
    p = pd.Series(personal) if not isinstance(personal, pd.Series) else personal
    if isinstance(ambient, pd.Series) and isinstance(personal, pd.Series):
        a, p = a.align(p, join="inner")
    x = a.to_numpy(dtype=float)
    y = p.to_numpy(dtype=float)
    if x.shape != y.shape:
        raise ValueError("ambient and personal series differ in length")
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    if x.size < 3:
        raise ValueError("attenuation fit needs at least 3 days")
    if np.ptp(x) == 0:
        raise ValueError("ambient series has zero variance")
    res = stats.linregress(x, y)
    return AttenuationFit(
        theta=float(res.intercept), phi=float(res.slope), r2=float(res.rvalue**2), n=int(x.size), se_phi=float(res.stderr)
    )


def gamma_attenuation_check(gamma_ambient, gamma_personal, phi: float) -> dict:
    """Compare the ambient-scale median with ``phi`` times the personal-scale median."""
    med_a = float(np.median(_gamma_draws(gamma_ambient)))
    med_p = float(np.median(_gamma_draws(gamma_personal)))
    expected = phi * med_p
    gap = abs(med_a - expected)
    rel = gap / abs(med_a) if med_a != 0 else (0.0 if gap == 0 else float("inf"))
    return dict(median_gamma_ambient=med_a, median_gamma_personal=med_p, phi=phi, implied=expected, relative_discrepancy=rel)


def source_summary(panel: ExposurePanel) -> dict:
    indoor, outdoor = decompose_sources(panel)
    return dict(indoor_share=indoor, outdoor_share=outdoor, mean_exposure=float(panel.exposure.mean()))


# --------------------------------------------------------------------------- plot data


def boxplot_table(panel: ExposurePanel) -> pd.DataFrame:
    """Five-number summary of the personal exposures on each day."""
    q = np.quantile(panel.exposure, [0.0, 0.25, 0.5, 0.75, 1.0], axis=1).T
    frame = pd.DataFrame(q, index=pd.DatetimeIndex(panel.dates, name="date"), columns=["min", "q1", "median", "q3", "max"])
    frame["mean"] = panel.exposure.mean(axis=1)
    return frame


def scatter_table(ambient: pd.Series, panel: ExposurePanel) -> pd.DataFrame:
    personal = panel.daily_means()
    frame = pd.concat([ambient.rename("ambient"), personal.rename("personal")], axis=1, join="inner")
    frame.index.name = "date"
    return frame


def predictive_samples(draws: PosteriorDraws | None, day, family: str, n: int = 20_000, seed: int = 0, fixed=None):
    """Posterior predictive exposures for one day.

    ``family`` is ``"fixed"`` (a spike at ``fixed``), ``"normal"`` or
    ``"lognormal"``; the latter two mix over the stored draws of the day's
    ``(lambda1, lambda2)``.
    """
    rng = np.random.default_rng(seed)
    if family == "fixed":
        return np.full(n, float(fixed))
    if draws is None or draws.lambda1 is None:
        raise ValueError("predictive draws need latent exposure moments")
    j = draws.lambda_dates.get_loc(pd.Timestamp(day))
    l1 = draws.lambda1[..., j].reshape(-1)
    l2 = draws.lambda2[..., j].reshape(-1)
    pick = rng.integers(0, l1.size, n)
    m1, m2 = l1[pick], l2[pick]
    if family == "normal":
        return rng.normal(m1, np.sqrt(m2))
    if family == "lognormal":
        mu, s2 = lognormal_from_moments(m1, m2)
        return rng.lognormal(mu, np.sqrt(s2))
    raise ValueError(f"unknown predictive family {family!r}")


def figure3_tables(panel: ExposurePanel, day, draws_iii=None, draws_iv=None, bins: int = 60, n: int = 20_000, seed: int = 0):
    """Empirical vs predictive exposure densities for one day, and a moment table."""
    i = panel.dates.get_loc(pd.Timestamp(day))
    x = panel.exposure[i]
    sets = {"empirical": x, "model_ii": predictive_samples(None, day, "fixed", n, seed, fixed=x.mean())}
    if draws_iii is not None:
        sets["model_iii"] = predictive_samples(draws_iii, day, "normal", n, seed)
    if draws_iv is not None:
        sets["model_iv"] = predictive_samples(draws_iv, day, "lognormal", n, seed)
    lo = min(float(np.min(v)) for v in sets.values())
    hi = max(float(np.max(v)) for v in sets.values())
    if hi - lo <= 1e-9 * max(1.0, abs(hi)):
        lo, hi = lo - 0.5, hi + 0.5  # degenerate day: spike in one bin
    edges = np.linspace(lo, hi, bins + 1)
    dens = pd.DataFrame({"lower": edges[:-1], "upper": edges[1:]})
    for name, v in sets.items():
        dens[name] = np.histogram(v, bins=edges, density=True)[0]
    summary = pd.DataFrame(
        {
            name: dict(mean=float(np.mean(v)), variance=float(np.var(v, ddof=1)), mass_below_zero=float(np.mean(v < 0)))
            for name, v in sets.items()
        }
    ).T
    summary.index.name = "source"
    return dens, summary


def emit_plot_data(selector: str, **inputs) -> dict[str, pd.DataFrame]:
    """Tables needed to redraw one figure.

    ``boxplot`` needs ``panel``; ``scatter`` needs ``ambient`` and ``panel``;
    ``figure3`` needs ``panel`` and ``day`` (optionally ``draws_iii``,
    ``draws_iv``); ``exceedance`` needs ``draws`` (a mapping label ->
    draws) and optionally ``increments``; ``residuals`` needs ``report``.
    """
    if selector not in FIGURES:
        raise ValueError(f"unknown figure selector {selector!r}; choose from {FIGURES}")
    if selector == "boxplot":
        return {"boxplot": boxplot_table(inputs["panel"])}
    if selector == "scatter":
        return {"scatter": scatter_table(inputs["ambient"], inputs["panel"])}
    if selector == "figure3":
        dens, summ = figure3_tables(
            inputs["panel"], inputs["day"], inputs.get("draws_iii"), inputs.get("draws_iv"), seed=inputs.get("seed", 0)
        )
        return {"figure3_density": dens, "figure3_moments": summ}
    if selector == "exceedance":
        out = {}
        for inc in inputs.get("increments", (10.0, 50.0)):
            cols = {label: exceedance(d, inc) for label, d in inputs["draws"].items()}
            out[f"exceedance_{inc:g}"] = pd.DataFrame(cols)
        return out
    report = inputs["report"]
    return {"residual_quantiles": report.residuals, "residual_acf": report.acf}


def write_tables(tables: dict[str, pd.DataFrame], outdir: str | Path) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, frame in tables.items():
        frame = frame.copy()
        if isinstance(frame.index, pd.DatetimeIndex):
            frame.index = frame.index.strftime("%Y-%m-%d")
            frame.index.name = "date"
        path = outdir / f"{name}.csv"
        frame.to_csv(path, float_format="%.8g", index=not isinstance(frame.index, pd.RangeIndex) or frame.index.name is not None)
        paths.append(path)
    return paths


@dataclass
class ReportBundle:
    """Everything the ``report`` stage writes, kept for programmatic use."""

    risks: list[RiskSummary]
    attenuation: AttenuationFit | None = None
    sources: dict | None = None
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return dict(
            risks=[r.to_dict() for r in self.risks],
            attenuation=None if self.attenuation is None else self.attenuation.to_dict(),
            sources=self.sources,
            **self.extra,
        )
