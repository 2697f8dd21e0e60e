"""Model checking: DIC, Gelman-Rubin, posterior predictive residuals and their ACF."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .mcmc import ModelSpec, PosteriorDraws, draw_means, posterior_mean_deviance

QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)


def _rhat_array(x: np.ndarray) -> np.ndarray:
    """Potential scale reduction over axis 0 (chains) and 1 (draws)."""
    m, n = x.shape[:2]
    if m < 2:
        raise ValueError("Gelman-Rubin needs at least two chains")
    if n < 2:
        raise ValueError("Gelman-Rubin needs at least two draws per chain")
    chain_mean = x.mean(axis=1)
    b = n * chain_mean.var(axis=0, ddof=1)
    w = x.var(axis=1, ddof=1).mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = 1.0 + b / ((n - 1) * w)
    r2 = np.where((w == 0) & (b == 0), 1.0, r2)
    return np.sqrt(r2)


def gelman_rubin(draws, include_latent: bool = False):
    """Potential scale reduction factor per scalar parameter.

    ``R^2 = V / W_n`` with ``V = (n-1)/n W + B/n`` and ``W_n = (n-1)/n W``,
    i.e. the pooled variance over the mean within-chain variance, so chains
    with identical draws give exactly 1.

    ``draws`` may be a :class:`PosteriorDraws` (returns a dict) or an array
    shaped ``(chains, draws[, ...])``.
    """
    if isinstance(draws, PosteriorDraws):
        out = {name: float(_rhat_array(v)) for name, v in draws.scalar_params().items()}
        if include_latent:
            for name in ("lambda1", "lambda2"):
                arr = getattr(draws, name)
                if arr is not None:
                    r = _rhat_array(arr)
                    out[f"{name}_max"] = float(np.max(r))
        return out
    x = np.asarray(draws, dtype=float)
    r = _rhat_array(x)
    return float(r) if np.ndim(r) == 0 else r


def effective_sample_size(x) -> float:
    """Multi-chain ESS with Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    m, n = x.shape
    centred = x - x.mean(axis=1, keepdims=True)
    var = centred.var(axis=1).mean()
    if var == 0:
        return float(m * n)
    f = np.fft.rfft(centred, n=2 * n, axis=1)
    acov = np.fft.irfft(f * np.conj(f), axis=1)[:, :n].mean(axis=0) / n
    rho = acov / acov[0]
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        tau += 2 * pair
    return float(m * n / max(tau, 1e-12))


@dataclass
class DICResult:
    dic: float
    dbar: float
    pd: float
    dhat: float
    warnings: list[str] = field(default_factory=list)


def dic(draws: PosteriorDraws, spec: ModelSpec, min_ess: float = 100) -> DICResult:
    """``DIC = Dbar + pD`` with ``pD = Dbar - D(posterior means)``."""
    dbar = float(np.mean(draws.deviance))
    dhat = posterior_mean_deviance(draws, spec)
    notes = []
    ess = effective_sample_size(draws.deviance)
    if ess < min_ess:
        msg = f"only {ess:.0f} effective deviance draws; DIC is unreliable"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    p_d = dbar - dhat
    return DICResult(dic=dbar + p_d, dbar=dbar, pd=p_d, dhat=dhat, warnings=notes)


def residual_draws(draws: PosteriorDraws, spec: ModelSpec) -> np.ndarray:
    """Standardised residuals ``(y_t - mu_t)/sqrt(mu_t)``, shape (draws total, days)."""
    mu = draw_means(draws, spec).reshape(-1, len(spec.y))
    return (spec.y - mu) / np.sqrt(mu)


def ppc_residuals(draws: PosteriorDraws, spec: ModelSpec, quantiles=QUANTILES) -> pd.DataFrame:
    """Posterior quantiles of each day's standardised residual."""
    r = residual_draws(draws, spec)
    q = np.quantile(r, quantiles, axis=0).T
    return pd.DataFrame(q, index=pd.DatetimeIndex(spec.dates, name="date"), columns=[f"q{100 * p:g}" for p in quantiles])


def acf(series, max_lag: int) -> np.ndarray:
    """Biased (divide-by-n) sample ACF along the last axis, lags 0..max_lag."""
    x = np.asarray(series, dtype=float)
    n = x.shape[-1]
    if max_lag >= n:
        raise ValueError("max_lag must be smaller than the series length")
    c = x - x.mean(axis=-1, keepdims=True)
    denom = np.sum(c * c, axis=-1)
    out = np.empty(x.shape[:-1] + (max_lag + 1,))
    for k in range(max_lag + 1):
        out[..., k] = np.sum(c[..., : n - k] * c[..., k:], axis=-1) / denom
    return out


def residual_acf(draws: PosteriorDraws, spec: ModelSpec, max_lag: int = 10, quantiles=QUANTILES) -> pd.DataFrame:
    """Per-lag posterior summaries of the residual autocorrelation sequence."""
    r = residual_draws(draws, spec)
    a = acf(r, max_lag)
    q = np.quantile(a, quantiles, axis=0).T
    frame = pd.DataFrame(q, index=pd.RangeIndex(max_lag + 1, name="lag"), columns=[f"q{100 * p:g}" for p in quantiles])
    frame["median"] = np.median(a, axis=0)
    return frame


def bartlett_band(n: int) -> float:
    return 2.0 / np.sqrt(n)


def acf_within_band(acf_summary: pd.DataFrame, n: int, lags=range(1, 11)) -> bool:
    """True when every listed lag's median ACF lies inside +-2/sqrt(n)."""
    med = acf_summary.loc[list(lags), "median"].to_numpy()
    return bool(np.all(np.abs(med) < bartlett_band(n)))


@dataclass
class DiagnosticsReport:
    dic: DICResult
    rhat: dict[str, float]
    residuals: pd.DataFrame
    acf: pd.DataFrame
    n_days: int

    def summary(self) -> dict:
        return dict(
            dic=self.dic.dic,
            dbar=self.dic.dbar,
            pd=self.dic.pd,
            dhat=self.dic.dhat,
            dic_warnings=self.dic.warnings,
            rhat=self.rhat,
            max_rhat=max(self.rhat.values()),
            converged=bool(max(self.rhat.values()) < 1.1),
            acf_within_bartlett=acf_within_band(self.acf, self.n_days, range(1, len(self.acf))),
            bartlett_band=bartlett_band(self.n_days),
            share_median_residual_within_2=float(np.mean(np.abs(self.residuals["q50"]) <= 2)),
        )

    def write(self, outdir: str | Path) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        res = self.residuals.copy()
        res.index = res.index.strftime("%Y-%m-%d")
        res.to_csv(outdir / "residual_quantiles.csv", float_format="%.10g")
        self.acf.to_csv(outdir / "residual_acf.csv", float_format="%.10g")
        (outdir / "diagnostics.json").write_text(json.dumps(self.summary(), indent=2) + "\n")


def diagnose(draws: PosteriorDraws, spec: ModelSpec, max_lag: int = 10) -> DiagnosticsReport:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        d = dic(draws, spec)
    return DiagnosticsReport(
        dic=d,
        rhat=gelman_rubin(draws, include_latent=True),
        residuals=ppc_residuals(draws, spec),
        acf=residual_acf(draws, spec, max_lag),
        n_days=len(spec.y),
    )
