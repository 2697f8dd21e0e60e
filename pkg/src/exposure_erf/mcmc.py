"""MCMC fitting of the Poisson exposure-response models.

Updates per sweep:

* ``beta = (gamma, alpha)`` -- block random-walk Metropolis-Hastings with a
  proposal covariance adapted during burn-in and frozen afterwards;
* ``(lambda1_t, lambda2_t)`` -- one random-walk 2-block per exposure day.
  The days are conditionally independent given ``beta`` so all blocks are
  proposed and accepted/rejected together in one vectorised step;
* ``sigma2`` -- conjugate inverse-gamma Gibbs draw;
* ``tau2`` -- random walk on ``log(tau2)`` against its exact conditional,
  which carries the normalising constant of the zero-truncated ``lambda2``
  prior.

Models (i) and (ii) have fixed exposures and only the ``beta`` block.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gammaincc, gammainccinv, gammaln, log_ndtr

from .config import RunConfig
from .data_io import HealthSeries, MonitorPanel, apply_lag, spatial_average
from .micro_sim import ExposurePanel
from .moments import lognormal_from_moments, third_order_term
from .splines import build_design

log = logging.getLogger(__name__)

LATENT_MODELS = ("iii", "iv")
HOLLOMAN_BOUND = 25.0


class SamplerError(RuntimeError):
    pass


# --------------------------------------------------------------------------- data


@dataclass
class ExposureData:
    """Per-day sufficient statistics of the simulated exposure samples."""

    dates: pd.DatetimeIndex
    k: np.ndarray
    mean: np.ndarray  # sample mean
    var: np.ndarray  # sample variance (n - 1)
    log_mean: np.ndarray | None = None  # mean of ln x
    log_var: np.ndarray | None = None  # population variance of ln x
    log_sum: np.ndarray | None = None  # sum of ln x

    @classmethod
    def from_samples(cls, dates, samples, log_scale: bool) -> "ExposureData":
        x = np.asarray(samples, dtype=float)
        out = cls(
            dates=pd.DatetimeIndex(dates),
            k=np.full(x.shape[0], x.shape[1]),
            mean=x.mean(axis=1),
            var=x.var(axis=1, ddof=1),
        )
        if log_scale:
            if np.any(x <= 0):
                raise ValueError("log-normal exposure model needs strictly positive exposures")
            lx = np.log(x)
            out.log_mean = lx.mean(axis=1)
            out.log_var = lx.var(axis=1)
            out.log_sum = lx.sum(axis=1)
        return out

    def __len__(self):
        return len(self.dates)


@dataclass
class ModelSpec:
    """Everything a sampler needs: data, design, priors and model choice.

    ``exp_index[t]`` is the exposure day paired (through the lag) with
    Poisson day ``t``.  Exposure days outside the Poisson window still enter
    the exposure likelihood.
    """

    model: str
    y: np.ndarray
    design: np.ndarray
    column_names: list[str]
    dates: pd.DatetimeIndex
    lag: int = 2
    fixed_exposure: np.ndarray | None = None
    exposure: ExposureData | None = None
    exp_index: np.ndarray | None = None
    prior_mean: np.ndarray | None = None
    prior_var: np.ndarray | None = None
    xi: float | None = None
    s2: float | None = None
    epsilon: float = 0.001
    lambda3_rule: str = "ratio"
    bases: tuple | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.design = np.asarray(self.design, dtype=float)
        n, q = self.design.shape
        if self.y.shape != (n,):
            raise ValueError("counts and design rows differ")
        p = q + 1
        if self.prior_mean is None:
            self.prior_mean = np.zeros(p)
        if self.prior_var is None:
            self.prior_var = np.full(p, 1e4)
        self.prior_mean = np.asarray(self.prior_mean, dtype=float)
        self.prior_var = np.asarray(self.prior_var, dtype=float)
        if self.prior_mean.shape != (p,) or self.prior_var.shape != (p,):
            raise ValueError(f"beta prior must have length {p}")
        if np.any(self.prior_var < 0):
            raise ValueError("prior variances must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.model in LATENT_MODELS:
            if self.exposure is None or self.exp_index is None:
                raise ValueError(f"model {self.model} needs exposure samples")
            self.exp_index = np.asarray(self.exp_index, dtype=int)
            if self.model == "iv" and self.exposure.log_mean is None:
                raise ValueError("model iv needs log-scale exposure statistics")
            if self.xi is None:
                self.xi = float(np.mean(self.exposure.mean))
            if self.s2 is None:
                self.s2 = float(np.mean(self.exposure.var))
        elif self.fixed_exposure is None:
            raise ValueError(f"model {self.model} needs a fixed exposure series")
        else:
            self.fixed_exposure = np.asarray(self.fixed_exposure, dtype=float)
        self._lgy = gammaln(self.y + 1.0)

    @property
    def latent(self) -> bool:
        return self.model in LATENT_MODELS

    @property
    def n_params(self) -> int:
        return self.design.shape[1] + 1

    @property
    def free(self) -> np.ndarray:
        return self.prior_var > 0

    @property
    def param_names(self) -> list[str]:
        return ["gamma", *self.column_names]

    # -- model pieces ---------------------------------------------------------

    def offset(self, gamma, lam1=None, lam2=None):
        """Exposure contribution to ``ln(mu_t)`` on each Poisson day."""
        if not self.latent:
            return gamma * self.fixed_exposure
        l1 = lam1[self.exp_index]
        l2 = lam2[self.exp_index]
        off = gamma * l1 + 0.5 * gamma**2 * l2
        if self.model == "iv":
            off = off + gamma**3 * third_order_term(l1, l2, self.lambda3_rule) / 6.0
        return off

    def eta(self, beta, lam1=None, lam2=None):
        return self.offset(beta[0], lam1, lam2) + self.design @ beta[1:]

    def deviance(self, beta, lam1=None, lam2=None) -> float:
        eta = self.eta(beta, lam1, lam2)
        return float(-2.0 * np.sum(self.y * eta - np.exp(eta) - self._lgy))

    def exposure_loglik(self, lam1, lam2):
        """Per-day exposure log-likelihood; ``-inf`` outside the support."""
        e = self.exposure
        with np.errstate(invalid="ignore", divide="ignore"):
            if self.model == "iv":
                ok = (lam1 > 0) & (lam2 > 0)
                l1 = np.where(ok, lam1, 1.0)
                l2 = np.where(ok, lam2, 1.0)
                s2 = np.log1p(l2 / l1**2)
                m = np.log(l1) - 0.5 * s2
                ll = -e.log_sum - 0.5 * e.k * np.log(2 * np.pi * s2) - e.k * (e.log_var + (e.log_mean - m) ** 2) / (2 * s2)
            else:
                ok = lam2 > 0
                l2 = np.where(ok, lam2, 1.0)
                pop_var = e.var * (e.k - 1) / e.k
                ll = -0.5 * e.k * np.log(2 * np.pi * l2) - e.k * (pop_var + (e.mean - lam1) ** 2) / (2 * l2)
        return np.where(ok, ll, -np.inf)

    def lambda_proposal_chol(self) -> np.ndarray:
        """Per-day Cholesky factors (l11, l21, l22) of the large-sample
        covariance of (mean, variance) estimates; a proposal shape."""
        e = self.exposure
        k = e.k.astype(float)
        v = np.maximum(e.var, 1e-12)
        if self.model == "iv":
            m, s2 = lognormal_from_moments(e.mean, v)
            s2 = np.maximum(s2, 1e-12)
            mean = np.exp(m + s2 / 2)
            # delta method from (m, s2) with Var(m) = s2/k, Var(s2) = 2 s2^2/k
            j11, j12 = mean, mean / 2
            j21 = 2 * mean**2 * np.expm1(s2)
            j22 = 2 * np.exp(2 * m + 2 * s2) - np.exp(2 * m + s2)
            vm, vs = s2 / k, 2 * s2**2 / k
            c11 = j11**2 * vm + j12**2 * vs
            c12 = j11 * j21 * vm + j12 * j22 * vs
            c22 = j21**2 * vm + j22**2 * vs
        else:
            c11 = v / k
            c12 = np.zeros_like(v)
            c22 = 2 * v**2 / k
        l11 = np.sqrt(c11)
        l21 = c12 / l11
        l22 = np.sqrt(np.maximum(c22 - l21**2, 1e-12 * c22))
        return np.column_stack([l11, l21, l22])


def covariate_design(dates: pd.DatetimeIndex, temperature, time_df: int, temp_df: int):
    """Intercept + standardised natural splines of calendar day and temperature."""
    dates = pd.DatetimeIndex(dates)
    times = ((dates - dates[0]).days + 1).to_numpy(dtype=float)
    return build_design(times, np.asarray(temperature, dtype=float), time_df, temp_df)


def build_model_spec(
    config: RunConfig,
    health: HealthSeries,
    monitor: MonitorPanel | None = None,
    exposure: ExposurePanel | None = None,
    model: str | None = None,
) -> ModelSpec:
    """Align data through the lag and assemble the :class:`ModelSpec`.

    Model (i) uses the spatial average of ``monitor``; the others use the
    exposure panel (daily means for (ii), full samples for (iii)/(iv)).
    Days with no exposure information are excluded from the Poisson window.
    """
    model = model or config.model
    lag = config.lag
    if model == "i":
        if monitor is None:
            raise ValueError("model i needs the monitor panel")
        daily = spatial_average(monitor)
    else:
        if exposure is None:
            raise ValueError(f"model {model} needs an exposure panel")
        daily = exposure.daily_means()
    lagged = apply_lag(daily, lag) if lag else daily
    window = lagged.index.intersection(health.dates)
    window = window[lagged.reindex(window).notna().to_numpy()]
    if len(window) < config.time_df + config.temp_df + 3:
        raise ValueError("too few aligned days for the covariate design")
    h = health.subset(window)
    design, names, bases = covariate_design(window, h.temp_mean, config.time_df, config.temp_df)
    prior_var = np.full(len(names) + 1, config.beta_prior_var)
    common = dict(
        model=model,
        y=h.counts,
        design=design,
        column_names=names,
        dates=window,
        lag=lag,
        prior_var=prior_var,
        epsilon=config.epsilon,
        lambda3_rule=config.lambda3,
        bases=bases,
    )
    if model in ("i", "ii"):
        return ModelSpec(fixed_exposure=lagged.reindex(window).to_numpy(), **common)
    data = ExposureData.from_samples(exposure.dates, exposure.exposure, log_scale=(model == "iv"))
    source_dates = window - pd.Timedelta(days=lag)
    exp_index = exposure.dates.get_indexer(source_dates)
    return ModelSpec(exposure=data, exp_index=exp_index, xi=config.xi, s2=config.s2, **common)


# --------------------------------------------------------------------------- state


@dataclass
class ChainState:
    beta: np.ndarray
    lam1: np.ndarray | None = None
    lam2: np.ndarray | None = None
    sigma2: float = np.nan
    tau2: float = np.nan
    off: np.ndarray = field(default=None, repr=False)
    zal: np.ndarray = field(default=None, repr=False)
    terms: np.ndarray = field(default=None, repr=False)  # y*eta - exp(eta) per day

    @classmethod
    def create(cls, spec: ModelSpec, beta, lam1=None, lam2=None, sigma2=np.nan, tau2=np.nan) -> "ChainState":
        st = cls(np.array(beta, dtype=float), lam1, lam2, sigma2, tau2)
        st.refresh(spec)
        return st

    def refresh(self, spec) -> None:
        self.off = spec.offset(self.beta[0], self.lam1, self.lam2)
        self.zal = spec.design @ self.beta[1:]
        eta = self.off + self.zal
        self.terms = spec.y * eta - np.exp(eta)

    def copy(self) -> "ChainState":
        return ChainState(
            self.beta.copy(),
            None if self.lam1 is None else self.lam1.copy(),
            None if self.lam2 is None else self.lam2.copy(),
            self.sigma2,
            self.tau2,
            self.off.copy(),
            self.zal.copy(),
            self.terms.copy(),
        )


def log_prior_beta(spec: ModelSpec, beta) -> float:
    free = spec.free
    d = beta[free] - spec.prior_mean[free]
    return float(-0.5 * np.sum(d * d / spec.prior_var[free]))


def log_posterior(spec: ModelSpec, state: ChainState) -> float:
    """Unnormalised log posterior at ``state`` (up to constants)."""
    lp = float(np.sum(state.terms)) + log_prior_beta(spec, state.beta)
    if spec.latent:
        lp += float(np.sum(spec.exposure_loglik(state.lam1, state.lam2)))
        n = len(state.lam1)
        lp += -0.5 * n * math.log(state.sigma2) - np.sum((state.lam1 - spec.xi) ** 2) / (2 * state.sigma2)
        lp += -0.5 * n * math.log(state.tau2) - np.sum((state.lam2 - spec.s2) ** 2) / (2 * state.tau2)
        lp -= n * float(log_ndtr(spec.s2 / math.sqrt(state.tau2)))
        lp += _log_invgamma(state.sigma2, spec.epsilon) + _log_invgamma(state.tau2, spec.epsilon)
    return lp


def _log_invgamma(x, eps):
    return -(eps + 1) * math.log(x) - eps / x


# --------------------------------------------------------------------------- updates


def update_beta_block(spec: ModelSpec, state: ChainState, chol: np.ndarray, rng) -> bool:
    """Random-walk block update of ``beta`` restricted to its free components.

    ``chol`` is the Cholesky factor of the proposal covariance over the free
    components.  Returns whether the proposal was accepted; ``state`` is
    modified in place.
    """
    free = spec.free
    step = chol @ rng.standard_normal(chol.shape[0])
    prop = state.beta.copy()
    prop[free] += step
    off = spec.offset(prop[0], state.lam1, state.lam2) if step.size and free[0] else state.off
    zal = spec.design @ prop[1:]
    eta = off + zal
    with np.errstate(over="ignore", invalid="ignore"):
        terms = spec.y * eta - np.exp(eta)
        log_r = (terms.sum() - state.terms.sum()) + log_prior_beta(spec, prop) - log_prior_beta(spec, state.beta)
    if np.log(rng.random()) <= log_r:
        state.beta, state.off, state.zal, state.terms = prop, off, zal, terms
        return True
    return False


def update_lambda_blocks(spec: ModelSpec, state: ChainState, chol: np.ndarray, scale: np.ndarray, rng) -> np.ndarray:
    """Per-day random-walk update of ``(lambda1_t, lambda2_t)``; returns the accept mask.

    Proposals with ``lambda2 <= 0`` (or ``lambda1 <= 0`` under the
    log-normal model) fall outside the support and are rejected.
    """
    n = len(state.lam1)
    z = rng.standard_normal((n, 2))
    d1 = scale * chol[:, 0] * z[:, 0]
    d2 = scale * (chol[:, 1] * z[:, 0] + chol[:, 2] * z[:, 1])
    l1 = state.lam1 + d1
    l2 = state.lam2 + d2
    valid = l2 > 0
    if spec.model == "iv":
        valid &= l1 > 0
    l1 = np.where(valid, l1, state.lam1)
    l2 = np.where(valid, l2, state.lam2)

    log_r = spec.exposure_loglik(l1, l2) - spec.exposure_loglik(state.lam1, state.lam2)
    log_r += ((state.lam1 - spec.xi) ** 2 - (l1 - spec.xi) ** 2) / (2 * state.sigma2)
    log_r += ((state.lam2 - spec.s2) ** 2 - (l2 - spec.s2) ** 2) / (2 * state.tau2)

    gamma = state.beta[0]
    idx = spec.exp_index
    off_new = spec.offset(gamma, l1, l2)
    eta_new = off_new + state.zal
    with np.errstate(over="ignore"):
        terms_new = spec.y * eta_new - np.exp(eta_new)
    pois = np.zeros(n)
    pois[idx] = terms_new - state.terms
    log_r += pois

    accept = valid & (np.log(rng.random(n)) < log_r)
    state.lam1 = np.where(accept, l1, state.lam1)
    state.lam2 = np.where(accept, l2, state.lam2)
    hit = accept[idx]
    state.off = np.where(hit, off_new, state.off)
    state.terms = np.where(hit, terms_new, state.terms)
    return accept


def update_variance_gibbs(values, epsilon: float, prior_mean: float, rng) -> float:
    """Conjugate draw ``IG(eps + n/2, eps + sum((v - prior_mean)^2)/2)``."""
    values = np.asarray(values, dtype=float)
    if values.size < 1:
        raise ValueError("need at least one level value")
    shape = epsilon + 0.5 * values.size
    rate = epsilon + 0.5 * float(np.sum((values - prior_mean) ** 2))
    return rate / rng.gamma(shape)


def log_tau2_conditional(spec: ModelSpec, lam2, tau2: float) -> float:
    """Log full conditional of ``tau2`` (up to a constant), including the
    normalising constant of the zero-truncated ``lambda2`` prior."""
    n = len(lam2)
    ss = float(np.sum((lam2 - spec.s2) ** 2))
    return (
        _log_invgamma(tau2, spec.epsilon)
        - 0.5 * n * math.log(tau2)
        - ss / (2 * tau2)
        - n * float(log_ndtr(spec.s2 / math.sqrt(tau2)))
    )


def update_tau2(spec: ModelSpec, state: ChainState, log_step: float, rng) -> bool:
    """Random-walk move on ``log(tau2)``.

    The truncation of the ``lambda2`` prior makes the conditional
    non-conjugate; with hundreds of days the truncation factor is too sharp
    for an inverse-gamma independence proposal to mix.
    """
    cur = state.tau2
    prop = cur * math.exp(log_step * rng.standard_normal())
    log_r = (
        log_tau2_conditional(spec, state.lam2, prop)
        - log_tau2_conditional(spec, state.lam2, cur)
        + math.log(prop / cur)
    )
    if math.log(rng.random()) <= log_r:
        state.tau2 = prop
        return True
    return False


# --------------------------------------------------------------------------- initialisation


def poisson_mode(spec: ModelSpec, exposure_term, max_iter: int = 100):
    """Newton-Raphson posterior mode of ``beta`` with the exposure column
    ``exposure_term`` held fixed; returns ``(mode, covariance over free)``."""
    x = np.column_stack([exposure_term, spec.design])
    free = spec.free
    beta = spec.prior_mean.copy()
    beta[1] = math.log(max(spec.y.mean(), 0.5))
    prec = np.zeros_like(spec.prior_var)
    prec[free] = 1.0 / spec.prior_var[free]
    xf = x[:, free]

    def objective(b):
        eta = x @ b
        return float(np.sum(spec.y * eta - np.exp(eta)) - 0.5 * np.sum(prec * (b - spec.prior_mean) ** 2))

    cur = objective(beta)
    for _ in range(max_iter):
        mu = np.exp(x @ beta)
        grad = xf.T @ (spec.y - mu) - prec[free] * (beta[free] - spec.prior_mean[free])
        hess = (xf * mu[:, None]).T @ xf + np.diag(prec[free])
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while True:
            trial = beta.copy()
            trial[free] += t * step
            val = objective(trial)
            if val >= cur - 1e-12 or t < 1e-8:
                break
            t /= 2
        beta, done = trial, abs(val - cur) < 1e-10
        cur = val
        if done:
            break
    mu = np.exp(x @ beta)
    hess = (xf * mu[:, None]).T @ xf + np.diag(prec[free])
    cov = cho_solve(cho_factor(hess), np.eye(len(hess)))
    return beta, 0.5 * (cov + cov.T)


def _initial_state(spec: ModelSpec, rng, mode, cov, chain: int, n_chains: int, max_tries: int = 20) -> ChainState:
    """Overdispersed start: twice the approximate posterior sd around the mode."""
    free = spec.free
    chol = np.linalg.cholesky(cov)
    for _ in range(max_tries):
        beta = mode.copy()
        beta[free] += 2.0 * chol @ rng.standard_normal(chol.shape[0])
        lam1 = lam2 = None
        sigma2 = tau2 = np.nan
        if spec.latent:
            c = spec.lambda_proposal_chol()
            z = rng.standard_normal((len(c), 2))
            lam1 = np.abs(spec.exposure.mean + 2.0 * c[:, 0] * z[:, 0])
            lam2 = np.abs(spec.exposure.var + 2.0 * (c[:, 1] * z[:, 0] + c[:, 2] * z[:, 1])) + 1e-9
            sigma2 = float(np.var(lam1)) * math.exp(rng.normal())
            tau2 = float(np.var(lam2)) * math.exp(rng.normal()) + 1e-9
        if spec.latent and not (sigma2 > 0 and tau2 > 0):
            continue
        state = ChainState.create(spec, beta, lam1, lam2, sigma2, tau2)
        if np.isfinite(log_posterior(spec, state)):
            return state
    raise SamplerError("could not find a start with finite posterior density")


# --------------------------------------------------------------------------- draws


@dataclass
class PosteriorDraws:
    """Thinned draws from all chains; arrays are indexed ``[chain, draw, ...]``."""

    model: str
    param_names: list[str]
    beta: np.ndarray
    deviance: np.ndarray
    sigma2: np.ndarray | None = None
    tau2: np.ndarray | None = None
    lambda1: np.ndarray | None = None
    lambda2: np.ndarray | None = None
    lambda_dates: pd.DatetimeIndex | None = None
    acceptance: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.beta.shape[0]

    @property
    def n_draws(self) -> int:
        return self.beta.shape[1]

    @property
    def gamma(self) -> np.ndarray:
        return self.beta[..., 0]

    @property
    def alpha(self) -> np.ndarray:
        return self.beta[..., 1:]

    def scalar_params(self) -> dict[str, np.ndarray]:
        out = {name: self.beta[..., j] for j, name in enumerate(self.param_names)}
        if self.sigma2 is not None:
            out["sigma2"] = self.sigma2
        if self.tau2 is not None:
            out["tau2"] = self.tau2
        return out

    def flat(self, name: str) -> np.ndarray:
        return self.scalar_params()[name].reshape(-1)


def _adapt_cov(history: np.ndarray, d: int) -> np.ndarray:
    cov = np.cov(history, rowvar=False).reshape(d, d)
    cov = cov * (2.38**2 / d) + np.eye(d) * 1e-12 * (np.trace(cov) / d + 1e-300)
    return np.linalg.cholesky(cov)


# RW-MH target for the regression block; the last quarter of burn-in only rescales.
BETA_TARGET = 0.3


def run_chain(spec: ModelSpec, burn_in: int, iterations: int, thin: int, rng, chain: int = 0, n_chains: int = 2):
    """Run one chain; returns a dict of stored arrays and acceptance rates."""
    free = spec.free
    d = int(free.sum())
    exposure_term = spec.exposure.mean[spec.exp_index] if spec.latent else spec.fixed_exposure
    mode, cov = poisson_mode(spec, exposure_term)
    state = _initial_state(spec, rng, mode, cov, chain, n_chains)

    base_chol = np.linalg.cholesky(cov * (2.38**2 / max(d, 1))) if d else np.zeros((0, 0))
    log_s = 0.0
    lam_chol = spec.lambda_proposal_chol() if spec.latent else None
    n_exp = len(spec.exposure) if spec.latent else 0
    lam_log_scale = np.full(n_exp, math.log(1.5))
    tau_step = 0.3
    tau_batch = 0

    n_keep = iterations // thin
    keep_beta = np.empty((n_keep, spec.n_params))
    keep_dev = np.empty(n_keep)
    keep_s2 = np.empty(n_keep) if spec.latent else None
    keep_t2 = np.empty(n_keep) if spec.latent else None
    keep_l1 = np.empty((n_keep, n_exp)) if spec.latent else None
    keep_l2 = np.empty((n_keep, n_exp)) if spec.latent else None

    history = np.empty((max(burn_in, 1), d))
    acc_beta = 0
    batch_beta = 0
    lam_batch = np.zeros(n_exp)
    acc_lam = 0.0
    acc_tau = 0
    batch = 50
    chol = base_chol
    total = burn_in + iterations
    const = float(np.sum(spec._lgy))
    for it in range(total):
        burning = it < burn_in
        ok = update_beta_block(spec, state, chol, rng) if d else True
        if spec.latent:
            acc = update_lambda_blocks(spec, state, lam_chol, np.exp(lam_log_scale), rng)
            state.sigma2 = update_variance_gibbs(state.lam1, spec.epsilon, spec.xi, rng)
            t_ok = update_tau2(spec, state, tau_step, rng)
        if burning:
            history[it] = state.beta[free]
            batch_beta += ok
            if spec.latent:
                lam_batch += acc
                tau_batch += t_ok
            if (it + 1) % batch == 0:
                k = (it + 1) // batch
                step = min(1.0, 3.0 / math.sqrt(k))
                log_s += step * (batch_beta / batch - BETA_TARGET)
                batch_beta = 0
                if d and 500 <= it + 1 <= 0.75 * burn_in and (it + 1) % 200 == 0:
                    start = (it + 1) // 2
                    try:
                        base_chol = _adapt_cov(history[start : it + 1], d)
                    except np.linalg.LinAlgError:
                        pass
                chol = math.exp(log_s) * base_chol
                if spec.latent:
                    lam_log_scale += step * (lam_batch / batch - 0.35)
                    lam_batch[:] = 0
                    tau_step *= math.exp(step * (tau_batch / batch - 0.44))
                    tau_batch = 0
        else:
            acc_beta += ok
            if spec.latent:
                acc_lam += acc.mean()
                acc_tau += t_ok
            j = it - burn_in
            if (j + 1) % thin == 0:
                s = j // thin
                keep_beta[s] = state.beta
                keep_dev[s] = -2.0 * (float(np.sum(state.terms)) - const)
                if spec.latent:
                    keep_s2[s] = state.sigma2
                    keep_t2[s] = state.tau2
                    keep_l1[s] = state.lam1
                    keep_l2[s] = state.lam2
    rates = {"beta": acc_beta / iterations}
    if spec.latent:
        rates["lambda"] = acc_lam / iterations
        rates["tau2"] = acc_tau / iterations
    return dict(beta=keep_beta, deviance=keep_dev, sigma2=keep_s2, tau2=keep_t2, lambda1=keep_l1, lambda2=keep_l2, rates=rates)


def _chain_worker(args):
    spec, burn_in, iterations, thin, seed_seq, chain, n_chains, runner = args
    return runner(spec, burn_in, iterations, thin, np.random.default_rng(seed_seq), chain, n_chains)


def _collect(spec, results, model, names, meta, lambda_dates):
    stack = lambda key: None if results[0][key] is None else np.stack([r[key] for r in results])  # noqa: E731
    acceptance = {k: [r["rates"][k] for r in results] for k in results[0]["rates"]}
    return PosteriorDraws(
        model=model,
        param_names=names,
        beta=stack("beta"),
        deviance=stack("deviance"),
        sigma2=stack("sigma2"),
        tau2=stack("tau2"),
        lambda1=stack("lambda1"),
        lambda2=stack("lambda2"),
        lambda_dates=lambda_dates,
        acceptance=acceptance,
        meta=meta,
    )


def _run_all(spec, runner, chains, burn_in, iterations, thin, seed, n_jobs, model_label):
    if chains < 2:
        raise ValueError("at least two chains are required")
    seqs = np.random.SeedSequence(seed).spawn(chains)
    jobs = [(spec, burn_in, iterations, thin, s, c, chains, runner) for c, s in enumerate(seqs)]
    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_chain_worker, jobs))
    else:
        results = [_chain_worker(j) for j in jobs]
    meta = dict(seed=seed, chains=chains, burn_in=burn_in, iterations=iterations, thin=thin, lag=spec.lag)
    lambda_dates = spec.exposure.dates if spec.latent else (spec.dates if model_label == "holloman" else None)
    return _collect(spec, results, model_label, spec.param_names, meta, lambda_dates)


def run_chains(
    spec: ModelSpec,
    chains: int = 2,
    burn_in: int = 20_000,
    iterations: int = 250_000,
    thin: int = 25,
    seed: int = 0,
    n_jobs: int = 1,
) -> PosteriorDraws:
    """Fit ``spec`` with independent chains seeded from one ``SeedSequence``.

    Chain ``c`` always receives the ``c``-th spawned seed, so results do not
    depend on ``n_jobs``.
    """
    return _run_all(spec, run_chain, chains, burn_in, iterations, thin, seed, n_jobs, spec.model)


def run_config(spec: ModelSpec, config: RunConfig, n_jobs: int = 1) -> PosteriorDraws:
    draws = run_chains(spec, config.chains, config.burn_in, config.iterations, config.thin, config.seed, n_jobs)
    draws.meta["config_digest"] = config.digest()
    return draws


# --------------------------------------------------------------------------- comparison model


def run_holloman_chain(spec: ModelSpec, burn_in, iterations, thin, rng, chain=0, n_chains=2):
    """One chain of ``ln mu_t = gamma*lambda_{t-l} + z'alpha``,
    ``lambda_t ~ N(x_t, sigma2)``, ``sigma2 ~ Uniform(0, 25)`` with ``x_t``
    the daily exposure means held in ``spec.fixed_exposure``."""
    x = spec.fixed_exposure
    n = len(x)
    free = spec.free
    d = int(free.sum())
    mode, cov = poisson_mode(spec, x)
    chol0 = np.linalg.cholesky(cov)
    lo, hi = chain * HOLLOMAN_BOUND / n_chains, (chain + 1) * HOLLOMAN_BOUND / n_chains
    sigma2 = rng.uniform(lo, hi)
    beta = mode.copy()
    beta[free] += 2.0 * chol0 @ rng.standard_normal(d)
    lam = x + math.sqrt(sigma2) * rng.standard_normal(n)

    def terms_for(gamma, zal, lam_):
        eta = gamma * lam_ + zal
        return spec.y * eta - np.exp(eta)

    zal = spec.design @ beta[1:]
    terms = terms_for(beta[0], zal, lam)
    base_chol = np.linalg.cholesky(cov * (2.38**2 / d))
    chol = base_chol
    log_s = 0.0
    lam_log_scale = np.full(n, math.log(math.sqrt(sigma2) + 1e-3))
    history = np.empty((max(burn_in, 1), d))
    n_keep = iterations // thin
    keep_beta = np.empty((n_keep, spec.n_params))
    keep_dev = np.empty(n_keep)
    keep_s2 = np.empty(n_keep)
    keep_l = np.empty((n_keep, n))
    const = float(np.sum(spec._lgy))
    batch, batch_beta, lam_batch = 50, 0, np.zeros(n)
    acc_beta = acc_lam = 0.0
    shape = 0.5 * n - 1.0

    for it in range(burn_in + iterations):
        burning = it < burn_in
        # beta block
        prop = beta.copy()
        prop[free] += chol @ rng.standard_normal(d)
        zal_p = spec.design @ prop[1:]
        terms_p = terms_for(prop[0], zal_p, lam)
        log_r = terms_p.sum() - terms.sum() + log_prior_beta(spec, prop) - log_prior_beta(spec, beta)
        ok = np.log(rng.random()) <= log_r
        if ok:
            beta, zal, terms = prop, zal_p, terms_p
        # lambda_t, one random-walk move per day
        lp = lam + np.exp(lam_log_scale) * rng.standard_normal(n)
        terms_l = terms_for(beta[0], zal, lp)
        log_r = terms_l - terms + ((lam - x) ** 2 - (lp - x) ** 2) / (2 * sigma2)
        acc = np.log(rng.random(n)) < log_r
        lam = np.where(acc, lp, lam)
        terms = np.where(acc, terms_l, terms)
        # sigma2 | lambda: IG(n/2 - 1, S/2) truncated to (0, 25)
        # P(sigma2 <= s) = Q(shape, ss / s), so invert the upper regularised gamma
        ss = 0.5 * float(np.sum((lam - x) ** 2))
        upper = gammaincc(shape, ss / HOLLOMAN_BOUND)
        if upper > 0:
            sigma2 = ss / float(gammainccinv(shape, rng.random() * upper))
        else:
            sigma2 = HOLLOMAN_BOUND * rng.random()
        sigma2 = min(max(sigma2, 1e-12), HOLLOMAN_BOUND * (1 - 1e-12))
        if burning:
            history[it] = beta[free]
            batch_beta += ok
            lam_batch += acc
            if (it + 1) % batch == 0:
                k = (it + 1) // batch
                step = min(1.0, 3.0 / math.sqrt(k))
                log_s += step * (batch_beta / batch - BETA_TARGET)
                batch_beta = 0
                if it + 1 >= 500 and (it + 1) % 200 == 0:
                    try:
                        base_chol = _adapt_cov(history[(it + 1) // 2 : it + 1], d)
                    except np.linalg.LinAlgError:
                        pass
                chol = math.exp(log_s) * base_chol
                lam_log_scale += step * (lam_batch / batch - 0.35)
                lam_batch[:] = 0
        else:
            acc_beta += ok
            acc_lam += acc.mean()
            j = it - burn_in
            if (j + 1) % thin == 0:
                s = j // thin
                keep_beta[s] = beta
                keep_dev[s] = -2.0 * (float(terms.sum()) - const)
                keep_s2[s] = sigma2
                keep_l[s] = lam
    return dict(
        beta=keep_beta,
        deviance=keep_dev,
        sigma2=keep_s2,
        tau2=None,
        lambda1=keep_l,
        lambda2=None,
        rates={"beta": acc_beta / iterations, "lambda": acc_lam / iterations},
    )


def holloman_variant(
    spec: ModelSpec, chains: int = 2, burn_in: int = 20_000, iterations: int = 250_000, thin: int = 25, seed: int = 0
) -> PosteriorDraws:
    """Fit the comparison model with a latent single daily exposure.

    ``spec`` must be a fixed-exposure spec whose exposure series is the
    daily mean personal exposure (model ii layout).  Chains start from
    disjoint strata of the Uniform(0, 25) prior for ``sigma2``.
    """
    if spec.fixed_exposure is None:
        raise ValueError("holloman_variant needs daily exposure means (a model ii spec)")
    return _run_all(spec, run_holloman_chain, chains, burn_in, iterations, thin, seed, 1, "holloman")


# --------------------------------------------------------------------------- persistence


def _lambda_eta(draws: PosteriorDraws, spec: ModelSpec, c: int, s: int):
    beta = draws.beta[c, s]
    if draws.model == "holloman":
        return beta[0] * draws.lambda1[c, s] + spec.design @ beta[1:]
    lam1 = None if draws.lambda1 is None else draws.lambda1[c, s]
    lam2 = None if draws.lambda2 is None else draws.lambda2[c, s]
    return spec.eta(beta, lam1, lam2)


def draw_means(draws: PosteriorDraws, spec: ModelSpec) -> np.ndarray:
    """Poisson means ``mu_t`` for every stored draw, shape (chains, draws, days)."""
    out = np.empty((draws.n_chains, draws.n_draws, len(spec.y)))
    for c in range(draws.n_chains):
        for s in range(draws.n_draws):
            out[c, s] = np.exp(_lambda_eta(draws, spec, c, s))
    return out


def posterior_mean_deviance(draws: PosteriorDraws, spec: ModelSpec) -> float:
    """Deviance at the posterior means of all continuous parameters."""
    beta = draws.beta.reshape(-1, draws.beta.shape[-1]).mean(axis=0)
    if draws.model == "holloman":
        lam = draws.lambda1.reshape(-1, draws.lambda1.shape[-1]).mean(axis=0)
        eta = beta[0] * lam + spec.design @ beta[1:]
        return float(-2.0 * np.sum(spec.y * eta - np.exp(eta) - spec._lgy))
    lam1 = None if draws.lambda1 is None else draws.lambda1.reshape(-1, draws.lambda1.shape[-1]).mean(axis=0)
    lam2 = None if draws.lambda2 is None else draws.lambda2.reshape(-1, draws.lambda2.shape[-1]).mean(axis=0)
    return spec.deviance(beta, lam1, lam2)


def write_draws(draws: PosteriorDraws, outdir: str | Path) -> list[Path]:
    """One CSV per chain (``iter,gamma,alpha_1..alpha_p,sigma2,tau2,deviance``),
    optional lambda tables, and a JSON sidecar with names and metadata."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    thin = draws.meta.get("thin", 1)
    burn = draws.meta.get("burn_in", 0)
    n_alpha = draws.beta.shape[-1] - 1
    written = []
    for c in range(draws.n_chains):
        iters = burn + thin * (np.arange(draws.n_draws) + 1)
        frame = pd.DataFrame({"iter": iters, "gamma": draws.beta[c, :, 0]})
        for j in range(n_alpha):
            frame[f"alpha_{j + 1}"] = draws.beta[c, :, j + 1]
        frame["sigma2"] = draws.sigma2[c] if draws.sigma2 is not None else np.nan
        frame["tau2"] = draws.tau2[c] if draws.tau2 is not None else np.nan
        frame["deviance"] = draws.deviance[c]
        path = outdir / f"draws_chain{c + 1}.csv"
        frame.to_csv(path, index=False, float_format="%.17g")
        written.append(path)
        for name in ("lambda1", "lambda2"):
            arr = getattr(draws, name)
            if arr is None:
                continue
            cols = draws.lambda_dates.strftime("%Y-%m-%d")
            lam = pd.DataFrame(arr[c], columns=cols)
            lam.insert(0, "iter", iters)
            path = outdir / f"{name}_chain{c + 1}.csv"
            lam.to_csv(path, index=False, float_format="%.17g")
            written.append(path)
    sidecar = dict(
        model=draws.model,
        param_names=draws.param_names,
        acceptance=draws.acceptance,
        meta=draws.meta,
        has_sigma2=draws.sigma2 is not None,
        has_tau2=draws.tau2 is not None,
    )
    path = outdir / "draws_meta.json"
    path.write_text(json.dumps(sidecar, indent=2, default=_json_default) + "\n")
    written.append(path)
    return written


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def read_draws(outdir: str | Path) -> PosteriorDraws:
    outdir = Path(outdir)
    side = json.loads((outdir / "draws_meta.json").read_text())
    chains = side["meta"]["chains"]
    frames = [pd.read_csv(outdir / f"draws_chain{c + 1}.csv", float_precision="round_trip") for c in range(chains)]
    beta_cols = ["gamma"] + [c for c in frames[0].columns if c.startswith("alpha_")]
    beta = np.stack([f[beta_cols].to_numpy() for f in frames])
    lam = {}
    lam_dates = None
    for name in ("lambda1", "lambda2"):
        paths = [outdir / f"{name}_chain{c + 1}.csv" for c in range(chains)]
        if all(p.exists() for p in paths):
            tabs = [pd.read_csv(p, float_precision="round_trip") for p in paths]
            lam[name] = np.stack([t.drop(columns="iter").to_numpy() for t in tabs])
            lam_dates = pd.DatetimeIndex(pd.to_datetime(tabs[0].columns[1:]))
    return PosteriorDraws(
        model=side["model"],
        param_names=side["param_names"],
        beta=beta,
        deviance=np.stack([f["deviance"].to_numpy() for f in frames]),
        sigma2=np.stack([f["sigma2"].to_numpy() for f in frames]) if side["has_sigma2"] else None,
        tau2=np.stack([f["tau2"].to_numpy() for f in frames]) if side["has_tau2"] else None,
        lambda1=lam.get("lambda1"),
        lambda2=lam.get("lambda2"),
        lambda_dates=lam_dates,
        acceptance=side["acceptance"],
        meta=side["meta"],
    )
