"""Log-mean functions linking daily exposure summaries to Poisson counts.

Every function returns ``ln(mu_t)`` and broadcasts over numpy arrays.
``covars @ alpha`` may be passed in precomputed as ``zalpha``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

STRATEGIES = ("ambient-fixed", "personal-fixed", "normal-exact", "lognormal-taylor", "general-g")

# model label -> strategy
MODEL_STRATEGY = {
    "i": "ambient-fixed",
    "ii": "personal-fixed",
    "iii": "normal-exact",
    "iv": "lognormal-taylor",
}


def _zalpha(covars, alpha):
    if alpha is None:
        return np.asarray(covars, dtype=float)
    return np.asarray(covars, dtype=float) @ np.asarray(alpha, dtype=float)


def linpred_fixed(exposure, gamma, covars, alpha=None):
    """Single daily exposure value: ``x * gamma + z'alpha``."""
    return np.asarray(exposure, dtype=float) * gamma + _zalpha(covars, alpha)


def linpred_normal_exact(lambda1, lambda2, gamma, covars, alpha=None):
    """Exact log-mean for normal exposures: ``g*l1 + g^2*l2/2 + z'alpha``."""
    return gamma * np.asarray(lambda1) + 0.5 * gamma**2 * np.asarray(lambda2) + _zalpha(covars, alpha)


def linpred_lognormal_taylor(lambda1, lambda2, lambda3, gamma, covars, alpha=None):
    """Three-term expansion ``g*l1 + g^2*l2/2 + g^3*l3/6 + z'alpha``."""
    return (
        gamma * np.asarray(lambda1)
        + 0.5 * gamma**2 * np.asarray(lambda2)
        + gamma**3 * np.asarray(lambda3) / 6.0
        + _zalpha(covars, alpha)
    )


def linpred_general_g(lambda1, lambda2, lambda3, gamma, covars, alpha=None, g2=0.5, g3=1.0 / 6.0, g=None):
    """``g(gamma*l1) + gamma^2*g2*l2 + gamma^3*g3*l3 + z'alpha`` with ``g`` the identity by default."""
    u = gamma * np.asarray(lambda1, dtype=float)
    head = u if g is None else g(u)
    return head + gamma**2 * g2 * np.asarray(lambda2) + gamma**3 * g3 * np.asarray(lambda3) + _zalpha(covars, alpha)


def check_response_function(g: Callable, grid=None, tol: float = 1e-12) -> None:
    """Reject a user-supplied response function that is not increasing or has g(0) != 0.

    Boundedness and smoothness cannot be checked on a grid; callers own them.
    """
    if grid is None:
        grid = np.linspace(-5.0, 5.0, 2001)
    if abs(float(g(0.0))) > tol:
        raise ValueError("response function must satisfy g(0) = 0")
    vals = np.asarray(g(np.asarray(grid, dtype=float)), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("response function must be finite on the check grid")
    if np.any(np.diff(vals) < -tol):
        raise ValueError("response function must be monotone increasing")


@dataclass(frozen=True)
class MeanFunction:
    """One of the interchangeable mean-function strategies.

    ``offset`` returns the exposure contribution to ``ln(mu_t)``; the
    covariate part is added by the caller.
    """

    strategy: str = "lognormal-taylor"
    g2: float = 0.5
    g3: float = 1.0 / 6.0
    lag: int = 2
    g: Callable | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not (np.isfinite(self.g2) and np.isfinite(self.g3)):
            raise ValueError("g2 and g3 must be finite")
        if self.g is not None:
            check_response_function(self.g)

    @classmethod
    def for_model(cls, model: str, lag: int = 2) -> "MeanFunction":
        return cls(strategy=MODEL_STRATEGY[model], lag=lag)

    @property
    def uses_variance(self) -> bool:
        return self.strategy in ("normal-exact", "lognormal-taylor", "general-g")

    @property
    def uses_third(self) -> bool:
        return self.strategy in ("lognormal-taylor", "general-g")

    def offset(self, gamma, lambda1, lambda2=0.0, lambda3=0.0):
        if self.strategy in ("ambient-fixed", "personal-fixed"):
            return linpred_fixed(lambda1, gamma, 0.0)
        if self.strategy == "normal-exact":
            return linpred_normal_exact(lambda1, lambda2, gamma, 0.0)
        if self.strategy == "lognormal-taylor":
            return linpred_lognormal_taylor(lambda1, lambda2, lambda3, gamma, 0.0)
        return linpred_general_g(lambda1, lambda2, lambda3, gamma, 0.0, g2=self.g2, g3=self.g3, g=self.g)

    def __call__(self, gamma, covars, alpha, lambda1, lambda2=0.0, lambda3=0.0):
        return self.offset(gamma, lambda1, lambda2, lambda3) + _zalpha(covars, alpha)
