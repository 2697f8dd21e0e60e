"""Natural cubic spline design matrices for calendar time and temperature."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class SplineBasis:
    """A natural cubic spline basis evaluated at the fitting data.

    ``center`` and ``scale`` are ``None`` until :func:`standardize` is
    applied; afterwards ``matrix`` holds the standardised columns.
    """

    knots: np.ndarray
    matrix: np.ndarray
    label: str = "x"
    center: np.ndarray | None = None
    scale: np.ndarray | None = None

    @property
    def df(self) -> int:
        return self.matrix.shape[1]

    @property
    def standardized(self) -> bool:
        return self.center is not None

    def evaluate(self, values) -> np.ndarray:
        """Basis at new ``values`` using the stored knots (and constants)."""
        raw = ns_matrix(values, self.knots)
        if self.standardized:
            return (raw - self.center) / self.scale
        return raw

    def column_names(self) -> list[str]:
        return [f"{self.label}_{j + 1}" for j in range(self.df)]


def ns_matrix(values, knots) -> np.ndarray:
    """Truncated-power form of the natural cubic spline basis, intercept excluded.

    With knots ``k_1 < ... < k_K`` (boundaries included) the columns are
    ``x`` and ``d_j(x) - d_{K-1}(x)`` for ``j = 1..K-2`` where
    ``d_j(x) = ((x-k_j)_+^3 - (x-k_K)_+^3) / (k_K - k_j)``.  Each column is
    linear outside ``[k_1, k_K]``.
    """
    x = np.asarray(values, dtype=float)
    k = np.asarray(knots, dtype=float)
    K = len(k)
    cols = [x]
    if K > 2:

        def d(j):
            return (np.maximum(x - k[j], 0) ** 3 - np.maximum(x - k[-1], 0) ** 3) / (k[-1] - k[j])

        last = d(K - 2)
        cols.extend(d(j) - last for j in range(K - 2))
    return np.column_stack(cols)


def quantile_knots(values, df: int) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    probs = np.linspace(0.0, 1.0, df + 1)
    return np.quantile(x, probs)


def natural_cubic_basis(values, df: int, label: str = "x") -> SplineBasis:
    """``df`` columns: ``df - 1`` interior knots at equally spaced quantiles."""
    if df < 1:
        raise ValueError("df must be >= 1")
    x = np.asarray(values, dtype=float)
    if np.unique(x).size < df + 2:
        raise ValueError(f"need at least {df + 2} distinct values for df={df}")
    knots = quantile_knots(x, df)
    if np.unique(knots).size != knots.size:
        raise ValueError("tied quantile knots; too few distinct values for this df")
    return SplineBasis(knots=knots, matrix=ns_matrix(x, knots), label=label)


def standardize(basis: SplineBasis) -> SplineBasis:
    """Centre and scale columns to mean 0, sd 1 (n - 1 denominator).

    Applying it to an already standardised basis leaves the values unchanged
    and keeps the original constants.
    """
    if basis.standardized:
        return basis
    center = basis.matrix.mean(axis=0)
    scale = basis.matrix.std(axis=0, ddof=1)
    if np.any(scale == 0) or not np.all(np.isfinite(scale)):
        raise ValueError("cannot standardise a constant column")
    return replace(basis, matrix=(basis.matrix - center) / scale, center=center, scale=scale)


def standardize_columns(matrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    matrix = np.asarray(matrix, dtype=float)
    center = matrix.mean(axis=0)
    scale = matrix.std(axis=0, ddof=1)
    if np.any(scale == 0):
        raise ValueError("cannot standardise a constant column")
    return (matrix - center) / scale, center, scale


def back_transform(intercept: float, coefs, center, scale) -> tuple[float, np.ndarray]:
    """Map coefficients on standardised columns to the raw-column scale."""
    coefs = np.asarray(coefs, dtype=float)
    raw = coefs / scale
    return intercept - float(np.sum(raw * center)), raw


def build_design(times, temperatures, time_df: int, temp_df: int):
    """Intercept plus standardised time and temperature splines.

    Returns the design matrix, column names and the two bases.
    """
    tb = standardize(natural_cubic_basis(times, time_df, label="time"))
    sb = standardize(natural_cubic_basis(temperatures, temp_df, label="temp"))
    n = tb.matrix.shape[0]
    design = np.column_stack([np.ones(n), tb.matrix, sb.matrix])
    names = ["intercept", *tb.column_names(), *sb.column_names()]
    return design, names, (tb, sb)


def write_basis(basis: SplineBasis, dates, path: str | Path) -> None:
    """Audit export ``date,col_1..col_df`` of the basis as fitted."""
    cols = [f"col_{j + 1}" for j in range(basis.df)]
    frame = pd.DataFrame(basis.matrix, columns=cols)
    frame.insert(0, "date", pd.DatetimeIndex(dates).strftime("%Y-%m-%d"))
    frame.to_csv(path, index=False, float_format="%.17g")
