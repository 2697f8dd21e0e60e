"""Ingestion of monitor, meteorology and mortality series.

All series are indexed by calendar date so that lag alignment survives
partial years.  Missing ambient values are stored as NaN.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

MONITOR_HEADER = ["date", "site_id", "district", "pm10"]
HEALTH_HEADER = ["date", "count", "temp_mean", "temp_max", "rain", "wind", "sun"]
HEALTH_REQUIRED = 3  # date, count, temp_mean


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Site:
    site_id: str
    district: str


@dataclass
class MonitorPanel:
    """Daily ambient concentrations (ug/m3) at fixed monitoring sites."""

    sites: list[Site]
    dates: pd.DatetimeIndex
    ambient: np.ndarray  # (days, sites), NaN where missing
    parsed_rows: int = 0

    def __post_init__(self):
        self.ambient = np.asarray(self.ambient, dtype=float)
        if self.ambient.shape != (len(self.dates), len(self.sites)):
            raise DataError(
                f"ambient shape {self.ambient.shape} does not match "
                f"{len(self.dates)} dates x {len(self.sites)} sites"
            )
        _check_calendar(self.dates)
        if np.any(self.ambient[~np.isnan(self.ambient)] < 0):
            raise DataError("negative ambient concentration")

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.ambient)

    @property
    def districts(self) -> list[str]:
        return [s.district for s in self.sites]

    @property
    def shape(self) -> tuple[int, int]:
        return self.ambient.shape

    def district_series(self) -> pd.DataFrame:
        """Ambient level per exposure district (mean over the district's sites)."""
        frame = pd.DataFrame(self.ambient, index=self.dates, columns=self.districts)
        return frame.T.groupby(level=0, sort=False).mean().T


@dataclass
class HealthSeries:
    dates: pd.DatetimeIndex
    counts: np.ndarray
    temp_mean: np.ndarray
    temp_max: np.ndarray | None = None
    extra: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if np.any(self.counts < 0):
            raise DataError("negative mortality count")
        if not np.issubdtype(self.counts.dtype, np.integer):
            if np.any(self.counts != np.round(self.counts)):
                raise DataError("mortality counts must be integers")
            self.counts = self.counts.astype(np.int64)
        self.temp_mean = np.asarray(self.temp_mean, dtype=float)
        _check_calendar(self.dates)

    def __len__(self):
        return len(self.dates)

    def subset(self, dates: pd.DatetimeIndex) -> "HealthSeries":
        pos = self.dates.get_indexer(dates)
        if np.any(pos < 0):
            raise DataError("requested dates not covered by the health series")
        return HealthSeries(
            dates=self.dates[pos],
            counts=self.counts[pos],
            temp_mean=self.temp_mean[pos],
            temp_max=None if self.temp_max is None else self.temp_max[pos],
            extra={k: v[pos] for k, v in self.extra.items()},
        )


def _check_calendar(dates: pd.DatetimeIndex) -> None:
    if len(dates) == 0:
        return
    steps = np.diff(dates.values).astype("timedelta64[D]").astype(int)
    if np.any(steps <= 0):
        raise DataError("dates must be strictly increasing")
    if np.any(steps != 1):
        raise DataError("calendar has gaps")


def _parse_date(text: str, lineno: int, path) -> pd.Timestamp:
    try:
        return pd.Timestamp(text.strip()).normalize()
    except (ValueError, TypeError):
        raise DataError(f"{path}:{lineno}: malformed date {text!r}") from None


def _parse_float(text: str, lineno: int, path, name: str) -> float:
    text = text.strip()
    if text == "" or text.upper() == "NA":
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{path}:{lineno}: malformed {name} value {text!r}") from None


def load_monitor_panel(path: str | Path) -> MonitorPanel:
    """Read a long-format monitor CSV (``date,site_id,district,pm10``).

    Dates absent from the file but inside its span are inserted with every
    site marked missing.  An empty ``pm10`` field marks a single missing
    reading.
    """
    path = Path(path)
    values: dict[tuple[pd.Timestamp, str], float] = {}
    site_district: dict[str, str] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MONITOR_HEADER:
            raise DataError(f"{path}: expected header {','.join(MONITOR_HEADER)}")
        nrows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            date = _parse_date(row[0], lineno, path)
            site, district = row[1].strip(), row[2].strip()
            if not site or not district:
                raise DataError(f"{path}:{lineno}: empty site_id or district")
            value = _parse_float(row[3], lineno, path, "pm10")
            if value < 0:
                raise DataError(f"{path}:{lineno}: negative concentration {value}")
            known = site_district.setdefault(site, district)
            if known != district:
                raise DataError(
                    f"{path}:{lineno}: site {site} assigned to districts {known} and {district}"
                )
            if (date, site) in values:
                raise DataError(
                    f"{path}:{lineno}: duplicated date {date.date().isoformat()} for site {site}"
                )
            values[(date, site)] = value
            nrows += 1
    if nrows == 0:
        raise DataError(f"{path}: no data rows")

    sites = [Site(s, d) for s, d in sorted(site_district.items())]
    observed = sorted({d for d, _ in values})
    dates = pd.date_range(observed[0], observed[-1], freq="D")
    col = {s.site_id: j for j, s in enumerate(sites)}
    ambient = np.full((len(dates), len(sites)), np.nan)
    row_of = {d: i for i, d in enumerate(dates)}
    for (d, s), v in values.items():
        ambient[row_of[d], col[s]] = v
    inserted = len(dates) - len(observed)
    if inserted:
        log.warning("%s: %d missing dates inserted as missing", path, inserted)
    log.info("%s: parsed %d rows, %d days x %d sites", path, nrows, len(dates), len(sites))
    return MonitorPanel(sites=sites, dates=dates, ambient=ambient, parsed_rows=nrows)


def _fmt(value: float) -> str:
    return "" if np.isnan(value) else f"{value:.10g}"


def write_monitor_panel(panel: MonitorPanel, path: str | Path) -> None:
    """Write the canonical long-format file: rows by date, then site id."""
    order = sorted(range(len(panel.sites)), key=lambda j: panel.sites[j].site_id)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MONITOR_HEADER)
        for i, d in enumerate(panel.dates):
            iso = d.date().isoformat()
            for j in order:
                s = panel.sites[j]
                w.writerow([iso, s.site_id, s.district, _fmt(panel.ambient[i, j])])


def load_health_series(path: str | Path) -> HealthSeries:
    """Read ``date,count,temp_mean[,temp_max,rain,wind,sun]``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in (next(reader, None) or [])]
        if len(header) < HEALTH_REQUIRED or header != HEALTH_HEADER[: len(header)]:
            raise DataError(f"{path}: expected header prefix {','.join(HEALTH_HEADER)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields")
            date = _parse_date(row[0], lineno, path)
            try:
                count = int(row[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed count {row[1]!r}") from None
            if count < 0:
                raise DataError(f"{path}:{lineno}: negative count")
            rest = [_parse_float(v, lineno, path, header[k + 2]) for k, v in enumerate(row[2:])]
            rows.append((date, count, *rest))
    if not rows:
        raise DataError(f"{path}: no data rows")
    rows.sort(key=lambda r: r[0])
    dates = pd.DatetimeIndex([r[0] for r in rows])
    if dates.has_duplicates:
        dup = dates[dates.duplicated()][0].date().isoformat()
        raise DataError(f"{path}: duplicated date {dup}")
    cols = {name: np.array([r[k] for r in rows], dtype=float) for k, name in enumerate(header) if k >= 2}
    return HealthSeries(
        dates=dates,
        counts=np.array([r[1] for r in rows], dtype=np.int64),
        temp_mean=cols.pop("temp_mean"),
        temp_max=cols.pop("temp_max", None),
        extra=cols,
    )


def write_health_series(health: HealthSeries, path: str | Path) -> None:
    cols = ["temp_mean"]
    data = {"temp_mean": health.temp_mean}
    if health.temp_max is not None:
        cols.append("temp_max")
        data["temp_max"] = health.temp_max
    for name in HEALTH_HEADER[4:]:
        if name in health.extra:
            if len(cols) != HEALTH_HEADER.index(name) - 2:
                break
            cols.append(name)
            data[name] = health.extra[name]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "count", *cols])
        for i, d in enumerate(health.dates):
            w.writerow([d.date().isoformat(), int(health.counts[i]), *(_fmt(data[c][i]) for c in cols)])


def spatial_average(panel: MonitorPanel) -> pd.Series:
    """Daily mean over the sites observed that day; NaN when none are."""
    amb = panel.ambient
    n_obs = (~np.isnan(amb)).sum(axis=1)
    total = np.nansum(amb, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(n_obs > 0, total / np.maximum(n_obs, 1), np.nan)
    return pd.Series(mean, index=panel.dates, name="ambient_mean")


def apply_lag(series: pd.Series, lag: int) -> pd.Series:
    """Re-index ``series`` so the value on date t is the input value on t - lag.

    Shifting is by calendar days, not positions, so series with gaps stay
    aligned.  Dates past the end of the input calendar drop out, which
    removes the first ``lag`` days of the likelihood window.  The cumulative
    lag is kept in ``result.attrs["lag"]``.
    """
    if lag < 0:
        raise ValueError("lag must be >= 0")
    if lag >= len(series):
        raise ValueError(f"lag {lag} leaves no data in a series of length {len(series)}")
    index = pd.DatetimeIndex(series.index)
    moved = index + pd.Timedelta(days=lag)
    keep = moved <= index[-1]
    shifted = pd.Series(series.to_numpy()[keep], index=moved[keep], name=series.name)
    shifted.attrs["lag"] = series.attrs.get("lag", 0) + lag
    return shifted


def align_with_counts(exposure: pd.Series, health: HealthSeries) -> pd.DataFrame:
    """Pair a (lagged) exposure series with counts on common, non-missing dates."""
    common = exposure.index.intersection(health.dates)
    frame = pd.DataFrame(
        {
            "exposure": exposure.reindex(common).to_numpy(),
            "count": health.subset(common).counts,
        },
        index=common,
    )
    frame.attrs["lag"] = exposure.attrs.get("lag", 0)
    return frame.dropna()
