"""Panel data: CSV ingestion, forward returns, index volatility and noise injection.

A :class:`Panel` is a dense ``T x N x F`` float tensor indexed by trading date,
asset and feature name. Missing cells are ``NaN`` and every downstream
computation propagates them.
"""

from __future__ import annotations

import csv
import datetime as _dt
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ._util import derive_seed, freeze
from .errors import (
    DuplicateKeyError,
    InsufficientDataError,
    InvalidParameterError,
    MissingFeatureError,
    PanelFormatError,
    UnknownFeatureError,
)

FEATURES: tuple[str, ...] = (
    "open",
    "high",
    "low",
    "close",
    "adjclose",
    "volume",
    "amount",
    "vwap",
    "change",
    "factor",
)

GAUSSIAN = "gaussian"
STUDENT_T = "student_t"


@dataclass(frozen=True, eq=False)
class Panel:
    """Immutable feature tensor.

    Attributes:
        dates: ``datetime64[D]`` array of length T, strictly increasing.
        assets: asset identifiers, length N, unique.
        features: feature names, length F, unique.
        values: float array of shape ``(T, N, F)``; ``NaN`` marks a missing cell.
    """

    dates: np.ndarray
    assets: tuple[str, ...]
    features: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        values = np.array(self.values, dtype=float, copy=True)
        assets = tuple(str(a) for a in self.assets)
        features = tuple(str(f) for f in self.features)
        if values.shape != (len(dates), len(assets), len(features)):
            raise InvalidParameterError(
                f"values shape {values.shape} does not match "
                f"(T={len(dates)}, N={len(assets)}, F={len(features)})"
            )
        if len(dates) > 1 and not np.all(dates[1:] > dates[:-1]):
            raise InvalidParameterError("dates must be strictly increasing")
        if len(set(assets)) != len(assets):
            raise InvalidParameterError("asset identifiers must be unique")
        if len(set(features)) != len(features):
            raise InvalidParameterError("feature names must be unique")
        values[~np.isfinite(values)] = np.nan
        object.__setattr__(self, "dates", freeze(dates))
        object.__setattr__(self, "assets", assets)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "values", freeze(values))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def n_dates(self) -> int:
        return self.values.shape[0]

    @property
    def n_assets(self) -> int:
        return self.values.shape[1]

    def has_feature(self, name: str) -> bool:
        return name in self.features

    def feature(self, name: str) -> np.ndarray:
        """Read-only ``(T, N)`` view of one feature."""
        try:
            idx = self.features.index(name)
        except ValueError:
            raise MissingFeatureError(f"panel has no feature {name!r}") from None
        return self.values[:, :, idx]

    def with_values(self, values: np.ndarray) -> "Panel":
        return replace(self, values=values)


@dataclass(frozen=True, eq=False)
class ReturnMatrix:
    """Forward returns over ``horizon`` days, shape ``(T, N)``."""

    dates: np.ndarray
    assets: tuple[str, ...]
    horizon: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", freeze(np.array(self.values, dtype=float)))


@dataclass(frozen=True)
class NoiseSpec:
    """Perturbation family, target standard deviation and seed."""

    family: str
    sigma: float
    nu: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in (GAUSSIAN, STUDENT_T):
            raise InvalidParameterError(f"unknown noise family {self.family!r}")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise InvalidParameterError(f"sigma must be a finite non-negative number, got {self.sigma}")
        if self.family == STUDENT_T and not self.nu > 2:
            raise InvalidParameterError(
                f"Student-t noise needs nu > 2 for a finite standard deviation, got {self.nu}"
            )


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


def load_panel(path: str | Path, allow_extra_features: bool = False) -> Panel:
    """Read a long-format ``date,symbol,<feature>...`` CSV into a :class:`Panel`.

    Absent ``(date, symbol)`` pairs and empty fields become missing cells. Dates
    are sorted ascending; assets keep their order of first appearance.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelFormatError("empty file", line=1) from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[0] != "date" or header[1] != "symbol":
            raise PanelFormatError("header must start with 'date,symbol' and name at least one feature", line=1)
        features = header[2:]
        if len(set(features)) != len(features):
            raise PanelFormatError("duplicate feature column", line=1)
        unknown = [f for f in features if f not in FEATURES]
        if unknown and not allow_extra_features:
            raise UnknownFeatureError(
                f"unknown feature column(s) {unknown}; pass allow_extra_features to accept them"
            )

        rows: dict[tuple[_dt.date, str], list[float]] = {}
        asset_order: dict[str, None] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise PanelFormatError(f"expected {len(header)} fields, got {len(row)}", line=line_no)
            try:
                date = _dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise PanelFormatError(f"bad date {row[0]!r}", line=line_no) from None
            symbol = row[1].strip()
            if not symbol:
                raise PanelFormatError("empty symbol", line=line_no)
            cells = []
            for name, cell in zip(features, row[2:]):
                cell = cell.strip()
                if not cell:
                    cells.append(math.nan)
                    continue
                try:
                    cells.append(float(cell))
                except ValueError:
                    raise PanelFormatError(f"bad number {cell!r} in column {name!r}", line=line_no) from None
            key = (date, symbol)
            if key in rows:
                raise DuplicateKeyError(f"duplicate row for ({date}, {symbol})", line=line_no)
            rows[key] = cells
            asset_order.setdefault(symbol)

    dates = sorted({d for d, _ in rows})
    assets = list(asset_order)
    date_idx = {d: i for i, d in enumerate(dates)}
    asset_idx = {a: i for i, a in enumerate(assets)}
    values = np.full((len(dates), len(assets), len(features)), np.nan)
    for (date, symbol), cells in rows.items():
        values[date_idx[date], asset_idx[symbol]] = cells
    return Panel(np.array(dates, dtype="datetime64[D]"), tuple(assets), tuple(features), values)


def write_panel(panel: Panel, path: str | Path) -> None:
    """Write ``panel`` as long-format CSV. Floats use ``repr`` so values round-trip exactly."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "symbol", *panel.features])
        for t, date in enumerate(panel.dates):
            day = str(date)
            for n, asset in enumerate(panel.assets):
                cells = panel.values[t, n]
                if np.isnan(cells).all():
                    continue
                writer.writerow([day, asset, *("" if np.isnan(v) else repr(float(v)) for v in cells)])


# ---------------------------------------------------------------------------
# Returns and volatility
# ---------------------------------------------------------------------------


def compute_returns(panel: Panel, horizon: int = 1) -> ReturnMatrix:
    """Forward simple return ``(close[t+h] - close[t]) / close[t]``; last ``h`` rows missing."""
    if int(horizon) != horizon or horizon < 1:
        raise InvalidParameterError(f"horizon must be a positive integer, got {horizon}")
    horizon = int(horizon)
    close = panel.feature("close")
    out = np.full(close.shape, np.nan)
    if horizon < close.shape[0]:
        base = close[:-horizon]
        with np.errstate(divide="ignore", invalid="ignore"):
            ret = (close[horizon:] - base) / base
        ret[base == 0] = np.nan
        out[:-horizon] = ret
    out[~np.isfinite(out)] = np.nan
    return ReturnMatrix(panel.dates, panel.assets, horizon, out)


def index_volatility(returns: ReturnMatrix | np.ndarray) -> float:
    """Sample std of the equal-weight cross-sectional mean return (a proxy market index)."""
    values = np.asarray(getattr(returns, "values", returns), dtype=float)
    usable = ~np.isnan(values).all(axis=1)
    if usable.sum() < 2:
        raise InsufficientDataError("index volatility needs at least two dates with a defined return")
    index = np.nanmean(values[usable], axis=1)
    if np.ptp(index) == 0:
        return 0.0
    return float(np.std(index, ddof=1))


# ---------------------------------------------------------------------------
# Perturbation
# ---------------------------------------------------------------------------


def noise_specs(sigma: float, nu: float = 3.0, seed: int = 0) -> list[NoiseSpec]:
    """The Gaussian and rescaled Student-t specs used for robustness scoring."""
    return [
        NoiseSpec(GAUSSIAN, sigma, nu, derive_seed(seed, GAUSSIAN)),
        NoiseSpec(STUDENT_T, sigma, nu, derive_seed(seed, STUDENT_T)),
    ]


def draw_noise(spec: NoiseSpec, size: int | Sequence[int]) -> np.ndarray:
    """i.i.d. draws with standard deviation ``spec.sigma``."""
    rng = np.random.default_rng(spec.seed)
    if spec.family == GAUSSIAN:
        return rng.normal(0.0, spec.sigma, size=size)
    scale = spec.sigma / math.sqrt(spec.nu / (spec.nu - 2.0))
    return rng.standard_t(spec.nu, size=size) * scale


def perturb(panel: Panel, spec: NoiseSpec) -> Panel:
    """Return ``X + eps`` with i.i.d. noise on every numeric cell; missing cells stay missing."""
    if spec.sigma == 0:
        return panel
    noisy = panel.values + draw_noise(spec, panel.values.shape)
    return panel.with_values(noisy)
