"""Daily top/bottom-K long-short backtest and its summary statistics.

These are the classic backtest metrics (annualized return, Sharpe ratio,
turnover, maximum drawdown) used as the reference against which the
backtest-free scores are checked. No costs, slippage or position limits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import as_matrix, freeze
from .errors import BankruptPathError, InsufficientDataError, InvalidParameterError, UndefinedMetricError

TRADING_DAYS = 252


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Daily portfolio weights; ``skipped[t]`` marks dates with fewer than ``2K`` valid assets."""

    values: np.ndarray
    k: int
    skipped: np.ndarray


@dataclass(frozen=True, eq=False)
class PortfolioSeries:
    returns: np.ndarray
    nav: np.ndarray


def build_weights(signal, k: int) -> WeightMatrix:
    """Long the ``k`` highest scores at ``+1/k``, short the ``k`` lowest at ``-1/k``.

    Ties are broken by ascending asset index: among equal scores the earlier
    asset ranks higher, so it is bought first and shorted last.
    """
    if int(k) != k or k < 1:
        raise InvalidParameterError(f"K must be a positive integer, got {k}")
    k = int(k)
    s = as_matrix(signal)
    T, N = s.shape
    weights = np.zeros((T, N))
    skipped = np.zeros(T, dtype=bool)
    index = np.arange(N)
    for t in range(T):
        valid = np.flatnonzero(~np.isnan(s[t]))
        if valid.size < 2 * k:
            skipped[t] = True
            continue
        # lexsort: last key is primary -> score descending, then asset index ascending
        order = valid[np.lexsort((index[valid], -s[t, valid]))]
        weights[t, order[:k]] = 1.0 / k
        weights[t, order[-k:]] = -1.0 / k
    return WeightMatrix(freeze(weights), k, freeze(skipped))


def portfolio_returns(weights: WeightMatrix | np.ndarray, returns) -> PortfolioSeries:
    """``r_t = w_t . y_t`` over defined returns, and ``NAV_t = prod(1 + r)``."""
    w = as_matrix(weights)
    y = as_matrix(returns)
    if w.shape != y.shape:
        raise InvalidParameterError(f"weights shape {w.shape} != returns shape {y.shape}")
    r = np.where(np.isnan(y), 0.0, w * y).sum(axis=1)
    return PortfolioSeries(freeze(r), freeze(np.cumprod(1.0 + r)))


def _series(series) -> np.ndarray:
    r = np.asarray(getattr(series, "returns", series), dtype=float)
    if r.size == 0:
        raise InsufficientDataError("empty return series")
    return r


def annualized_return(series, days: int = TRADING_DAYS) -> float:
    return float(_series(series).mean() * days)


def sharpe(series, days: int = TRADING_DAYS) -> float:
    """Annualized Sharpe ratio with a zero risk-free rate."""
    r = _series(series)
    if r.size < 2:
        raise InsufficientDataError("Sharpe ratio needs at least two returns")
    if np.ptp(r) == 0:
        raise UndefinedMetricError("Sharpe ratio is undefined for a constant return series")
    return float(r.mean() / r.std(ddof=1) * np.sqrt(days))


def turnover(weights: WeightMatrix | np.ndarray) -> float:
    """Mean L1 change of the weight vector between consecutive dates."""
    w = as_matrix(weights)
    if w.shape[0] < 2:
        raise InsufficientDataError("turnover needs at least two dates")
    return float(np.abs(np.diff(w, axis=0)).sum(axis=1).mean())


def annualized_turnover(weights: WeightMatrix | np.ndarray, days: int = TRADING_DAYS) -> float:
    return turnover(weights) * days


def max_drawdown(series) -> float:
    """Largest relative fall of NAV from its running peak (0 for a non-decreasing NAV)."""
    r = _series(series)
    nav = np.cumprod(1.0 + r)
    if (nav <= 0).any():
        raise BankruptPathError("NAV reaches zero or below; drawdown is undefined")
    peak = np.maximum.accumulate(nav)
    return float(np.max((peak - nav) / peak))


@dataclass
class BacktestResult:
    annualized_return: float
    sharpe: float | None
    turnover: float
    annualized_turnover: float
    max_drawdown: float | None
    skipped_dates: int
    errors: dict[str, str]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def run_backtest(signal, returns, k: int, days: int = TRADING_DAYS) -> tuple[BacktestResult, PortfolioSeries]:
    """All summary statistics for one signal; undefined ratios become ``None`` with an error note."""
    w = build_weights(signal, k)
    series = portfolio_returns(w, returns)
    errors: dict[str, str] = {}
    try:
        sr = sharpe(series, days)
    except (UndefinedMetricError, InsufficientDataError) as exc:
        sr = None
        errors["sharpe"] = str(exc)
    try:
        mdd = max_drawdown(series)
    except BankruptPathError as exc:
        mdd = None
        errors["max_drawdown"] = str(exc)
    to = turnover(w)
    result = BacktestResult(
        annualized_return=annualized_return(series, days),
        sharpe=sr,
        turnover=to,
        annualized_turnover=to * days,
        max_drawdown=mdd,
        skipped_dates=int(w.skipped.sum()),
        errors=errors,
    )
    return result, series
