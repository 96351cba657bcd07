"""Synthetic market panels and random baseline alphas.

Prices follow a one-factor geometric random walk and are normalised to start
near 1, the way qlib stores adjusted prices, so that perturbation noise
expressed in return units is on the same scale as the prices it hits.

A planted signal can be switched on: tomorrow's idiosyncratic return loads on
today's cross-sectionally standardised intraday reversal ``(open - close) /
open``, with ``signal_strength`` the correlation between the two. The alpha
:data:`PLANTED_ALPHA` reads that signal back out of the features.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ._util import derive_seed
from .errors import InvalidParameterError
from .expr import (
    BINARY,
    OPERATORS,
    PAIR_ROLLING,
    ROLLING,
    SHIFT,
    UNARY,
    Binary,
    Constant,
    Expr,
    Feature,
    PairRolling,
    Rolling,
    Shift,
    Unary,
    to_string,
)
from .panel import FEATURES, Panel

PLANTED_ALPHA = "Div(Sub(open, close), open)"

MARKET_VOL = 0.01


def _zscore_rows(x: np.ndarray) -> np.ndarray:
    sd = x.std(axis=1, keepdims=True)
    sd[sd == 0] = 1.0
    return (x - x.mean(axis=1, keepdims=True)) / sd


def synthetic_panel(
    n_dates: int,
    n_assets: int,
    seed: int = 0,
    signal_strength: float = 0.0,
    start: str = "2020-01-01",
) -> Panel:
    """Generate a dense OHLCV panel with all ten standard features.

    Per asset: market beta in [0.5, 1.5], idiosyncratic daily vol in
    [1%, 3%], a log-volume level, and a constant adjustment factor. Volume
    rises with the size of the day's move. ``high``/``low`` bracket
    ``open``/``close`` and ``vwap`` lies inside ``[low, high]``.
    """
    if n_dates < 2 or n_assets < 2:
        raise InvalidParameterError("a synthetic panel needs at least 2 dates and 2 assets")
    if not 0.0 <= signal_strength < 1.0:
        raise InvalidParameterError(f"signal_strength must lie in [0, 1), got {signal_strength}")
    rng = np.random.default_rng(derive_seed(seed, "synth"))
    T, N = n_dates, n_assets

    beta = rng.uniform(0.5, 1.5, N)
    idio = rng.uniform(0.01, 0.03, N)
    vol_level = rng.normal(13.0, 1.0, N)
    adj = np.round(rng.uniform(0.5, 3.0, N), 4)

    market = rng.normal(0.0, MARKET_VOL, T)
    eps = rng.standard_normal((T, N))
    intraday = rng.standard_normal((T, N)) * (0.6 * idio)
    s = signal_strength

    log_ret = np.zeros((T, N))
    for t in range(1, T):
        planted = _zscore_rows(-intraday[t - 1][None, :])[0]
        idio_part = s * planted + np.sqrt(1.0 - s * s) * eps[t]
        log_ret[t] = beta * market[t] + idio * idio_part - 0.5 * (idio**2 + (beta * MARKET_VOL) ** 2)

    close = np.exp(rng.normal(0.0, 0.1, N) + np.cumsum(log_ret, axis=0))
    prev_close = np.vstack([close[:1] * np.exp(-intraday[:1]), close[:-1]])
    # close / open = exp(intraday); the overnight gap absorbs the rest of the day's return
    open_ = close * np.exp(-intraday)
    top = np.maximum(open_, close)
    bottom = np.minimum(open_, close)
    high = top * (1.0 + np.abs(rng.normal(0.0, 0.3, (T, N))) * idio)
    low = bottom * (1.0 - np.abs(rng.normal(0.0, 0.3, (T, N))) * idio)
    mix = rng.dirichlet(np.ones(4), size=(T, N))
    vwap = mix[..., 0] * open_ + mix[..., 1] * high + mix[..., 2] * low + mix[..., 3] * close
    vwap = np.clip(vwap, low, high)

    shock = np.abs(np.log(close / prev_close)) / idio
    log_volume = vol_level + 0.3 * shock + rng.normal(0.0, 0.3, (T, N))
    volume = np.round(np.exp(log_volume))
    amount = volume * vwap
    change = close / prev_close - 1.0
    change[0] = np.nan

    layers = {
        "open": open_,
        "high": high,
        "low": low,
        "close": close,
        "adjclose": close,
        "volume": volume,
        "amount": amount,
        "vwap": vwap,
        "change": change,
        "factor": np.broadcast_to(adj, (T, N)),
    }
    values = np.stack([layers[f] for f in FEATURES], axis=-1)
    dates = np.busday_offset(np.datetime64(start, "D"), np.arange(T), roll="forward")
    assets = tuple(f"S{n:04d}" for n in range(N))
    return Panel(dates, assets, FEATURES, values)


# ---------------------------------------------------------------------------
# Random alphas
# ---------------------------------------------------------------------------

WINDOWS = (2, 3, 5, 10, 20, 30)
PERIODS = (1, 2, 3, 5, 10, 20)
CONSTANTS = (-1.0, 0.5, 1.0, 2.0, 0.01)
EXPONENTS = (2.0, 3.0, 0.5, -1.0)


class AlphaSampler:
    """Draws expressions uniformly over operators, with bounded nesting depth."""

    def __init__(
        self,
        rng: np.random.Generator,
        features: Sequence[str] = FEATURES,
        operators: Sequence[str] | None = None,
        leaf_prob: float = 0.3,
        constant_prob: float = 0.15,
    ):
        self.rng = rng
        self.features = list(features)
        self.operators = list(operators or OPERATORS)
        self.leaf_prob = leaf_prob
        self.constant_prob = constant_prob

    def _choice(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def _window(self, op: str) -> int:
        info = OPERATORS[op]
        if info.kind == SHIFT:
            return self._choice(PERIODS)
        return self._choice([w for w in WINDOWS if w >= info.min_window])

    def leaf(self) -> Expr:
        return Feature(self._choice(self.features))

    def sample(self, max_depth: int, root: bool = True) -> Expr:
        if max_depth <= 0 or (not root and self.rng.random() < self.leaf_prob):
            return self.leaf()
        op = self._choice(self.operators)
        kind = OPERATORS[op].kind
        sub = max_depth - 1
        if kind == UNARY:
            return Unary(op, self.sample(sub, False))
        if kind == BINARY:
            x = self.sample(sub, False)
            if op == "Power":
                return Binary(op, x, Constant(self._choice(EXPONENTS)))
            if self.rng.random() < self.constant_prob:
                return Binary(op, x, Constant(self._choice(CONSTANTS)))
            return Binary(op, x, self.sample(sub, False))
        if kind == SHIFT:
            return Shift(op, self.sample(sub, False), self._window(op))
        if kind == ROLLING:
            return Rolling(op, self.sample(sub, False), self._window(op))
        if kind == PAIR_ROLLING:
            return PairRolling(op, self.sample(sub, False), self.sample(sub, False), self._window(op))
        raise AssertionError(kind)


def random_alphas(
    count: int,
    max_depth: int = 3,
    seed: int = 0,
    features: Sequence[str] = FEATURES,
) -> list[str]:
    """``count`` random expressions of depth 1..``max_depth`` over ``features``."""
    if count < 0 or max_depth < 1:
        raise InvalidParameterError("count must be >= 0 and max_depth >= 1")
    sampler = AlphaSampler(np.random.default_rng(derive_seed(seed, "random-alphas")), features)
    return [to_string(sampler.sample(max_depth)) for _ in range(count)]
