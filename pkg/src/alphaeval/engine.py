"""Evaluate alpha expressions over a :class:`~alphaeval.panel.Panel`.

Every operator works on whole ``(T, N)`` matrices at once: time runs along
axis 0, assets along axis 1. Rolling statistics use sliding-window views of
shape ``(T - d + 1, N, d)`` whose last axis is ordered oldest to newest.

Conventions for the operators whose textbook definition leaves a choice:

* a window containing any missing value produces a missing output;
* ``Std``/``Var``/``Cov``/``Corr`` use the sample divisor ``d - 1``;
* ``Skew`` is the adjusted Fisher-Pearson coefficient, ``Kurt`` the adjusted
  excess kurtosis (the estimators pandas uses for rolling windows);
* ``WMA`` weights are ``1, 2, ..., d`` from oldest to newest, normalised;
* ``EMA`` uses ``alpha = 2 / (d + 1)`` seeded with the oldest value in the window;
* ``Rank`` averages ties; ``IdxMax``/``IdxMin`` report the most recent tie;
* ``Med``/``Mad`` take the midpoint of the two central values for even windows;
* ``Slope``/``Rsquare``/``Resi`` regress on the time index ``0 .. d-1``;
* division by zero, log of non-positive numbers, fractional powers of negative
  numbers and zero-variance regressions or correlations yield missing cells.
"""

from __future__ import annotations

import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._util import freeze
from .errors import MissingFeatureError
from .expr import (
    Binary,
    Constant,
    Expr,
    Feature,
    PairRolling,
    Rolling,
    Shift,
    Unary,
    parse,
)
from .panel import Panel


@dataclass(frozen=True, eq=False)
class SignalMatrix:
    """Alpha scores aligned with the panel; ``NaN`` marks a missing cell."""

    dates: np.ndarray
    assets: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values[~np.isfinite(values)] = np.nan
        object.__setattr__(self, "values", freeze(values))


# ---------------------------------------------------------------------------
# Element-wise operators
# ---------------------------------------------------------------------------


def _log(x):
    out = np.full_like(x, np.nan)
    pos = x > 0
    out[pos] = np.log(x[pos])
    return out


def _div(x, y):
    out = x / y
    out[y == 0] = np.nan
    return out


def _compare(fn):
    def op(x, y):
        out = fn(x, y).astype(float)
        out[np.isnan(x) | np.isnan(y)] = np.nan
        return out

    return op


_UNARY: dict[str, Callable] = {
    "Abs": np.abs,
    "Sign": np.sign,
    "Log": _log,
}

_BINARY: dict[str, Callable] = {
    "Add": np.add,
    "Sub": np.subtract,
    "Mul": np.multiply,
    "Div": _div,
    "Power": np.power,
    "Greater": _compare(np.greater),
    "Less": _compare(np.less),
}


def _ref(x, d):
    out = np.full_like(x, np.nan)
    if d < x.shape[0]:
        out[d:] = x[:-d]
    return out


def _delta(x, d):
    return x - _ref(x, d)


_SHIFT: dict[str, Callable] = {"Ref": _ref, "Delta": _delta}


# ---------------------------------------------------------------------------
# Rolling operators; each maps windows (..., d) -> (...)
# ---------------------------------------------------------------------------


def _centered(w):
    return w - w.mean(axis=-1, keepdims=True)


def _constant(w):
    return w.max(axis=-1) == w.min(axis=-1)


def _moment_stats(w):
    d = w.shape[-1]
    c = _centered(w)
    m2 = (c**2).mean(axis=-1)
    return d, c, m2, _constant(w)


def _skew(w):
    d, c, m2, flat = _moment_stats(w)
    if d < 3:
        return np.full(w.shape[:-1], np.nan)
    m3 = (c**3).mean(axis=-1)
    g1 = m3 / m2**1.5
    out = g1 * np.sqrt(d * (d - 1)) / (d - 2)
    out[flat] = np.nan
    return out


def _kurt(w):
    d, c, m2, flat = _moment_stats(w)
    if d < 4:
        return np.full(w.shape[:-1], np.nan)
    m4 = (c**4).mean(axis=-1)
    g2 = m4 / m2**2 - 3.0
    out = ((d + 1) * g2 + 6.0) * (d - 1) / ((d - 2) * (d - 3))
    out[flat] = np.nan
    return out


def _sample_var(w):
    d = w.shape[-1]
    if d < 2:
        return np.full(w.shape[:-1], np.nan)
    return (_centered(w) ** 2).sum(axis=-1) / (d - 1)


def _mad(w):
    med = np.median(w, axis=-1, keepdims=True)
    return np.median(np.abs(w - med), axis=-1)


def _idx_extreme(fn):
    def op(w):
        # reversed so that position 0 is today and argmax/argmin pick the most recent tie
        return fn(w[..., ::-1], axis=-1).astype(float)

    return op


def _rank(w):
    today = w[..., -1:]
    less = (w < today).sum(axis=-1)
    equal = (w == today).sum(axis=-1)
    return less + (equal + 1) / 2.0


def _wma(w):
    d = w.shape[-1]
    weights = np.arange(1, d + 1, dtype=float)
    return w @ (weights / weights.sum())


def ema_weights(d: int) -> np.ndarray:
    """Weights (oldest first) equivalent to the recursive EMA seeded at the oldest value."""
    alpha = 2.0 / (d + 1)
    k = np.arange(d)
    weights = alpha * (1 - alpha) ** (d - 1 - k)
    weights[0] = (1 - alpha) ** (d - 1)
    return weights


def _ema(w):
    return w @ ema_weights(w.shape[-1])


def _time_regression(w):
    d = w.shape[-1]
    t = np.arange(d, dtype=float)
    tc = t - t.mean()
    stt = (tc**2).sum()
    c = _centered(w)
    stx = c @ tc
    return d, tc, stt, c, stx


def _slope(w):
    d, tc, stt, c, stx = _time_regression(w)
    if stt == 0:
        return np.full(w.shape[:-1], np.nan)
    return stx / stt


def _rsquare(w):
    d, tc, stt, c, stx = _time_regression(w)
    if stt == 0:
        return np.full(w.shape[:-1], np.nan)
    sxx = (c**2).sum(axis=-1)
    out = stx**2 / (stt * sxx)
    out[_constant(w)] = np.nan
    return out


def _resi(w):
    d, tc, stt, c, stx = _time_regression(w)
    if stt == 0:
        return np.full(w.shape[:-1], np.nan)
    # residual at the last point: (x_last - mean) - slope * (t_last - mean_t)
    return c[..., -1] - (stx / stt) * tc[-1]


_ROLLING: dict[str, Callable] = {
    "Sum": lambda w: w.sum(axis=-1),
    "Mean": lambda w: w.mean(axis=-1),
    "Std": lambda w: np.sqrt(_sample_var(w)),
    "Var": _sample_var,
    "Skew": _skew,
    "Kurt": _kurt,
    "Med": lambda w: np.median(w, axis=-1),
    "Mad": _mad,
    "Min": lambda w: w.min(axis=-1),
    "Max": lambda w: w.max(axis=-1),
    "IdxMax": _idx_extreme(np.argmax),
    "IdxMin": _idx_extreme(np.argmin),
    "Rank": _rank,
    "WMA": _wma,
    "EMA": _ema,
    "Slope": _slope,
    "Rsquare": _rsquare,
    "Resi": _resi,
}


def _cov(wx, wy):
    d = wx.shape[-1]
    if d < 2:
        return np.full(wx.shape[:-1], np.nan)
    return (_centered(wx) * _centered(wy)).sum(axis=-1) / (d - 1)


def _corr(wx, wy):
    cx, cy = _centered(wx), _centered(wy)
    sxy = (cx * cy).sum(axis=-1)
    sxx = (cx**2).sum(axis=-1)
    syy = (cy**2).sum(axis=-1)
    out = sxy / np.sqrt(sxx * syy)
    out[_constant(wx) | _constant(wy)] = np.nan
    return out


_PAIR: dict[str, Callable] = {"Corr": _corr, "Cov": _cov}


def _rolling(fn, d: int, *series: np.ndarray) -> np.ndarray:
    out = np.full(series[0].shape, np.nan)
    T = series[0].shape[0]
    if d > T:
        return out
    windows = [sliding_window_view(s, d, axis=0) for s in series]
    bad = np.zeros(windows[0].shape[:-1], dtype=bool)
    for w in windows:
        bad |= np.isnan(w).any(axis=-1)
    values = fn(*windows)
    values = np.where(bad, np.nan, values)
    out[d - 1 :] = values
    return out


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


class _Evaluator:
    def __init__(self, panel: Panel):
        self.panel = panel
        self.cache: dict[Expr, np.ndarray] = {}

    def __call__(self, node: Expr) -> np.ndarray:
        hit = self.cache.get(node)
        if hit is None:
            hit = self._compute(node)
            hit[~np.isfinite(hit)] = np.nan
            self.cache[node] = hit
        return hit

    def _compute(self, node: Expr) -> np.ndarray:
        shape = (self.panel.n_dates, self.panel.n_assets)
        if isinstance(node, Feature):
            if not self.panel.has_feature(node.name):
                raise MissingFeatureError(f"panel has no feature {node.name!r}")
            return np.array(self.panel.feature(node.name), dtype=float)
        if isinstance(node, Constant):
            return np.full(shape, float(node.value))
        if isinstance(node, Unary):
            return _UNARY[node.op](self(node.x))
        if isinstance(node, Binary):
            return _BINARY[node.op](self(node.x), self(node.y))
        if isinstance(node, Shift):
            return _SHIFT[node.op](self(node.x), node.periods)
        if isinstance(node, Rolling):
            return _rolling(_ROLLING[node.op], node.window, self(node.x))
        if isinstance(node, PairRolling):
            return _rolling(_PAIR[node.op], node.window, self(node.x), self(node.y))
        raise TypeError(f"not an expression node: {node!r}")


def evaluate(expr: Expr | str, panel: Panel) -> SignalMatrix:
    """Compute the ``T x N`` score matrix of one alpha."""
    if isinstance(expr, str):
        expr = parse(expr)
    with np.errstate(all="ignore"):
        values = _Evaluator(panel)(expr)
    return SignalMatrix(panel.dates, panel.assets, values)


# ---------------------------------------------------------------------------
# Parallel execution
# ---------------------------------------------------------------------------

_WORKER_STATE: dict = {}


def _init_worker(initializer, initargs):
    _WORKER_STATE.clear()
    if initializer is not None:
        initializer(*initargs)


def _mp_context():
    methods = multiprocessing.get_all_start_methods()
    return multiprocessing.get_context("fork" if "fork" in methods else None)


def parallel_map(
    fn: Callable,
    items: Iterable,
    workers: int = 1,
    initializer: Callable | None = None,
    initargs: tuple = (),
) -> list:
    """Order-preserving map over a process pool.

    ``initializer(*initargs)`` runs once per worker (and once in-process when
    ``workers <= 1``) so large read-only inputs are shipped once rather than per
    task. ``fn`` must be a module-level function.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        _init_worker(initializer, initargs)
        try:
            return [fn(item) for item in items]
        finally:
            _WORKER_STATE.clear()
    chunksize = max(1, len(items) // (workers * 4))
    with ProcessPoolExecutor(
        max_workers=workers,
        mp_context=_mp_context(),
        initializer=_init_worker,
        initargs=(initializer, initargs),
    ) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))


def worker_state() -> dict:
    """Per-process scratch space filled by a ``parallel_map`` initializer."""
    return _WORKER_STATE


def _set_panel(panel: Panel):
    _WORKER_STATE["panel"] = panel


def _evaluate_in_worker(expr):
    return evaluate(expr, _WORKER_STATE["panel"]).values


def evaluate_many(exprs: Sequence[Expr | str], panel: Panel, workers: int = 1) -> list[SignalMatrix]:
    """Evaluate several alphas; output order and values do not depend on ``workers``."""
    values = parallel_map(_evaluate_in_worker, exprs, workers, _set_panel, (panel,))
    return [SignalMatrix(panel.dates, panel.assets, v) for v in values]
