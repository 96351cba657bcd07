"""Row-wise (per-date) correlation kernels with missing-value masks."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def joint_mask(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Blank out cells where either operand is missing."""
    bad = np.isnan(x) | np.isnan(y)
    x = np.where(bad, np.nan, x)
    y = np.where(bad, np.nan, y)
    return x, y


def rank_rows(x: np.ndarray) -> np.ndarray:
    """Average ranks (1 = lowest) within each row, ignoring missing cells."""
    x = np.atleast_2d(x)
    if x.shape[1] == 0:
        return x.copy()
    return rankdata(x, axis=1, nan_policy="omit")


def row_pearson(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pearson correlation of each row pair over jointly valid cells.

    Rows with fewer than two valid pairs or a constant operand give ``NaN``.
    """
    x, y = joint_mask(np.atleast_2d(x).astype(float), np.atleast_2d(y).astype(float))
    valid = ~np.isnan(x)
    count = valid.sum(axis=1)
    out = np.full(x.shape[0], np.nan)
    usable = count >= 2
    if not usable.any():
        return out
    x, y, valid = x[usable], y[usable], valid[usable]
    with np.errstate(invalid="ignore", divide="ignore"):
        cx = x - np.nanmean(x, axis=1, keepdims=True)
        cy = y - np.nanmean(y, axis=1, keepdims=True)
        sxy = np.nansum(cx * cy, axis=1)
        sxx = np.nansum(cx**2, axis=1)
        syy = np.nansum(cy**2, axis=1)
        r = sxy / np.sqrt(sxx * syy)
    flat = (np.nanmax(x, axis=1) == np.nanmin(x, axis=1)) | (np.nanmax(y, axis=1) == np.nanmin(y, axis=1))
    r[flat] = np.nan
    out[usable] = r
    return out


def row_spearman(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Spearman correlation per row: Pearson of average ranks over jointly valid cells."""
    x, y = joint_mask(np.atleast_2d(x).astype(float), np.atleast_2d(y).astype(float))
    return row_pearson(rank_rows(x), rank_rows(y))


def zscore_rows(x: np.ndarray, ddof: int = 0) -> np.ndarray:
    """Standardise each row over its valid cells; rows with < 2 valid cells or zero spread become missing."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.full(x.shape, np.nan)
    valid = ~np.isnan(x)
    count = valid.sum(axis=1)
    usable = count >= 2
    if not usable.any():
        return out
    xu = x[usable]
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = np.nanmean(xu, axis=1, keepdims=True)
        sd = np.nanstd(xu, axis=1, ddof=ddof, keepdims=True)
        z = (xu - mu) / sd
    flat = np.nanmax(xu, axis=1) == np.nanmin(xu, axis=1)
    z[flat] = np.nan
    out[usable] = z
    return out
