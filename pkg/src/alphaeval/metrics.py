"""The five evaluation dimensions: predictive power, stability, robustness and diversity.

(The fifth, financial logic, lives in :mod:`alphaeval.logic`.)

All per-date statistics are cross-sectional: on each date the alpha scores
and forward returns of the assets that are jointly present are compared, and
dates on which that comparison is undefined are skipped.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _stats
from ._util import as_matrix, derive_seed
from .engine import SignalMatrix, evaluate, parallel_map, worker_state
from .errors import (
    AlphaEvalError,
    DegenerateCovarianceError,
    InsufficientDataError,
    InvalidParameterError,
    UndefinedMetricError,
)
from .expr import Expr, is_valid, lookback, parse, validate
from .panel import GAUSSIAN, STUDENT_T, NoiseSpec, Panel, ReturnMatrix, noise_specs, perturb

EIGEN_TOLERANCE = 1e-12


# ---------------------------------------------------------------------------
# Predictive power
# ---------------------------------------------------------------------------


def daily_ic(signal, returns) -> np.ndarray:
    """Per-date Pearson correlation between scores and forward returns (``NaN`` = skipped)."""
    s, y = as_matrix(signal), as_matrix(returns)
    if s.shape != y.shape:
        raise InvalidParameterError(f"signal shape {s.shape} != returns shape {y.shape}")
    return _stats.row_pearson(s, y)


def daily_rank_ic(signal, returns) -> np.ndarray:
    """Per-date Spearman correlation (average ranks for ties)."""
    s, y = as_matrix(signal), as_matrix(returns)
    if s.shape != y.shape:
        raise InvalidParameterError(f"signal shape {s.shape} != returns shape {y.shape}")
    return _stats.row_spearman(s, y)


def _mean_usable(series: np.ndarray, what: str) -> float:
    usable = series[~np.isnan(series)]
    if usable.size == 0:
        raise InsufficientDataError(f"{what}: no date has two valid, non-constant observations")
    return float(usable.mean())


def ic(signal, returns) -> float:
    return _mean_usable(daily_ic(signal, returns), "IC")


def rank_ic(signal, returns) -> float:
    return _mean_usable(daily_rank_ic(signal, returns), "RankIC")


def icir(per_date_ics: Sequence[float]) -> float:
    """Mean over sample standard deviation of a per-date IC series (missing dates dropped)."""
    values = np.asarray(per_date_ics, dtype=float)
    values = values[~np.isnan(values)]
    if values.size < 2:
        raise InsufficientDataError("ICIR needs at least two dates")
    if np.ptp(values) == 0:
        raise UndefinedMetricError("ICIR is undefined for a constant IC series")
    return float(values.mean() / values.std(ddof=1))


def _check_beta(beta: float) -> None:
    if not 0.0 <= beta <= 1.0:
        raise InvalidParameterError(f"beta must lie in [0, 1], got {beta}")


def combine_pps(ic_value: float, rank_ic_value: float, beta: float = 0.5) -> float:
    _check_beta(beta)
    return beta * ic_value + (1.0 - beta) * rank_ic_value


def pps(signal, returns, beta: float = 0.5) -> float:
    """Predictive power score ``beta * IC + (1 - beta) * RankIC``."""
    _check_beta(beta)
    if beta == 1.0:
        return ic(signal, returns)
    if beta == 0.0:
        return rank_ic(signal, returns)
    return combine_pps(ic(signal, returns), rank_ic(signal, returns), beta)


# ---------------------------------------------------------------------------
# Temporal stability
# ---------------------------------------------------------------------------


def rank_distribution(scores) -> np.ndarray:
    """Turn a cross-section into ``p_i = rank_i / sum(rank)`` (ascending ranks, ties averaged)."""
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.size == 0 or np.isnan(scores).any():
        raise InvalidParameterError("rank_distribution needs a non-empty vector without missing values")
    ranks = _stats.rank_rows(scores[None, :])[0]
    return ranks / ranks.sum()


def kl_divergence(p, q) -> float:
    """``sum p log(p / q)`` in nats over the support of ``p``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def rre_steps(signal) -> np.ndarray:
    """``KL(p_t || p_{t-1})`` for t = 2..T, ``NaN`` where fewer than two assets are common."""
    s = as_matrix(signal)
    if s.shape[0] < 2:
        return np.full(0, np.nan)
    cur, prev = _stats.joint_mask(s[1:], s[:-1])
    rc = _stats.rank_rows(cur)
    rp = _stats.rank_rows(prev)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = rc / np.nansum(rc, axis=1, keepdims=True)
        q = rp / np.nansum(rp, axis=1, keepdims=True)
        kl = np.nansum(p * np.log(p / q), axis=1)
    kl[(~np.isnan(cur)).sum(axis=1) < 2] = np.nan
    return kl


def rre(signal) -> float:
    """Relative rank entropy: mean of ``1 / (1 + KL)`` between consecutive rank distributions."""
    kl = rre_steps(signal)
    kl = kl[~np.isnan(kl)]
    if kl.size == 0:
        raise InsufficientDataError("RRE needs two consecutive dates sharing at least two valid assets")
    # rounding can push a zero divergence a hair below 0
    kl = np.maximum(kl, 0.0)
    return float(np.mean(1.0 / (1.0 + kl)))


# ---------------------------------------------------------------------------
# Robustness
# ---------------------------------------------------------------------------


def trial_spec(spec: NoiseSpec, trial: int) -> NoiseSpec:
    return NoiseSpec(spec.family, spec.sigma, spec.nu, derive_seed(spec.seed, "trial", trial))


def perturbed_panels(panel: Panel, specs: Sequence[NoiseSpec], trials: int) -> dict[str, list[Panel]]:
    if trials < 1:
        raise InvalidParameterError(f"trials must be positive, got {trials}")
    return {spec.family: [perturb(panel, trial_spec(spec, j)) for j in range(trials)] for spec in specs}


def _pfs_from_panels(expr: Expr, base: np.ndarray, panels: dict[str, list[Panel]]) -> dict[str, float]:
    out = {}
    for family, family_panels in panels.items():
        trial_scores = []
        for noisy_panel in family_panels:
            noisy = evaluate(expr, noisy_panel).values
            daily = _stats.row_spearman(base, noisy)
            daily = daily[~np.isnan(daily)]
            if daily.size:
                trial_scores.append(daily.mean())
        if not trial_scores:
            raise InsufficientDataError(f"PFS ({family}): no date with a non-degenerate cross-section")
        out[family] = float(np.mean(trial_scores))
    return out


def pfs_by_family(
    expr: Expr | str,
    panel: Panel,
    specs: Sequence[NoiseSpec],
    trials: int = 5,
    signal: SignalMatrix | None = None,
) -> dict[str, float]:
    """Mean per-date Spearman correlation between clean and perturbed scores, per noise family."""
    if isinstance(expr, str):
        expr = parse(expr)
    base = evaluate(expr, panel).values if signal is None else as_matrix(signal)
    return _pfs_from_panels(expr, base, perturbed_panels(panel, specs, trials))


def pfs(
    expr: Expr | str,
    panel: Panel,
    specs: Sequence[NoiseSpec],
    trials: int = 5,
    signal: SignalMatrix | None = None,
) -> float:
    """Perturbation fidelity score: the worst family's rank fidelity.

    Each noise spec is drawn ``trials`` times with seeds derived from
    ``spec.seed``; the per-trial scores are averaged before taking the minimum.
    """
    return min(pfs_by_family(expr, panel, specs, trials, signal).values())


# ---------------------------------------------------------------------------
# Diversity
# ---------------------------------------------------------------------------


def covariance_spectrum(signals: Sequence) -> np.ndarray:
    mats = [as_matrix(s).ravel() for s in signals]
    m = len(mats)
    if m < 2:
        raise InvalidParameterError("diversity needs at least two signals (log m vanishes for m = 1)")
    stacked = np.vstack(mats)
    valid = ~np.isnan(stacked).any(axis=0)
    if valid.sum() < m + 1:
        raise InsufficientDataError(f"diversity needs at least {m + 1} jointly valid cells, got {valid.sum()}")
    cov = np.cov(stacked[:, valid], ddof=1)
    eig = np.linalg.eigvalsh(cov)
    top = eig.max()
    if not top > 0:
        raise DegenerateCovarianceError("all signals are constant over the jointly valid cells")
    eig[eig <= EIGEN_TOLERANCE * top] = 0.0
    return eig[::-1]


def spectral_entropy(eigenvalues) -> float:
    """Normalised Shannon entropy of a non-negative spectrum (``0 log 0 = 0``)."""
    lam = np.asarray(eigenvalues, dtype=float)
    m = lam.size
    if m < 2:
        raise InvalidParameterError("normalised entropy needs at least two eigenvalues")
    p = lam / lam.sum()
    p = p[p > 0]
    h = float(-np.sum(p * np.log(p)) / math.log(m))
    return min(max(h, 0.0), 1.0)


def diversity_entropy(signals: Sequence) -> float:
    """Diversity of an alpha set from the eigenvalues of the signals' covariance matrix.

    0 means every signal is a scaled copy of one direction, 1 means variance is
    spread evenly over ``m`` directions.
    """
    return spectral_entropy(covariance_spectrum(signals))


# ---------------------------------------------------------------------------
# Batch scoring
# ---------------------------------------------------------------------------


@dataclass
class EvalConfig:
    beta: float = 0.5
    sigma: float = 0.01
    nu: float = 3.0
    trials: int = 5
    seed: int = 0
    # feed DH per-date z-scores so alphas in different units are comparable
    dh_standardize: bool = True

    def specs(self) -> list[NoiseSpec]:
        return noise_specs(self.sigma, self.nu, derive_seed(self.seed, "pfs"))


@dataclass
class DimensionScores:
    """Scores of one alpha. ``None`` marks a metric that could not be computed."""

    expression: str
    pps: float | None = None
    ic: float | None = None
    rank_ic: float | None = None
    icir: float | None = None
    rank_icir: float | None = None
    rre: float | None = None
    pfs: float | None = None
    pfs_gaussian: float | None = None
    pfs_student_t: float | None = None
    dh: float | None = None
    logic: float | None = None
    logic_explanation: str | None = None
    lookback: int | None = None
    skipped_dates: int | None = None
    errors: dict[str, str] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SetScores:
    records: list[DimensionScores]
    signals: list[SignalMatrix | None]
    dh: float | None = None
    dh_error: str | None = None


def _init_scoring(panel: Panel, returns: ReturnMatrix, config: EvalConfig):
    state = worker_state()
    state["panel"] = panel
    state["returns"] = returns.values
    state["config"] = config
    state["noisy"] = perturbed_panels(panel, config.specs(), config.trials)


def _try(record: DimensionScores, key: str, fn, *args):
    try:
        return fn(*args)
    except AlphaEvalError as exc:
        record.errors[key] = f"{type(exc).__name__}: {exc}"
        return None


def _score_one(text: str):
    state = worker_state()
    panel, returns, config = state["panel"], state["returns"], state["config"]
    rec = DimensionScores(expression=text)
    expr = _try(rec, "parse", parse, text)
    if expr is None:
        return rec, None
    diags = validate(expr, panel)
    rec.diagnostics.extend(f"{d.severity}:{d.code}: {d.message}" for d in diags)
    if not is_valid(diags):
        rec.errors["validate"] = "; ".join(d.message for d in diags if d.severity == "error")
        return rec, None
    rec.lookback = lookback(expr)
    signal = evaluate(expr, panel).values

    ics = daily_ic(signal, returns)
    rics = daily_rank_ic(signal, returns)
    rec.skipped_dates = int(np.isnan(rics).sum())
    rec.ic = _try(rec, "ic", _mean_usable, ics, "IC")
    rec.rank_ic = _try(rec, "rank_ic", _mean_usable, rics, "RankIC")
    if rec.ic is not None and rec.rank_ic is not None:
        rec.pps = combine_pps(rec.ic, rec.rank_ic, config.beta)
        rec.icir = _try(rec, "icir", icir, ics)
        rec.rank_icir = _try(rec, "rank_icir", icir, rics)
    rec.rre = _try(rec, "rre", rre, signal)
    fam = _try(rec, "pfs", _pfs_from_panels, expr, signal, state["noisy"])
    if fam is not None:
        rec.pfs_gaussian = fam.get(GAUSSIAN)
        rec.pfs_student_t = fam.get(STUDENT_T)
        rec.pfs = min(fam.values())
    return rec, signal


def score_dimensions(
    expressions: Sequence[str],
    panel: Panel,
    returns: ReturnMatrix,
    config: EvalConfig | None = None,
    workers: int = 1,
) -> SetScores:
    """Score every alpha on PPS/RRE/PFS and the whole set on DH.

    Failures are recorded per alpha (``record.errors``) instead of aborting the
    batch. DH is computed over the alphas with a defined PPS, after per-date
    cross-sectional standardisation unless ``config.dh_standardize`` is off.
    """
    config = config or EvalConfig()
    _check_beta(config.beta)
    results = parallel_map(_score_one, expressions, workers, _init_scoring, (panel, returns, config))
    records = [r for r, _ in results]
    signals = [None if s is None else SignalMatrix(panel.dates, panel.assets, s) for _, s in results]
    out = SetScores(records, signals)
    usable = [s.values for r, s in zip(records, signals) if s is not None and r.pps is not None]
    if config.dh_standardize:
        usable = [_stats.zscore_rows(s) for s in usable]
    try:
        out.dh = diversity_entropy(usable)
    except AlphaEvalError as exc:
        out.dh_error = f"{type(exc).__name__}: {exc}"
    for rec in records:
        rec.dh = out.dh
    return out
