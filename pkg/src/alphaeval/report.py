"""Set-level reports: normalisation, the integrated score, top-k selection and signal combination.

Reports are written as canonical JSON (sorted keys, floats rounded to six
significant digits, missing values as ``null``) so that two runs with the
same inputs and seeds produce byte-identical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import _stats
from ._util import as_matrix
from .engine import SignalMatrix
from .errors import AlphaEvalError, InvalidParameterError
from .metrics import DimensionScores, SetScores

DIMENSIONS = ("pps", "rre", "pfs", "dh", "logic")
INTEGRATED = "integrated"
SCORE_KEY = "alphaeval_score"
LOGIC_SCALE = 100.0
SCHEMA_PATH = Path(__file__).with_name("report.schema.json")

CONVENTIONS = {
    "missing": "NaN propagates through every operator; +-inf is treated as missing",
    "wma": "weights 1..d, newest observation heaviest, normalised to sum 1",
    "ema": "alpha = 2 / (d + 1) over the d-value window, seeded with the oldest value",
    "std_var_cov": "sample statistics, divisor d - 1",
    "skew": "adjusted Fisher-Pearson sample skewness",
    "kurt": "adjusted sample excess kurtosis",
    "rank": "rank of the newest value within its window, 1 = lowest, ties averaged",
    "idxmax_idxmin": "days since the extreme (0 = today), most recent wins ties",
    "med_mad": "median uses the midpoint for even windows; mad is the median absolute deviation",
    "slope_rsquare_resi": "least squares against t = 0..d-1 within the window",
    "corr": "missing when either window is constant",
    "div_log_power": "division by zero, log of x <= 0 and non-real powers are missing",
    "cross_section": "per-date statistics use jointly valid assets; undefined dates are skipped",
    "rank_correlation": "Spearman with average ranks for ties",
    "returns": "forward simple return close[t+h] / close[t] - 1",
    "pfs": "mean over trials of the per-date rank fidelity, minimum over noise families, unfloored",
    "pfs_noise": "i.i.d. noise on raw feature values; Student-t rescaled to the target std",
    "pfs_seeds": "trial seeds split from the root seed by SHA-256 keyed SeedSequence",
    "dh": "entropy of covariance eigenvalues of per-date z-scored signals over jointly valid cells",
    "dh_tolerance": "eigenvalues below 1e-12 times the largest are treated as zero",
    "normalisation": "min-max per dimension across the set, constant dimensions map to 0.5, logic divided by 100",
    "integrated_score": "weighted mean of normalised dimensions, weights of absent dimensions redistributed",
    "selection_ties": "descending score, ties broken by expression text ascending",
    "combination": "per-date population z-score of each member, averaged over available members",
}


def _get(record, key: str):
    if isinstance(record, Mapping):
        return record.get(key)
    return getattr(record, key, None)


def _finite(value) -> float | None:
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


# ---------------------------------------------------------------------------
# Normalisation and integrated score
# ---------------------------------------------------------------------------


def normalize_scores(records: Sequence) -> list[dict[str, float | None]]:
    """Scale each dimension to [0, 1] across the set.

    ``logic`` is divided by 100 instead, since its scale is absolute. A
    dimension that is constant over the alphas where it is defined (including
    the one-alpha case) maps to 0.5. Absent values stay ``None``.
    """
    out: list[dict[str, float | None]] = [{} for _ in records]
    for dim in DIMENSIONS:
        column = [_finite(_get(r, dim)) for r in records]
        if dim == "logic":
            scaled = [None if v is None else v / LOGIC_SCALE for v in column]
        else:
            present = [v for v in column if v is not None]
            lo, hi = (min(present), max(present)) if present else (0.0, 0.0)
            if hi > lo:
                scaled = [None if v is None else (v - lo) / (hi - lo) for v in column]
            else:
                scaled = [None if v is None else 0.5 for v in column]
        for row, value in zip(out, scaled):
            row[dim] = value
    return out


def resolve_weights(weights: Mapping[str, float] | Sequence[float] | None = None) -> dict[str, float]:
    """Validate weights (non-negative, summing to 1) and key them by dimension."""
    if weights is None:
        return {d: 1.0 / len(DIMENSIONS) for d in DIMENSIONS}
    if isinstance(weights, Mapping):
        unknown = set(weights) - set(DIMENSIONS)
        if unknown:
            raise InvalidParameterError(f"unknown weight dimension(s): {sorted(unknown)}")
        resolved = {d: float(weights.get(d, 0.0)) for d in DIMENSIONS}
    else:
        values = [float(w) for w in weights]
        if len(values) != len(DIMENSIONS):
            raise InvalidParameterError(f"expected {len(DIMENSIONS)} weights {DIMENSIONS}, got {len(values)}")
        resolved = dict(zip(DIMENSIONS, values))
    if any(not (w >= 0 and math.isfinite(w)) for w in resolved.values()):
        raise InvalidParameterError(f"weights must be finite and non-negative, got {resolved}")
    if abs(sum(resolved.values()) - 1.0) > 1e-9:
        raise InvalidParameterError(f"weights must sum to 1, got {sum(resolved.values())}")
    return resolved


def alphaeval_score(normalized: Mapping[str, float | None], weights=None) -> float:
    """Weighted mean of the available normalised dimensions.

    The weight of an absent dimension is shared among the present ones in
    proportion to their own weights.
    """
    w = resolve_weights(weights)
    present = {d: _finite(normalized.get(d)) for d in DIMENSIONS}
    present = {d: v for d, v in present.items() if v is not None}
    if not present:
        raise InvalidParameterError("every dimension is absent; no integrated score")
    total = sum(w[d] for d in present)
    if total == 0:
        raise InvalidParameterError(f"all weight sits on absent dimensions {sorted(set(DIMENSIONS) - set(present))}")
    return float(sum(w[d] * v for d, v in present.items()) / total)


def select_top(records: Sequence, k: int, by: str = INTEGRATED) -> list:
    """The ``k`` best records by one dimension or the integrated score.

    Order is descending by key with ties broken by expression text; records
    whose key is missing rank after every defined one.
    """
    if by not in DIMENSIONS and by != INTEGRATED:
        raise InvalidParameterError(f"cannot select by {by!r}; choose from {DIMENSIONS + (INTEGRATED,)}")
    if int(k) != k or k < 1:
        raise InvalidParameterError(f"k must be a positive integer, got {k}")
    if k > len(records):
        raise InvalidParameterError(f"k = {k} exceeds the {len(records)} available alphas")
    key = SCORE_KEY if by == INTEGRATED else by

    def order(record):
        value = _finite(_get(record, key))
        return (value is None, -(value or 0.0), str(_get(record, "expression")))

    return sorted(records, key=order)[: int(k)]


# ---------------------------------------------------------------------------
# Combination
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CombinedSignal:
    values: SignalMatrix
    members: tuple[str, ...]
    weights: tuple[float, ...]


def combine_signals(signals: Sequence, members: Sequence[str] | None = None) -> CombinedSignal:
    """Equal-weight average of per-date cross-sectional z-scores.

    Dates on which a member is degenerate (fewer than two valid assets or no
    spread) drop that member for the date. A cell is missing only when every
    member is missing there.
    """
    if not signals:
        raise InvalidParameterError("combine_signals needs at least one signal")
    mats = [as_matrix(s) for s in signals]
    if any(m.shape != mats[0].shape for m in mats):
        raise InvalidParameterError("member signals must share one T x N shape")
    z = np.stack([_stats.zscore_rows(m) for m in mats])
    valid = ~np.isnan(z)
    count = valid.sum(axis=0)
    total = np.where(valid, z, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        combined = np.where(count > 0, total / count, np.nan)
    first = signals[0]
    dates = getattr(first, "dates", np.arange(combined.shape[0]))
    assets = getattr(first, "assets", tuple(str(n) for n in range(combined.shape[1])))
    members = tuple(members) if members is not None else tuple(f"signal_{i}" for i in range(len(mats)))
    return CombinedSignal(SignalMatrix(dates, assets, combined), members, tuple([1.0 / len(mats)] * len(mats)))


# ---------------------------------------------------------------------------
# Ranking agreement
# ---------------------------------------------------------------------------


def rank_agreement(scores_a: Sequence[float], scores_b: Sequence[float], k: int) -> float:
    """NDCG@k of the ranking by ``scores_a`` judged against ``scores_b``.

    Relevance is the average rank of ``scores_b`` divided by its length, so
    the best item under ``b`` has relevance 1. Ties in ``a`` keep input order.
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidParameterError(f"score lists must have equal length, got {a.shape} and {b.shape}")
    if int(k) != k or not 1 <= k <= a.size:
        raise InvalidParameterError(f"k must lie in [1, {a.size}], got {k}")
    if np.isnan(a).any() or np.isnan(b).any():
        raise InvalidParameterError("rank_agreement does not accept missing scores")
    k = int(k)
    relevance = _stats.rank_rows(b[None, :])[0] / b.size
    discount = 1.0 / np.log2(np.arange(2, k + 2))
    ranked = relevance[np.argsort(-a, kind="stable")][:k]
    ideal = np.sort(relevance)[::-1][:k]
    return float((ranked * discount).sum() / (ideal * discount).sum())


# ---------------------------------------------------------------------------
# Report container and canonical JSON
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    alphas: list[dict[str, Any]]
    dh: float | None
    weights: dict[str, float]
    config: dict[str, Any] = field(default_factory=dict)
    conventions: dict[str, str] = field(default_factory=lambda: dict(CONVENTIONS))
    summary: dict[str, float | None] = field(default_factory=dict)
    dh_error: str | None = None
    selected: list[str] | None = None

    @property
    def failed(self) -> list[str]:
        return [a["expression"] for a in self.alphas if a.get("errors")]

    def to_dict(self) -> dict[str, Any]:
        return {
            "alphas": self.alphas,
            "config": self.config,
            "conventions": self.conventions,
            "dh": self.dh,
            "dh_error": self.dh_error,
            "selected": self.selected,
            "summary": self.summary,
            "weights": self.weights,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MetricReport":
        return cls(
            alphas=list(data["alphas"]),
            dh=data.get("dh"),
            weights=dict(data["weights"]),
            config=dict(data.get("config") or {}),
            conventions=dict(data.get("conventions") or {}),
            summary=dict(data.get("summary") or {}),
            dh_error=data.get("dh_error"),
            selected=data.get("selected"),
        )


def _mean(values) -> float | None:
    values = [v for v in (_finite(x) for x in values) if v is not None]
    return float(np.mean(values)) if values else None


def build_report(
    scores: SetScores | Sequence[DimensionScores],
    weights=None,
    config: Mapping[str, Any] | None = None,
) -> MetricReport:
    """Normalise, score and summarise a scored alpha set.

    Alphas without a defined PPS get no integrated score, so they sort last in
    :func:`select_top`.
    """
    if isinstance(scores, SetScores):
        records, dh, dh_error = scores.records, scores.dh, scores.dh_error
    else:
        records = list(scores)
        dh = next((r.dh for r in records if r.dh is not None), None)
        dh_error = None
    w = resolve_weights(weights)
    normalized = normalize_scores(records)
    alphas = []
    for rec, norm in zip(records, normalized):
        row = rec.to_dict() if hasattr(rec, "to_dict") else dict(rec)
        row["normalized"] = norm
        row[SCORE_KEY] = None
        # no defined PPS means no usable cross-section; redistributing onto the rest would reward it
        if norm["pps"] is not None:
            try:
                row[SCORE_KEY] = alphaeval_score(norm, w)
            except InvalidParameterError:
                pass
        alphas.append(row)
    summary = {d: _mean(_get(r, d) for r in records) for d in ("pps", "ic", "rank_ic", "rre", "pfs", "logic")}
    summary["dh"] = dh
    summary["alphas"] = len(records)
    summary["failed"] = sum(1 for r in records if _get(r, "errors"))
    return MetricReport(alphas, dh, w, dict(config or {}), dict(CONVENTIONS), summary, dh_error)


def canonical(obj: Any, digits: int = 6) -> Any:
    """Round floats to ``digits`` significant digits and map non-finite values to ``None``."""
    if isinstance(obj, Mapping):
        return {str(k): canonical(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v, digits) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if not math.isfinite(value):
            return None
        rounded = float(f"{value:.{digits}g}")
        return 0.0 if rounded == 0 else rounded
    return obj


def dumps_canonical(obj: Any) -> str:
    data = obj.to_dict() if hasattr(obj, "to_dict") else obj
    return json.dumps(canonical(data), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(obj: Any, path: str | Path) -> None:
    path = Path(path)
    try:
        path.write_text(dumps_canonical(obj), encoding="utf-8")
    except OSError as exc:
        raise AlphaEvalError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_report(report: MetricReport, path: str | Path) -> None:
    write_json(report, path)


def read_report(path: str | Path) -> MetricReport:
    path = Path(path)
    try:
        return MetricReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except OSError as exc:
        raise AlphaEvalError(f"cannot read {path}: {exc.strerror or exc}") from exc


def load_schema() -> dict:
    return json.loads(SCHEMA_PATH.read_text(encoding="utf-8"))
