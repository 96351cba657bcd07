"""Backtest-free evaluation of formula alphas.

Typical use::

    from alphaeval import load_panel, compute_returns, score_dimensions, build_report

    panel = load_panel("panel.csv")
    scores = score_dimensions(["Mean(close, 5)", "Corr(close, volume, 10)"], panel, compute_returns(panel))
    report = build_report(scores)
"""

from __future__ import annotations

from .backtest import (
    BacktestResult,
    PortfolioSeries,
    WeightMatrix,
    annualized_return,
    annualized_turnover,
    build_weights,
    max_drawdown,
    portfolio_returns,
    run_backtest,
    sharpe,
    turnover,
)
from .engine import SignalMatrix, evaluate, evaluate_many
from .errors import (
    AlphaEvalError,
    InvalidParameterError,
    PanelFormatError,
    DuplicateKeyError,
    UnknownFeatureError,
    MissingFeatureError,
    ExprSyntaxError,
    UnknownOperatorError,
    ArityError,
    WindowError,
    InsufficientDataError,
    UndefinedMetricError,
    DegenerateCovarianceError,
    BankruptPathError,
    LlmTransportError,
    LlmResponseError,
    VerdictMismatchError,
)
from .expr import OPERATORS, Diagnostic, lookback, parse, to_string, validate
from .logic import LlmConfig, LogicVerdict, MockClient, build_prompt, logic_score, parse_llm_json, score_alphas
from .metrics import (
    DimensionScores,
    EvalConfig,
    SetScores,
    diversity_entropy,
    ic,
    icir,
    pfs,
    pps,
    rank_ic,
    rre,
    score_dimensions,
)
from .panel import NoiseSpec, Panel, ReturnMatrix, compute_returns, index_volatility, load_panel, perturb
from .report import (
    MetricReport,
    alphaeval_score,
    build_report,
    combine_signals,
    normalize_scores,
    rank_agreement,
    read_report,
    select_top,
    write_report,
)
from .synth import random_alphas, synthetic_panel

__version__ = "0.1.0"
