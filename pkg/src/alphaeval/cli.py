"""``alphaeval`` command line: eval, backtest, synth and random-alphas.

Exit codes: 0 on success, 2 when some alphas failed (the report is still
written), 1 on a fatal error such as an unreadable panel.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import backtest as bt
from .engine import SignalMatrix, evaluate
from .errors import AlphaEvalError, InvalidParameterError
from .expr import is_valid, load_alpha_list, parse, validate
from .logic import HttpChatClient, LlmConfig, MockClient, score_alphas
from .metrics import EvalConfig, SetScores, score_dimensions
from .panel import Panel, compute_returns, index_volatility, load_panel, write_panel
from .report import (
    DIMENSIONS,
    INTEGRATED,
    build_report,
    combine_signals,
    resolve_weights,
    select_top,
    write_json,
    write_report,
)
from .synth import random_alphas, synthetic_panel

AUTO = "auto"


@dataclass
class RunConfig:
    """Everything that determines a report; echoed into it verbatim.

    The worker count and output paths are deliberately left out: they do not
    change any number, and echoing them would make otherwise identical
    reports differ.
    """

    panel: str
    alphas: str
    panel_sha256: str
    alphas_sha256: str
    beta: float = 0.5
    dt: int = 1
    k: int = 10
    days: int = bt.TRADING_DAYS
    sigma: str = AUTO
    sigma_resolved: float | None = None
    nu: float = 3.0
    trials: int = 5
    seed: int = 0
    weights: dict[str, float] | None = None
    logic: bool = False
    llm_endpoint: str | None = None
    llm_model: str | None = None
    llm_mock: str | None = None
    llm_mock_sha256: str | None = None
    top: int | None = None
    by: str = INTEGRATED
    allow_extra_features: bool = False
    perturbation_target: str = "raw features"

    def eval_config(self) -> EvalConfig:
        return EvalConfig(beta=self.beta, sigma=float(self.sigma_resolved), nu=self.nu, trials=self.trials, seed=self.seed)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _sha256(path: str | None) -> str | None:
    if not path:
        return None
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise AlphaEvalError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _parse_sigma(text: str) -> str:
    if text == AUTO:
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"sigma must be 'auto' or a number, got {text!r}") from None
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"sigma must be non-negative, got {text!r}")
    return text


def _parse_weights(text: str) -> dict[str, float]:
    """``0.2,0.2,0.2,0.2,0.2`` (in dimension order) or ``pps=0.5,rre=0.5``."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    try:
        if all("=" in p for p in parts):
            pairs = (p.split("=", 1) for p in parts)
            raw: Any = {k.strip(): float(v) for k, v in pairs}
        else:
            raw = [float(p) for p in parts]
        return resolve_weights(raw)
    except InvalidParameterError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse weights {text!r}") from None


# ---------------------------------------------------------------------------
# Shared pipeline
# ---------------------------------------------------------------------------


def _load_inputs(args) -> tuple[Panel, list[str]]:
    panel = load_panel(args.panel, allow_extra_features=args.allow_extra_features)
    alphas = load_alpha_list(args.alphas)
    if not alphas:
        raise InvalidParameterError(f"{args.alphas} lists no alphas")
    return panel, alphas


def _run_config(args) -> RunConfig:
    weights = getattr(args, "weights", None)
    return RunConfig(
        panel=str(args.panel),
        alphas=str(args.alphas),
        panel_sha256=_sha256(args.panel),
        alphas_sha256=_sha256(args.alphas),
        beta=args.beta,
        dt=args.dt,
        k=args.k,
        days=args.days,
        sigma=args.sigma,
        nu=args.nu,
        trials=args.trials,
        seed=args.seed,
        weights=weights,
        logic=args.logic,
        llm_endpoint=args.llm_endpoint,
        llm_model=args.llm_model,
        llm_mock=args.llm_mock,
        llm_mock_sha256=_sha256(args.llm_mock),
        top=getattr(args, "top", None),
        by=getattr(args, "by", INTEGRATED),
        allow_extra_features=args.allow_extra_features,
    )


def _resolve_sigma(cfg: RunConfig, panel: Panel) -> None:
    if cfg.sigma == AUTO:
        cfg.sigma_resolved = index_volatility(compute_returns(panel, 1))
    else:
        cfg.sigma_resolved = float(cfg.sigma)


def _apply_logic(scores: SetScores, cfg: RunConfig, debug: bool) -> None:
    todo = [r.expression for r in scores.records if "parse" not in r.errors]
    if not todo:
        return
    llm = LlmConfig(endpoint=cfg.llm_endpoint or "", model=cfg.llm_model or "", debug=debug)
    try:
        client = MockClient.from_file(cfg.llm_mock) if cfg.llm_mock else HttpChatClient(llm)
        verdicts = {v.factor: v for v in score_alphas(todo, llm, client)}
    except (AlphaEvalError, OSError, ValueError) as exc:
        for rec in scores.records:
            if rec.expression in todo:
                rec.errors["logic"] = f"{type(exc).__name__}: {exc}"
        return
    for rec in scores.records:
        v = verdicts.get(rec.expression)
        if v is None:
            continue
        rec.logic = v.score
        rec.logic_explanation = v.explanation
        if v.clamped:
            rec.diagnostics.append("warning:logic-clamped: score outside the accepted range was clamped")
        if v.below_prompted_range:
            rec.diagnostics.append("warning:logic-below-prompted-range: score under the prompted floor of 50")


def _score(args, panel: Panel, alphas: list[str], cfg: RunConfig) -> SetScores:
    _resolve_sigma(cfg, panel)
    returns = compute_returns(panel, cfg.dt)
    scores = score_dimensions(alphas, panel, returns, cfg.eval_config(), workers=args.workers)
    if cfg.logic:
        _apply_logic(scores, cfg, args.debug_llm)
    return scores


def _dump_signals(directory: str, panel: Panel, signals: Sequence[SignalMatrix | None]) -> None:
    """One ``<index>.csv`` of ``date,symbol,value`` per alpha; missing cells are skipped."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    dates = panel.dates.astype(str)
    for i, signal in enumerate(signals):
        if signal is None:
            continue
        with open(out / f"{i}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date", "symbol", "value"])
            for t, n in zip(*np.nonzero(~np.isnan(signal.values))):
                writer.writerow([dates[t], panel.assets[n], repr(float(signal.values[t, n]))])


def _dump_nav(directory: str, dates: np.ndarray, series: dict[str, bt.PortfolioSeries]) -> None:
    """One ``<name>.csv`` of ``date,r,nav`` per backtested alpha."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for name, s in series.items():
        with open(out / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date", "r", "nav"])
            for date, r, nav in zip(dates.astype(str), s.returns, s.nav):
                writer.writerow([date, repr(float(r)), repr(float(nav))])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    panel, alphas = _load_inputs(args)
    cfg = _run_config(args)
    scores = _score(args, panel, alphas, cfg)
    report = build_report(scores, cfg.weights, cfg.to_dict())
    if args.top:
        report.selected = [a["expression"] for a in select_top(report.alphas, args.top, args.by)]
    write_report(report, args.out)
    if args.dump_signals:
        _dump_signals(args.dump_signals, panel, scores.signals)
    failed = report.failed
    dh = "n/a" if report.dh is None else f"{report.dh:.4f}"
    print(f"scored {len(alphas) - len(failed)}/{len(alphas)} alphas, DH {dh} -> {args.out}")
    for expr in failed:
        rec = next(a for a in report.alphas if a["expression"] == expr)
        print(f"  partial: {expr}: {'; '.join(f'{k}: {v}' for k, v in rec['errors'].items())}", file=sys.stderr)
    return 2 if failed else 0


def _backtest_row(label: str, signal, returns, k: int, days: int) -> tuple[dict, bt.PortfolioSeries]:
    result, series = bt.run_backtest(signal, returns, k, days)
    return {"expression": label, **result.to_dict()}, series


def cmd_backtest(args) -> int:
    panel, alphas = _load_inputs(args)
    cfg = _run_config(args)
    daily = compute_returns(panel, 1)
    rows: list[dict] = []
    navs: dict[str, bt.PortfolioSeries] = {}
    signals: dict[str, SignalMatrix] = {}
    for index, text in enumerate(alphas):
        try:
            expr = parse(text)
            diags = validate(expr, panel)
            if not is_valid(diags):
                raise InvalidParameterError("; ".join(d.message for d in diags if d.severity == "error"))
            signal = evaluate(expr, panel)
        except AlphaEvalError as exc:
            rows.append({"expression": text, "errors": {"evaluate": f"{type(exc).__name__}: {exc}"}})
            continue
        signals[text] = signal
        row, navs[str(index)] = _backtest_row(text, signal, daily, cfg.k, cfg.days)
        rows.append(row)

    combined = None
    if args.combine and signals:
        members = list(signals)
        if args.top:
            scores = _score(args, panel, members, cfg)
            report = build_report(scores, cfg.weights, cfg.to_dict())
            members = [a["expression"] for a in select_top(report.alphas, args.top, args.by)]
        joint = combine_signals([signals[m] for m in members], members)
        combined, navs["combined"] = _backtest_row("combined", joint.values, daily, cfg.k, cfg.days)
        combined["members"] = members

    write_json({"config": cfg.to_dict(), "alphas": rows, "combined": combined}, args.out)
    if args.dump_nav:
        _dump_nav(args.dump_nav, panel.dates, navs)

    for row in rows + ([combined] if combined else []):
        if "annualized_return" not in row:
            print(f"FAILED  {row['expression']}: {row['errors']['evaluate']}")
            continue
        sr = "undefined" if row["sharpe"] is None else f"{row['sharpe']:.3f}"
        mdd = "undefined" if row["max_drawdown"] is None else f"{row['max_drawdown']:.4f}"
        print(f"AR {row['annualized_return']:+.4f}  SR {sr}  Turn {row['annualized_turnover']:.2f}  MaxDD {mdd}  {row['expression']}")
    return 2 if len(signals) < len(alphas) else 0


def cmd_synth(args) -> int:
    panel = synthetic_panel(args.dates, args.assets, args.seed, args.signal_strength, args.start)
    write_panel(panel, args.out)
    print(f"wrote {args.dates} x {args.assets} panel -> {args.out}")
    return 0


def cmd_random_alphas(args) -> int:
    features = load_panel(args.panel).features if args.panel else None
    kwargs = {"features": features} if features else {}
    lines = random_alphas(args.count, args.max_depth, args.seed, **kwargs)
    text = "".join(f"{line}\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _add_scoring(p: argparse.ArgumentParser) -> None:
    p.add_argument("--panel", required=True, help="long-format CSV: date,symbol,<features>")
    p.add_argument("--alphas", required=True, help="one expression per line, '#' comments allowed")
    p.add_argument("--out", required=True, help="JSON output path")
    p.add_argument("--beta", type=float, default=0.5, help="PPS weight on IC (default 0.5)")
    p.add_argument("--dt", type=_positive_int, default=1, help="forward-return horizon in days")
    p.add_argument("--k", type=_positive_int, default=10, help="assets per leg in the long-short book")
    p.add_argument("--days", type=_positive_int, default=bt.TRADING_DAYS, help="trading days per year")
    p.add_argument("--sigma", type=_parse_sigma, default=AUTO, help="perturbation std, or 'auto' for index volatility")
    p.add_argument("--nu", type=float, default=3.0, help="Student-t degrees of freedom")
    p.add_argument("--trials", type=_positive_int, default=5, help="perturbation draws per noise family")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--weights", type=_parse_weights, default=None, help="integrated-score weights")
    p.add_argument("--top", type=_positive_int, default=None, help="select the top alphas")
    p.add_argument("--by", choices=[*DIMENSIONS, INTEGRATED], default=INTEGRATED)
    p.add_argument("--logic", action="store_true", help="score financial logic with a chat model")
    p.add_argument("--llm-endpoint", default=None)
    p.add_argument("--llm-model", default=None)
    p.add_argument("--llm-mock", default=None, help="JSON table answering instead of the endpoint")
    p.add_argument("--debug-llm", action="store_true", help="log LLM requests and responses")
    p.add_argument("--allow-extra-features", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alphaeval", description="Backtest-free evaluation of formula alphas.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="score alphas and write a metric report")
    _add_scoring(p)
    p.add_argument("--dump-signals", default=None, help="directory for per-alpha signal CSVs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("backtest", help="long-short backtest per alpha")
    _add_scoring(p)
    p.add_argument("--combine", action="store_true", help="also backtest the z-score combination")
    p.add_argument("--dump-nav", default=None, help="directory for per-alpha NAV CSVs")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("synth", help="write a synthetic panel CSV")
    p.add_argument("--dates", "-T", type=_positive_int, required=True)
    p.add_argument("--assets", "-N", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--signal-strength", type=float, default=0.0)
    p.add_argument("--start", default="2020-01-01")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("random-alphas", help="sample random expressions")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--max-depth", type=_positive_int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--panel", default=None, help="restrict leaves to this panel's features")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_random_alphas)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "debug_llm", False):
        logging.getLogger("alphaeval.logic").setLevel(logging.DEBUG)
    try:
        return args.func(args)
    except InvalidParameterError as exc:
        if args.command == "synth":
            parser.error(str(exc))
        print(f"alphaeval: error: {exc}", file=sys.stderr)
        return 1
    except (AlphaEvalError, OSError) as exc:
        print(f"alphaeval: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
