"""Formulaic alpha expressions.

The language is prefix function-call only::

    Div(Sub(close, open), open)
    Corr(close, volume, 10)
    Mean(Ref(close, 2), 3)

Operator names are case-sensitive. Time windows must be positive integer
literals; every other operand is a sub-expression, a feature name or a real
constant (broadcast over the cross-section). A leading ``$`` on feature names
(qlib style) is accepted and dropped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

from .errors import ArityError, ExprSyntaxError, UnknownOperatorError, WindowError
from .panel import FEATURES

UNARY = "unary"
BINARY = "binary"
SHIFT = "shift"
ROLLING = "rolling"
PAIR_ROLLING = "pair_rolling"

_ARITY = {UNARY: 1, BINARY: 2, SHIFT: 2, ROLLING: 2, PAIR_ROLLING: 3}


@dataclass(frozen=True)
class OpInfo:
    name: str
    kind: str
    description: str
    # smallest window that can yield a defined value
    min_window: int = 1

    @property
    def arity(self) -> int:
        return _ARITY[self.kind]


def _table(*rows: tuple) -> dict[str, OpInfo]:
    return {row[0]: OpInfo(*row) for row in rows}


OPERATORS: dict[str, OpInfo] = _table(
    ("Abs", UNARY, "Absolute value of x"),
    ("Sign", UNARY, "Sign of x: 1 if x > 0, -1 if x < 0, 0 if x = 0"),
    ("Log", UNARY, "Natural logarithm of x"),
    ("Power", BINARY, "x raised to the power of y"),
    ("Add", BINARY, "Element-wise addition of x and y"),
    ("Sub", BINARY, "Element-wise subtraction of y from x"),
    ("Mul", BINARY, "Element-wise multiplication of x and y"),
    ("Div", BINARY, "Element-wise division of x by y"),
    ("Ref", SHIFT, "Value of x d days ago"),
    ("Delta", SHIFT, "Today's value of x minus the value of x d days ago"),
    ("WMA", ROLLING, "Weighted moving average over the past d days with linearly decaying weights"),
    ("EMA", ROLLING, "Exponential moving average over the past d days"),
    ("Min", ROLLING, "Time-series minimum of x over the past d days"),
    ("Max", ROLLING, "Time-series maximum of x over the past d days"),
    ("IdxMax", ROLLING, "Index of the day when Max(x, d) occurs (0 = today)"),
    ("IdxMin", ROLLING, "Index of the day when Min(x, d) occurs (0 = today)"),
    ("Rank", ROLLING, "Rank of today's x among the past d days (1 = lowest, d = highest)"),
    ("Sum", ROLLING, "Time-series sum of x over the past d days"),
    ("Mean", ROLLING, "Time-series mean of x over the past d days"),
    ("Std", ROLLING, "Moving standard deviation of x over the past d days", 2),
    ("Var", ROLLING, "Moving variance of x over the past d days", 2),
    ("Skew", ROLLING, "Time-series skewness of x over the past d days", 3),
    ("Kurt", ROLLING, "Time-series kurtosis of x over the past d days", 4),
    ("Med", ROLLING, "Median of x over the past d days"),
    ("Mad", ROLLING, "Median absolute deviation of x over the past d days"),
    ("Slope", ROLLING, "Slope of linear regression fit to x over the past d days", 2),
    ("Rsquare", ROLLING, "R-squared of linear regression fit to x over the past d days", 2),
    ("Resi", ROLLING, "Residual of linear regression fit to x over the past d days", 2),
    ("Greater", BINARY, "1 if x > y, else 0"),
    ("Less", BINARY, "1 if x < y, else 0"),
    ("Corr", PAIR_ROLLING, "Time-series Pearson correlation between x and y over the past d days", 2),
    ("Cov", PAIR_ROLLING, "Time-series covariance between x and y over the past d days", 2),
)


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


class Expr:
    """Base class of all AST nodes. Nodes are immutable and compare structurally."""

    def children(self) -> tuple["Expr", ...]:
        return ()

    def __str__(self) -> str:
        return to_string(self)


@dataclass(frozen=True)
class Feature(Expr):
    name: str


@dataclass(frozen=True)
class Constant(Expr):
    value: float


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    x: Expr

    def children(self):
        return (self.x,)


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    x: Expr
    y: Expr

    def children(self):
        return (self.x, self.y)


@dataclass(frozen=True)
class Shift(Expr):
    """``Ref`` and ``Delta``: look ``periods`` days back."""

    op: str
    x: Expr
    periods: int

    def children(self):
        return (self.x,)


@dataclass(frozen=True)
class Rolling(Expr):
    op: str
    x: Expr
    window: int

    def children(self):
        return (self.x,)


@dataclass(frozen=True)
class PairRolling(Expr):
    op: str
    x: Expr
    y: Expr
    window: int

    def children(self):
        return (self.x, self.y)


def walk(expr: Expr) -> Iterator[Expr]:
    """Pre-order traversal."""
    yield expr
    for child in expr.children():
        yield from walk(child)


def features_of(expr: Expr) -> set[str]:
    return {node.name for node in walk(expr) if isinstance(node, Feature)}


def depth(expr: Expr) -> int:
    """Nesting depth: leaves are 0, ``Op(leaf)`` is 1."""
    kids = expr.children()
    if not kids:
        return 0
    return 1 + max(depth(k) for k in kids)


def lookback(expr: Expr) -> int:
    """Number of trailing dates (including today) one output value depends on."""
    if isinstance(expr, (Feature, Constant)):
        return 1
    if isinstance(expr, Shift):
        return lookback(expr.x) + expr.periods
    if isinstance(expr, Rolling):
        return lookback(expr.x) + expr.window - 1
    if isinstance(expr, PairRolling):
        return max(lookback(expr.x), lookback(expr.y)) + expr.window - 1
    return max(lookback(c) for c in expr.children())


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------


def format_number(value: float) -> str:
    value = float(value)
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def to_string(expr: Expr) -> str:
    if isinstance(expr, Feature):
        return expr.name
    if isinstance(expr, Constant):
        return format_number(expr.value)
    if isinstance(expr, Unary):
        return f"{expr.op}({to_string(expr.x)})"
    if isinstance(expr, Binary):
        return f"{expr.op}({to_string(expr.x)}, {to_string(expr.y)})"
    if isinstance(expr, Shift):
        return f"{expr.op}({to_string(expr.x)}, {expr.periods})"
    if isinstance(expr, Rolling):
        return f"{expr.op}({to_string(expr.x)}, {expr.window})"
    if isinstance(expr, PairRolling):
        return f"{expr.op}({to_string(expr.x)}, {to_string(expr.y)}, {expr.window})"
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>\$?[A-Za-z_][A-Za-z0-9_]*)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<comma>,)
    """,
    re.VERBOSE,
)
_INTEGER = re.compile(r"\+?\d+")


@dataclass
class _Token:
    kind: str
    text: str
    start: int
    end: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", text, (pos, pos + 1))
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, m.group(), m.start(), m.end()))
        pos = m.end()
    tokens.append(_Token("eof", "", len(text), len(text)))
    return tokens


@dataclass
class _Arg:
    node: Expr
    start: int
    end: int
    literal: str | None = field(default=None)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self, kind: str | None = None) -> _Token:
        tok = self.tokens[self.i]
        if kind is not None and tok.kind != kind:
            what = "end of input" if tok.kind == "eof" else repr(tok.text)
            raise ExprSyntaxError(f"expected {kind}, found {what}", self.text, (tok.start, tok.end))
        self.i += 1
        return tok

    def parse(self) -> Expr:
        arg = self.arg()
        tok = self.peek()
        if tok.kind != "eof":
            raise ExprSyntaxError(f"unexpected {tok.text!r} after expression", self.text, (tok.start, tok.end))
        return arg.node

    def arg(self) -> _Arg:
        tok = self.take()
        if tok.kind == "number":
            return _Arg(Constant(float(tok.text)), tok.start, tok.end, tok.text)
        if tok.kind != "ident":
            what = "end of input" if tok.kind == "eof" else repr(tok.text)
            raise ExprSyntaxError(f"expected an expression, found {what}", self.text, (tok.start, tok.end))
        name = tok.text
        if self.peek().kind != "lparen":
            if name in OPERATORS:
                raise ExprSyntaxError(f"operator {name} used without arguments", self.text, (tok.start, tok.end))
            return _Arg(Feature(name.lstrip("$")), tok.start, tok.end)
        if name not in OPERATORS:
            raise UnknownOperatorError(f"unknown operator {name!r}", self.text, (tok.start, tok.end))
        self.take("lparen")
        args = []
        if self.peek().kind != "rparen":
            args.append(self.arg())
            while self.peek().kind == "comma":
                self.take()
                args.append(self.arg())
        close = self.take("rparen")
        return _Arg(self.build(OPERATORS[name], args, tok.start, close.end), tok.start, close.end)

    def build(self, info: OpInfo, args: list[_Arg], start: int, end: int) -> Expr:
        if len(args) != info.arity:
            raise ArityError(
                f"{info.name} takes {info.arity} argument(s), got {len(args)}", self.text, (start, end)
            )
        if info.kind == UNARY:
            return Unary(info.name, args[0].node)
        if info.kind == BINARY:
            return Binary(info.name, args[0].node, args[1].node)
        window = self.window(info, args[-1])
        if info.kind == SHIFT:
            return Shift(info.name, args[0].node, window)
        if info.kind == ROLLING:
            return Rolling(info.name, args[0].node, window)
        return PairRolling(info.name, args[0].node, args[1].node, window)

    def window(self, info: OpInfo, arg: _Arg) -> int:
        if arg.literal is None or not _INTEGER.fullmatch(arg.literal) or int(arg.literal) < 1:
            raise WindowError(
                f"{info.name} window must be a positive integer literal, got "
                f"{self.text[arg.start:arg.end]!r}",
                self.text,
                (arg.start, arg.end),
            )
        return int(arg.literal)


def parse(text: str) -> Expr:
    """Parse one alpha expression into its AST.

    Raises:
        ExprSyntaxError: malformed input (unbalanced parentheses, stray tokens).
        UnknownOperatorError: call to a name not in :data:`OPERATORS`.
        ArityError: wrong number of arguments.
        WindowError: a window slot that is not a positive integer literal.
    """
    return _Parser(text).parse()


def load_alpha_list(path: str | Path) -> list[str]:
    """One expression per line; ``#`` starts a comment, blank lines are skipped."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


# ---------------------------------------------------------------------------
# Static validation
# ---------------------------------------------------------------------------

ERROR = "error"
WARNING = "warning"


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    severity: str = ERROR


def validate(expr: Expr, schema: Sequence[str] | None = None, n_dates: int | None = None) -> list[Diagnostic]:
    """Check ``expr`` against a feature schema and panel length. Never raises.

    ``schema`` may be a list of feature names or anything with a ``features``
    attribute (e.g. a :class:`~alphaeval.panel.Panel`, whose length is then used
    when ``n_dates`` is not given). Errors make evaluation meaningless; warnings
    flag expressions that will evaluate but may produce missing cells.
    """
    if schema is None:
        schema = FEATURES
    elif hasattr(schema, "features"):
        if n_dates is None and hasattr(schema, "n_dates"):
            n_dates = schema.n_dates
        schema = schema.features
    known = set(schema)
    diags: list[Diagnostic] = []
    for node in walk(expr):
        if isinstance(node, Feature) and node.name not in known:
            diags.append(Diagnostic("unknown-feature", f"feature {node.name!r} is not in the panel schema"))
        if isinstance(node, (Shift, Rolling, PairRolling)):
            d = node.periods if isinstance(node, Shift) else node.window
            if n_dates is not None and d > n_dates:
                diags.append(
                    Diagnostic("window-too-large", f"{node.op} window {d} exceeds panel length {n_dates}")
                )
            info = OPERATORS[node.op]
            if d < info.min_window:
                diags.append(
                    Diagnostic(
                        "window-too-small",
                        f"{node.op} needs a window of at least {info.min_window}; output is always missing",
                        WARNING,
                    )
                )
        if isinstance(node, Binary) and node.op == "Power":
            if not isinstance(node.y, Constant):
                diags.append(Diagnostic("power-exponent-not-constant", "Power exponent must be a constant"))
            elif not float(node.y.value).is_integer():
                diags.append(
                    Diagnostic(
                        "power-fractional-exponent",
                        "fractional exponent: negative bases evaluate to missing",
                        WARNING,
                    )
                )
    return diags


def is_valid(diagnostics: Sequence[Diagnostic]) -> bool:
    return not any(d.severity == ERROR for d in diagnostics)
