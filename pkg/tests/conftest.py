from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from alphaeval.panel import FEATURES, Panel  # noqa: E402

CRITERIA = {
    1: "operator oracle suite and burn-in",
    2: "correlation oracles",
    3: "relative rank entropy",
    4: "perturbation fidelity",
    5: "diversity entropy",
    6: "backtest oracles",
    7: "RRE vs turnover direction",
    8: "PFS vs max drawdown direction",
    9: "null baseline PPS",
    10: "parallel determinism and speed",
    11: "logic pipeline offline",
    12: "PPS endpoints",
}

_outcomes: dict[int, list[bool]] = {}
_notes: dict[int, list[str]] = {}


def make_panel(columns: dict[str, np.ndarray], start: str = "2021-01-01") -> Panel:
    """Panel from ``{feature: (T, N) or (T,) array}``."""
    arrays = {k: np.asarray(v, dtype=float) for k, v in columns.items()}
    arrays = {k: v[:, None] if v.ndim == 1 else v for k, v in arrays.items()}
    T, N = next(iter(arrays.values())).shape
    names = tuple(arrays)
    values = np.stack([arrays[f] for f in names], axis=-1)
    dates = np.datetime64(start, "D") + np.arange(T)
    return Panel(dates, tuple(f"A{n}" for n in range(N)), names, values)


def random_panel(T: int, N: int, seed: int = 0) -> Panel:
    """All standard features as positive random walks near 1."""
    rng = np.random.default_rng(seed)
    layers = {f: np.exp(np.cumsum(rng.normal(0, 0.02, (T, N)), axis=0)) for f in FEATURES}
    return make_panel(layers)


@pytest.fixture
def note():
    """Attach a line of context to an acceptance criterion's summary."""

    def add(criterion: int, text: str) -> None:
        _notes.setdefault(criterion, []).append(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(number, []).append(report.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in CRITERIA.items():
        results = _outcomes.get(number)
        if not results:
            status = "NOT RUN"
        else:
            status = "PASS" if all(results) else "FAIL"
        line = f"[{status}] criterion {number:2d}: {title} ({sum(results or [])}/{len(results or [])} checks)"
        terminalreporter.write_line(line)
        for text in _notes.get(number, []):
            terminalreporter.write_line(f"           {text}")
