from __future__ import annotations

import numpy as np
import pytest

from alphaeval import metrics
from alphaeval.engine import evaluate
from alphaeval.errors import InvalidParameterError
from alphaeval.expr import depth, features_of, parse
from alphaeval.panel import FEATURES, compute_returns, load_panel, write_panel
from alphaeval.synth import PLANTED_ALPHA, random_alphas, synthetic_panel


def planted_ic(strength: float, seed: int) -> float:
    panel = synthetic_panel(300, 50, seed, strength)
    return metrics.ic(evaluate(PLANTED_ALPHA, panel), compute_returns(panel))


def test_panel_shape_and_price_ordering(tmp_path):
    panel = synthetic_panel(300, 50, seed=7)
    write_panel(panel, tmp_path / "p.csv")
    loaded = load_panel(tmp_path / "p.csv")
    assert loaded.features == FEATURES
    assert loaded.feature("close").shape == (300, 50)
    o, h, l, c = (loaded.feature(f) for f in ("open", "high", "low", "close"))
    assert (h >= np.maximum(o, c)).all() and (np.minimum(o, c) >= l).all()
    assert np.isfinite(loaded.feature("volume")).all()


def test_deterministic():
    a, b = synthetic_panel(20, 5, seed=3), synthetic_panel(20, 5, seed=3)
    np.testing.assert_array_equal(a.feature("vwap"), b.feature("vwap"))
    assert not np.array_equal(a.feature("close"), synthetic_panel(20, 5, seed=4).feature("close"))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_planted_signal_strength(seed):
    assert abs(planted_ic(0.0, seed)) < 0.02
    assert planted_ic(0.3, seed) > 0.1


def test_bad_sizes():
    with pytest.raises(InvalidParameterError):
        synthetic_panel(0, 5)


class TestRandomAlphas:
    def test_all_parse_within_depth(self):
        exprs = random_alphas(100, max_depth=2, seed=1)
        assert len(exprs) == 100
        assert all(1 <= depth(parse(e)) <= 2 for e in exprs)

    def test_reproducible(self):
        assert random_alphas(30, seed=5) == random_alphas(30, seed=5)
        assert random_alphas(30, seed=5) != random_alphas(30, seed=6)

    def test_feature_restriction(self):
        exprs = random_alphas(50, seed=2, features=("close", "volume"))
        assert set().union(*(features_of(parse(e)) for e in exprs)) <= {"close", "volume"}
