from __future__ import annotations

import csv
import json

import jsonschema
import pytest

from alphaeval.cli import main
from alphaeval.expr import parse
from alphaeval.panel import load_panel
from alphaeval.report import load_schema

ALPHAS = [
    "Mean(close, 5)",
    "Std(open, 10)",
    "Corr(close, volume, 10)",
    "Rank(Delta(vwap, 2), 7)",
    "Div(Sub(open, close), open)",
    "WMA(high, 4)",
    "Log(volume)",
    "Slope(low, 8)",
    "Mean(close,",
    "EMA(Abs(Delta(close, 1)), 6)",
]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "-T", "90", "-N", "12", "--seed", "3", "--signal-strength", "0.2", "--out", str(d / "p.csv")]) == 0
    (d / "alphas.txt").write_text("\n".join(ALPHAS) + "\n", encoding="utf-8")
    (d / "good.txt").write_text("\n".join(a for a in ALPHAS if a != "Mean(close,") + "\n", encoding="utf-8")
    (d / "mock.json").write_text(json.dumps({"Mean(close, 5)": [72, "trend"], "*": 60}), encoding="utf-8")
    return d


def run_eval(d, *extra, alphas="alphas.txt", out="r.json"):
    argv = ["eval", "--panel", str(d / "p.csv"), "--alphas", str(d / alphas), "--out", str(d / out), "--trials", "2", "--k", "3"]
    return main(argv + list(extra))


class TestSynthAndAlphas:
    def test_synth_loads(self, workdir):
        assert load_panel(workdir / "p.csv").feature("close").shape == (90, 12)

    def test_synth_bad_size_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["synth", "-T", "0", "-N", "3", "--out", str(tmp_path / "x.csv")])
        assert info.value.code == 2

    def test_random_alphas(self, workdir, capsys):
        assert main(["random-alphas", "--count", "100", "--seed", "4", "--max-depth", "2"]) == 0
        first = capsys.readouterr().out.splitlines()
        assert len(first) == 100 and all(parse(line) for line in first)
        main(["random-alphas", "--count", "100", "--seed", "4", "--max-depth", "2", "--out", str(workdir / "ra.txt")])
        assert (workdir / "ra.txt").read_text(encoding="utf-8").splitlines() == first


class TestEval:
    def test_partial_failure(self, workdir, capsys):
        assert run_eval(workdir) == 2
        io = capsys.readouterr()
        assert io.out.startswith("scored 9/10 alphas")
        assert "Mean(close," in io.err
        doc = json.loads((workdir / "r.json").read_text(encoding="utf-8"))
        jsonschema.validate(doc, load_schema())
        assert [a["expression"] for a in doc["alphas"]] == ALPHAS
        assert sum(1 for a in doc["alphas"] if not a["errors"]) == 9
        assert all(a["logic"] is None for a in doc["alphas"])
        assert doc["dh"] is not None

    def test_mock_logic_top_and_dump(self, workdir, capsys):
        code = run_eval(workdir, "--logic", "--llm-mock", str(workdir / "mock.json"), "--top", "3", "--dump-signals",
                        str(workdir / "sig"), alphas="good.txt", out="m.json")
        assert code == 0
        doc = json.loads((workdir / "m.json").read_text(encoding="utf-8"))
        logic = {a["expression"]: a["logic"] for a in doc["alphas"]}
        assert logic["Mean(close, 5)"] == 72 and logic["Log(volume)"] == 60
        assert len(doc["selected"]) == 3
        with open(workdir / "sig" / "0.csv", newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["date", "symbol", "value"] and len(rows) > 1

    def test_worker_count_does_not_change_bytes(self, workdir):
        run_eval(workdir, "--workers", "1", alphas="good.txt", out="w1.json")
        run_eval(workdir, "--workers", "2", alphas="good.txt", out="w2.json")
        assert (workdir / "w1.json").read_bytes() == (workdir / "w2.json").read_bytes()

    def test_missing_panel_is_fatal(self, workdir, capsys):
        code = main(["eval", "--panel", str(workdir / "nope.csv"), "--alphas", str(workdir / "alphas.txt"), "--out",
                     str(workdir / "x.json")])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_bad_weights_rejected(self, workdir):
        with pytest.raises(SystemExit):
            run_eval(workdir, "--weights", "1,1,1,1,1")


class TestBacktest:
    def bt(self, d, *extra, alphas="good.txt"):
        argv = ["backtest", "--panel", str(d / "p.csv"), "--alphas", str(d / alphas), "--out", str(d / "bt.json"),
                "--k", "3", "--trials", "2"]
        return main(argv + list(extra))

    def test_table_and_combination(self, workdir, capsys):
        assert self.bt(workdir, "--combine", "--top", "3", "--dump-nav", str(workdir / "nav")) == 0
        out = capsys.readouterr().out
        assert out.count("AR ") == 10 and out.rstrip().endswith("combined")
        doc = json.loads((workdir / "bt.json").read_text(encoding="utf-8"))
        assert len(doc["combined"]["members"]) == 3
        with open(workdir / "nav" / "combined.csv", newline="", encoding="utf-8") as fh:
            assert next(csv.reader(fh)) == ["date", "r", "nav"]

    def test_failure_row(self, workdir, capsys):
        assert self.bt(workdir, alphas="alphas.txt") == 2
        assert "FAILED  Mean(close,:" in capsys.readouterr().out

    def test_undefined_sharpe_is_printed(self, tmp_path, capsys):
        (tmp_path / "p.csv").write_text(
            "date,symbol,close\n" + "".join(f"2020-01-0{t + 1},{s},1.0\n" for t in range(5) for s in "AB"), encoding="utf-8"
        )
        (tmp_path / "a.txt").write_text("close\n", encoding="utf-8")
        code = main(["backtest", "--panel", str(tmp_path / "p.csv"), "--alphas", str(tmp_path / "a.txt"), "--out",
                     str(tmp_path / "o.json"), "--k", "1"])
        assert code == 0
        assert "SR undefined" in capsys.readouterr().out
