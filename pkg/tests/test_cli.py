import csv
import io
import json

import numpy as np
import pytest

from forcedbalance.cli import main
from forcedbalance.core import DesignError
from forcedbalance.io import (
    allocation_from_json,
    allocation_to_json,
    matrix_from_csv,
    matrix_from_json,
    matrix_to_csv,
    matrix_to_json,
    pairs_from_json,
    pairs_to_json,
    read_covariates,
)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def xfile(tmp_path):
    x = np.random.default_rng(3).standard_normal(10)
    path = tmp_path / "x.csv"
    path.write_text("x\n" + "\n".join(repr(float(v)) for v in x) + "\n")
    return path, x


class TestEnumerate:
    def test_n6_csv(self, capsys):
        code, out, _ = run(capsys, "enumerate", "--n", 6)
        rows = list(csv.reader(io.StringIO(out)))
        assert code == 0
        assert rows[0] == [str(i) for i in range(6)]
        assert len(rows) == 21
        assert all(sum(int(v) for v in r) == 0 for r in rows[1:])

    def test_n2_json(self, capsys):
        code, out, _ = run(capsys, "enumerate", "--n", 2, "--format", "json")
        assert code == 0 and json.loads(out) == [[-1, 1], [1, -1]]

    @pytest.mark.parametrize("args", [("--n", 5), ("--n", 12, "--max-n", 10), ("--n", 0)])
    def test_bad_input(self, capsys, args):
        code, _, err = run(capsys, "enumerate", *args)
        assert code == 2 and "error" in err

    def test_out_file(self, capsys, tmp_path):
        target = tmp_path / "w.txt"
        assert run(capsys, "enumerate", "--n", 4, "--format", "text", "--out", target)[0] == 0
        assert len(target.read_text().splitlines()) == 6


class TestCriteria:
    def test_zero_signal_mean(self, capsys, xfile):
        code, out, _ = run(capsys, "criteria", "--x", xfile[0], "--design", "crfb",
                           "--f-mode", "zero", "--sigma-z", 1.5)
        rep = json.loads(out)
        assert code == 0
        assert rep["mean_mse"] == pytest.approx(2.25 / 10)
        assert rep["R"] == pytest.approx(10 + 10 / 9)
        assert rep["B1"] == rep["B2"] == 0

    def test_pb_frobenius(self, capsys, xfile):
        code, out, _ = run(capsys, "criteria", "--x", xfile[0], "--design", "PB", "--sigma-z", 1)
        rep = json.loads(out)
        assert code == 0 and rep["R"] == 100 and rep["design"] == "PB"
        assert rep["B2"] == pytest.approx(10 * rep["B1"])

    def test_chebyshev_and_mc(self, capsys, xfile):
        code, out, _ = run(capsys, "criteria", "--x", xfile[0], "--design", "PM", "--sigma-z", 1,
                           "--c-mode", "chebyshev", "--q", 0.75, "--mc-draws", 500, "--seed", 1)
        rep = json.loads(out)
        assert code == 0
        assert rep["c_used"] == pytest.approx(2.0)
        assert rep["mc_quantile"] > 0

    def test_mc_requires_seed(self, capsys, xfile):
        code, _, err = run(capsys, "criteria", "--x", xfile[0], "--design", "PM", "--sigma-z", 1,
                           "--mc-draws", 100)
        assert code == 2 and "--seed" in err

    def test_text_format(self, capsys, xfile):
        code, out, _ = run(capsys, "criteria", "--x", xfile[0], "--design", "PM", "--sigma-z", 1,
                           "--format", "text")
        assert code == 0 and out.splitlines()[0].startswith("B1")

    def test_missing_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, "criteria", "--x", tmp_path / "none.csv", "--design", "PB",
                         "--sigma-z", 1)
        assert code == 2

    def test_greedy_needs_seed(self, capsys, xfile):
        code, _, err = run(capsys, "design", "--x", xfile[0], "--design", "PB",
                           "--pb-solver", "greedy")
        assert code == 2 and "--seed" in err


class TestDesign:
    def test_pb_json(self, capsys, xfile):
        code, out, _ = run(capsys, "design", "--x", xfile[0], "--design", "PB")
        d = json.loads(out)
        assert code == 0 and d["kind"] == "PB"
        w = np.array(d["allocations"])
        np.testing.assert_array_equal(w[0], -w[1])
        assert d["probs"] == [0.5, 0.5]

    def test_pm_pairs(self, capsys, xfile):
        code, out, _ = run(capsys, "design", "--x", xfile[0], "--design", "PM")
        d = json.loads(out)
        assert code == 0 and len(d["pairs"]) == 5 and len(d["allocations"]) == 32

    def test_odd_covariates(self, capsys, tmp_path):
        path = tmp_path / "x.json"
        path.write_text("[1, 2, 3]")
        assert run(capsys, "design", "--x", path, "--design", "CRFB")[0] == 2


class TestToy:
    def test_reference_text(self, capsys):
        code, out, _ = run(capsys, "toy", "--m", 3, "--a", 1.5, "--delta", 1)
        assert code == 0
        assert "0.5333" in out and "1.8000" in out and "0.5833" in out and "0.7500" in out

    def test_json(self, capsys):
        code, out, _ = run(capsys, "toy", "--m", 3, "--a", 1.5, "--delta", 1, "--format", "json")
        d = json.loads(out)
        np.testing.assert_allclose(d["formula"], [8 / 15, 1.8, 7 / 12, 0, 3, 0.75], atol=1e-12)
        assert d["max_abs_discrepancy"] < 1e-10

    def test_csv(self, capsys):
        code, out, _ = run(capsys, "toy", "--m", 2, "--a", 1, "--delta", 0, "--format", "csv")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert code == 0 and len(rows) == 4

    def test_bad_a(self, capsys):
        assert run(capsys, "toy", "--m", 3, "--a", 0, "--delta", 1)[0] == 2


class TestSimulate:
    ARGS = ("--preset", "baseline", "--n-z-draws", 150, "--n-w-draws", 20)

    def test_outputs_and_determinism(self, capsys, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(capsys, "simulate", *self.ARGS, "--seed", 3, "--out", a, "--threads", 1)[0] == 0
        assert run(capsys, "simulate", *self.ARGS, "--seed", 3, "--out", b, "--threads", 2,
                   "--summary")[0] == 0
        for name in ("result.json", "density.csv", "summary.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        result = json.loads((a / "result.json").read_text())
        assert result["config"]["seed"] == 3 and result["config"]["n_z_draws"] == 150
        rows = list(csv.DictReader(io.StringIO((a / "density.csv").read_text())))
        assert {r["design"] for r in rows} == {"CRFB", "PB", "PM"}

    def test_export(self, capsys, tmp_path):
        run(capsys, "simulate", *self.ARGS, "--seed", 1, "--out", tmp_path)
        code, out, _ = run(capsys, "export", "--result", tmp_path / "result.json", "--bins", 20)
        assert code == 0 and len(out.strip().splitlines()) == 61

    def test_config_file(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"name": "tiny", "n": 6, "n_z_draws": 50, "n_w_draws": 10,
                                   "designs": ["CRFB", "PM"]}))
        code, _, _ = run(capsys, "simulate", "--config", cfg, "--seed", 0, "--out", tmp_path / "o")
        assert code == 0
        assert set(json.loads((tmp_path / "o" / "result.json").read_text())["samples"]) == {"CRFB", "PM"}

    def test_missing_seed(self, capsys, tmp_path):
        code, _, err = run(capsys, "simulate", "--preset", "baseline", "--out", tmp_path)
        assert code == 2 and "--seed" in err

    def test_bad_preset(self, capsys, tmp_path):
        code, _, err = run(capsys, "simulate", "--preset", "huge", "--seed", 1, "--out", tmp_path)
        assert code == 2 and "baseline" in err

    def test_bad_config_key(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n": 6, "colour": "red"}))
        assert run(capsys, "simulate", "--config", cfg, "--seed", 0, "--out", tmp_path)[0] == 2


class TestIO:
    def test_matrix_csv_round_trip(self, rng):
        m = rng.standard_normal((5, 5))
        np.testing.assert_array_equal(matrix_from_csv(matrix_to_csv(m)), m)

    def test_matrix_json_round_trip(self, rng):
        m = rng.standard_normal((4, 4))
        text = matrix_to_json(m)
        assert json.loads(text)["n"] == 4
        np.testing.assert_array_equal(matrix_from_json(text), m)
        with pytest.raises(DesignError):
            matrix_from_json(json.dumps({"n": 3, "data": m.tolist()}))

    def test_allocation_and_pairs(self):
        w = np.array([1, -1, -1, 1])
        np.testing.assert_array_equal(allocation_from_json(allocation_to_json(w)), w)
        pairs = ((0, 3), (1, 2))
        assert tuple(map(tuple, pairs_from_json(pairs_to_json(pairs)))) == pairs

    def test_read_covariates_variants(self, tmp_path):
        (tmp_path / "a.csv").write_text("u,v\n1,2\n3,4\n")
        (tmp_path / "b.json").write_text(json.dumps({"data": [[1, 2], [3, 4]]}))
        (tmp_path / "c.csv").write_text("1\n2\n")
        np.testing.assert_array_equal(read_covariates(tmp_path / "a.csv"), [[1, 2], [3, 4]])
        np.testing.assert_array_equal(read_covariates(tmp_path / "b.json"), [[1, 2], [3, 4]])
        assert read_covariates(tmp_path / "c.csv").shape == (2, 1)
        (tmp_path / "d.csv").write_text("1\nabc\n")
        with pytest.raises(DesignError):
            read_covariates(tmp_path / "d.csv")
