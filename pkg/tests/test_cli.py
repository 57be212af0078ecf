import json
import math

import numpy as np
import pytest

from gfbgg.cli import EXIT_CONVERGENCE, EXIT_DATA, EXIT_OK, fit_table, main, to_json
from gfbgg.data import EMBEDDED, dataset_to_csv, ingest_csv, load_embedded, parse_csv_text
from gfbgg.fit import FitResult
from gfbgg.inference import Interval, IntervalSet
from gfbgg.model import DataError, ModelFamily
from gfbgg.simulate import SimConfig, simulate_dataset
from gfbgg.study import truth_for


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestData:
    def test_three_row_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("y1,y2\n1.0,2.0\n3.0,0.5\n2.5,4\n")
        d = ingest_csv(p)
        assert d.n == 3 and (d.n1, d.n2) == (1, 2)

    def test_header_optional(self):
        assert parse_csv_text("1,2\n3,1\n").n == 2

    @pytest.mark.parametrize("text,line", [("y1,y2\n1,2\n0,3\n", 3), ("1,2\n2,x\n", 2), ("1,2,3\n", 1),
                                           ("y1,y2\n1,2\n\n-1,2\n", 4), ("1,2\n2,2\n", 2)])
    def test_errors_name_line(self, text, line):
        with pytest.raises(DataError) as info:
            parse_csv_text(text)
        assert info.value.row == line
        assert f"line {line}" in str(info.value)

    def test_nuclear_scaling(self):
        d = load_embedded("nuclear")
        assert d.n == 30
        assert d.y1[0] == pytest.approx(353.04 / 365, rel=1e-15)
        assert d.y1[0] == pytest.approx(0.96723, abs=1e-5)
        assert d.y2[0] == 4.37
        both = load_embedded("nuclear", scale_y2=365.0)
        assert both.y2[0] == pytest.approx(4.37 / 365, rel=1e-15)
        raw = load_embedded("nuclear", scale_y1=1.0)
        assert raw.y1[0] == 353.04

    def test_embedded_sizes_and_tie(self):
        assert len(EMBEDDED["nuclear"].rows) == 30
        assert len(EMBEDDED["simulated-gfbgg"].rows) == 200
        d = load_embedded("simulated-gfbgg")
        assert d.n == 200 and not np.any(d.y1 == d.y2)
        with pytest.raises(DataError):
            load_embedded("simulated-gfbgg", jitter_ties=0.0)
        with pytest.raises(DataError):
            load_embedded("missing")

    def test_csv_round_trip_exact(self, tmp_path):
        fam = ModelFamily.parse("M42")
        d = simulate_dataset(SimConfig(fam.build(truth_for(fam)), 50, seed=3))
        p = tmp_path / "sim.csv"
        p.write_text(dataset_to_csv(d))
        assert ingest_csv(p) == d


class TestSerialization:
    def test_json_deterministic_and_sorted(self):
        obj = {"b": 1.0 / 3.0, "a": [1, 2.5, math.nan], "c": {"z": True, "y": None}}
        text = to_json(obj)
        assert text == to_json(obj)
        back = json.loads(text)
        assert list(back) == ["a", "b", "c"] and list(back["c"]) == ["y", "z"]
        assert back["b"] == 1.0 / 3.0
        assert "0.33333333333333331" in text
        assert back["a"][2] is None

    def _result(self):
        fam = ModelFamily.parse("M1")
        return FitResult(fam, truth_for(fam), -120.0, 4, 10, True, "direct", n_obs=100)

    def test_table_layout_with_intervals(self):
        res = self._result()
        ints = IntervalSet({n: Interval(v, 0.01, v - 0.02, v + 0.02, 0.95, "bootstrap-percentile")
                            for n, v in res.estimates.items()}, 0.95, "bootstrap-parametric")
        lines = fit_table(res, ints).splitlines()
        labels = [ln.split()[0] for ln in lines[2:]]
        assert labels == ["MLE", "Boot", "Boot", "Boot"]
        assert [ln.split()[1] for ln in lines[3:]] == ["SE", "LL", "UL"]
        assert lines[2].split()[1:5] == ["0.300", "0.400", "0.500", "1.000"]
        assert "248.000" in lines[2]

    def test_table_without_intervals(self):
        res = self._result()
        empty = IntervalSet({}, 0.95, "wald")
        for ints in (None, empty):
            lines = fit_table(res, ints).splitlines()
            assert len(lines) == 3 and lines[2].split()[0] == "MLE"


class TestCommands:
    def test_simulate_is_deterministic(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for p in (a, b):
            assert _run(capsys, "simulate", "--model", "M14", "--n", "40", "--seed", "5", "--out", str(p))[0] == EXIT_OK
        assert a.read_bytes() == b.read_bytes()
        side = json.loads((tmp_path / "a.csv.json").read_text())
        assert side["config"]["seed"] == 5
        assert ingest_csv(a).n == 40

    def test_fit_json_reproducible(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        main(["simulate", "--model", "M1", "--n", "60", "--seed", "2", "--out", str(data)])
        capsys.readouterr()
        outs = []
        for _ in range(2):
            code, out, _ = _run(capsys, "fit", "--model", "M1", "--data", str(data), "--ci", "louis",
                                "--mc-size", "200", "--seed", "3")
            assert code == EXIT_OK
            outs.append(out)
        assert outs[0] == outs[1]
        rep = json.loads(outs[0])
        assert rep["converged"] and rep["seed"] == 3 and rep["n"] == 60
        assert rep["intervals"]["method"] == "wald"
        assert rep["criteria"]["aic"] == pytest.approx(8 - 2 * rep["loglik"], rel=1e-14)

    def test_fit_table_output(self, capsys):
        code, out, _ = _run(capsys, "fit", "--model", "M1", "--dataset", "nuclear", "--format", "table")
        assert code == EXIT_OK
        assert out.splitlines()[2].lstrip().startswith("MLE")

    def test_loglik_matches_library(self, capsys):
        fam = ModelFamily.parse("M12")
        p = {"theta1": 3.751, "theta2": 108.749, "theta1_star": 0.663, "theta2_star": 12.674,
             "theta_b_star": 0.379, "k": 110.001}
        code, out, _ = _run(capsys, "loglik", "--model", "M12", "--dataset", "nuclear", "--scale-y2", "365",
                            "--params", json.dumps(p))
        assert code == EXIT_OK
        ll = json.loads(out)["loglik"]
        assert 2 * fam.n_params - 2 * ll == pytest.approx(-175.469, abs=2e-3)

    def test_select_small_grid(self, capsys):
        code, out, _ = _run(capsys, "select", "--dataset", "nuclear", "--grid", "M1,M2", "--criteria", "bic",
                            "--format", "table")
        assert code == EXIT_OK
        lines = out.splitlines()
        assert lines[0].split()[:2] == ["rank", "model"]
        assert lines[-1].startswith("best  BIC:")

    def test_study_params(self, tmp_path, capsys):
        design = tmp_path / "design.json"
        design.write_text(json.dumps({"parent": "M1", "n": 40, "replicates": 2, "ci_method": "none"}))
        prefix = str(tmp_path / "run")
        code, _, _ = _run(capsys, "study", "params", "--design", str(design), "--out-prefix", prefix)
        assert code == EXIT_OK
        for suffix in ("_table.csv", "_raw.csv", "_report.json"):
            assert (tmp_path / f"run{suffix}").exists()

    def test_exit_code_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("y1,y2\n1,2\n0,1\n")
        code, _, err = _run(capsys, "fit", "--model", "M1", "--data", str(bad))
        assert code == EXIT_DATA and "line 3" in err
        code, _, _ = _run(capsys, "fit", "--model", "M1", "--data", str(tmp_path / "missing.csv"))
        assert code == EXIT_DATA
        code, _, _ = _run(capsys, "fit", "--model", "M99", "--dataset", "nuclear")
        assert code == EXIT_DATA

    def test_exit_code_convergence(self, tmp_path, capsys):
        one_sided = tmp_path / "one.csv"
        one_sided.write_text("2,1\n3,1\n4,0.5\n")
        code, out, _ = _run(capsys, "fit", "--model", "M1", "--data", str(one_sided))
        assert code == EXIT_CONVERGENCE
        assert json.loads(out)["converged"] is False
