import json

import numpy as np
import pytest

from twophase import fileio
from twophase.cli import dispatch


def run(argv):
    return dispatch([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    config = {"n": 1500, "seed": 12}
    (out / "sim.json").write_text(json.dumps(config))
    code = run(["simulate", "--config", out / "sim.json", "--out", out,
                "--seed", 12, "--with-series"])
    assert code == 0
    return out


class TestSimulateCli:
    def test_generates_expected_files(self, sim_dir):
        assert (sim_dir / "dyads.csv").exists()
        assert (sim_dir / "truth.csv").exists()
        assert (sim_dir / "measurements.csv").exists()
        assert len(fileio.read_dyads(sim_dir / "dyads.csv")) == 1500

    def test_idempotent_given_seed(self, sim_dir, tmp_path):
        code = run(["simulate", "--config", sim_dir / "sim.json", "--out",
                    tmp_path, "--seed", 12])
        assert code == 0
        assert (tmp_path / "dyads.csv").read_bytes() == \
            (sim_dir / "dyads.csv").read_bytes()

    def test_unknown_config_key_rejected(self, tmp_path):
        (tmp_path / "bad.json").write_text('{"n": 10, "bogus": 1}')
        code = run(["simulate", "--config", tmp_path / "bad.json",
                    "--out", tmp_path])
        assert code == 4

    def test_unknown_flag_rejected(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run(["simulate", "--nope", "x", "--out", tmp_path])
        assert exc.value.code == 2


class TestDesignCli:
    def test_corrupt_dyads_row_gives_parse_exit(self, tmp_path, capsys):
        bad = tmp_path / "dyads.csv"
        bad.write_text("id,y_star,delta_star,x_star\nr1,2.0,0,0.3\nr2,xx,1,0.2\n")
        (tmp_path / "strata.json").write_text('[{"id": "all", "bounds": {}}]')
        code = run(["design", "init", "--frame", "obesity", "--dyads", bad,
                    "--strata", tmp_path / "strata.json",
                    "--out", tmp_path / "ledger.json"])
        assert code == 4
        err = capsys.readouterr().err
        assert "error: parse:" in err and "row 3" in err

    def test_allocation_budget_identity(self, sim_dir, tmp_path):
        records = fileio.read_dyads(sim_dir / "dyads.csv")
        xs = sorted(r.x_star for r in records)
        cut = xs[len(xs) // 2]
        strata = [
            {"id": "ev", "bounds": {"delta_star": [0.5, None]}},
            {"id": "lo", "bounds": {"delta_star": [None, 0.5],
                                    "x_star": [None, cut]}},
            {"id": "hi", "bounds": {"delta_star": [None, 0.5],
                                    "x_star": [cut, None]}},
        ]
        (tmp_path / "strata.json").write_text(json.dumps(strata))
        assert run(["design", "init", "--frame", "obesity",
                    "--dyads", sim_dir / "dyads.csv",
                    "--strata", tmp_path / "strata.json",
                    "--out", tmp_path / "ledger.json", "--seed", 4]) == 0
        # Wave-1 influence from the phase-1 fit.
        assert run(["estimate", "--dyads", sim_dir / "dyads.csv",
                    "--model", "cox", "--method", "phase1",
                    "--out", tmp_path / "est_p1.csv",
                    "--emit-influence", tmp_path / "h.csv"]) == 0
        assert run(["design", "allocate", "--ledger", tmp_path / "ledger.json",
                    "--dyads", sim_dir / "dyads.csv",
                    "--influence", tmp_path / "h.csv",
                    "--target", 250, "--wave", 1,
                    "--out", tmp_path / "alloc.json"]) == 0
        alloc = fileio.read_allocation(tmp_path / "alloc.json")
        assert alloc["total"] == 250
        assert sum(alloc["draws"].values()) == 250

    def test_draw_then_reveal_then_ipw(self, sim_dir, tmp_path):
        self.test_allocation_budget_identity(sim_dir, tmp_path)
        assert run(["design", "draw", "--ledger", tmp_path / "ledger.json",
                    "--dyads", sim_dir / "dyads.csv",
                    "--allocation", tmp_path / "alloc.json",
                    "--seed", 99, "--out", tmp_path / "draw.json",
                    "--update-ledger", tmp_path / "ledger2.json"]) == 0
        assert run(["simulate", "reveal", "--dyads", sim_dir / "dyads.csv",
                    "--truth", sim_dir / "truth.csv",
                    "--draw", tmp_path / "draw.json",
                    "--out", tmp_path / "dyads2.csv"]) == 0
        assert run(["estimate", "--dyads", tmp_path / "dyads2.csv",
                    "--model", "cox", "--method", "ipw",
                    "--ledger", tmp_path / "ledger2.json",
                    "--out", tmp_path / "est_ipw.csv"]) == 0
        rows = fileio.read_estimates(tmp_path / "est_ipw.csv")
        assert rows[0]["estimator"] == "ipw_single"
        assert np.isfinite(rows[0]["beta"]) and rows[0]["se"] > 0

    def test_infeasible_allocation_exit_code(self, sim_dir, tmp_path):
        self.test_allocation_budget_identity(sim_dir, tmp_path)
        code = run(["design", "allocate", "--ledger", tmp_path / "ledger.json",
                    "--dyads", sim_dir / "dyads.csv",
                    "--influence", tmp_path / "h.csv",
                    "--target", 10 ** 6, "--wave", 1,
                    "--out", tmp_path / "nope.json"])
        assert code == 5


class TestFpcaCli:
    def test_fit_score_flag(self, sim_dir, tmp_path):
        assert run(["fpca", "fit", "--measurements", sim_dir / "measurements.csv",
                    "--out", tmp_path / "es.json", "--grid-size", "61"]) == 0
        system = fileio.read_eigensystem(tmp_path / "es.json")
        assert system.n_components >= 1
        assert run(["fpca", "score", "--measurements", sim_dir / "measurements.csv",
                    "--eigensystem", tmp_path / "es.json",
                    "--out", tmp_path / "scores.csv"]) == 0
        with open(tmp_path / "scores.csv") as fh:
            header = fh.readline().strip().split(",")
            first = fh.readline().strip().split(",")
        assert header[0] == "subject_id" and header[-1] == "weekly_gain"
        assert np.isfinite(float(first[-1]))
        assert run(["fpca", "flag", "--measurements", sim_dir / "measurements.csv",
                    "--eigensystem", tmp_path / "es.json",
                    "--out", tmp_path / "flags.csv"]) == 0

    def test_missing_file_is_io_error(self, tmp_path):
        code = run(["fpca", "fit", "--measurements", tmp_path / "nope.csv",
                    "--out", tmp_path / "es.json"])
        assert code == 3


def test_report_merges_estimates(tmp_path):
    fileio.write_estimates(tmp_path / "a.csv",
                           [("phase1", np.array([0.87]), np.array([0.18]))], ["x"])
    fileio.write_estimates(tmp_path / "b.csv",
                           [("raking_naive", np.array([1.06]), np.array([0.27]))],
                           ["x"])
    assert run(["report", "--inputs", tmp_path / "a.csv", tmp_path / "b.csv",
                "--out", tmp_path / "table.csv",
                "--text", tmp_path / "table.txt"]) == 0
    text = (tmp_path / "table.txt").read_text()
    assert "phase1" in text and "raking_naive" in text
    with open(tmp_path / "table.csv") as fh:
        header = fh.readline().strip().split(",")
    assert header == ["term", "phase1_beta", "phase1_se",
                      "raking_naive_beta", "raking_naive_se"]
