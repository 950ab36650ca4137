import csv

import pytest

from fedswitch.cli import main

SMALL = ["--set", "n_ues=3", "--set", "n_modules=2", "--set", "n_features=4", "--set", "n_outputs=3",
         "--set", "samples_per_ue=30", "--set", "constant_samples=300", "--set", "rounds=2", "--set", "mu=1e-3"]


def test_run_twice_is_identical(tmp_path, capsys):
    assert main(["run", *SMALL, "--seed", "7", "--out", str(tmp_path / "a")]) == 0
    assert main(["run", *SMALL, "--seed", "7", "--out", str(tmp_path / "b")]) == 0
    (fa,) = (tmp_path / "a").glob("*.csv")
    (fb,) = (tmp_path / "b").glob("*.csv")
    assert fa.name == fb.name and fa.name.startswith("proposed_s7_")
    assert fa.read_bytes() == fb.read_bytes()
    assert "final_phi=" in capsys.readouterr().out


def test_run_with_toml_config(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("n_ues = 2\nn_modules = 2\nn_features = 4\nn_outputs = 3\nsamples_per_ue = 30\n"
                   "constant_samples = 300\nrounds = 1\ntheta_db = -5\n")
    assert main(["run", "--config", str(cfg), "--strategy", "greedy", "--out", str(tmp_path / "o")]) == 0
    assert len(list((tmp_path / "o").glob("greedy_s0_*.csv"))) == 1


def test_sweep_is_cartesian(tmp_path, capsys):
    out = tmp_path / "sweep"
    code = main(["sweep", *SMALL, "--vary", "K=2,3", "--strategy", "proposed,vanilla", "--seeds", "0",
                 "--out", str(out)])
    assert code == 0
    with open(out / "summary.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert {(r["varied"], r["strategy"]) for r in rows} == {
        ("n_ues=2", "proposed"), ("n_ues=2", "vanilla"), ("n_ues=3", "proposed"), ("n_ues=3", "vanilla")}
    assert len([p for p in out.glob("*.csv") if p.name != "summary.csv"]) == 4
    capsys.readouterr()


def test_sweep_validates_grid_before_running(tmp_path, capsys):
    assert main(["sweep", *SMALL, "--vary", "alpha=3.0,1.5", "--out", str(tmp_path / "s")]) == 2
    assert "alpha" in capsys.readouterr().err
    assert not (tmp_path / "s").exists()


def test_check_subset_exit_zero(capsys):
    assert main(["check", "--only", "4,6"]) == 0
    out = capsys.readouterr().out
    assert "[PASS]  4." in out and "[PASS]  6." in out and "2/2 checks passed" in out


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["run", "--set", "alpha=1.5"], ["run", "--set", "novalue"],
                                  ["check", "--only", "99"], ["run", "--config", "preset:missing"]])
def test_usage_errors_are_nonzero(argv, capsys):
    assert main(argv) != 0
    assert "usage" in capsys.readouterr().err


def test_plotdata_aggregates_seeds(tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(["run", *SMALL, "--seed", "0", "--seed", "1", "--out", str(out)]) == 0
    target = tmp_path / "series.csv"
    assert main(["plotdata", str(out), "--out", str(target)]) == 0
    with open(target, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and all(r["n_seeds"] == "2" for r in rows)
    assert float(rows[1]["energy_cum_mean_J"]) > float(rows[0]["energy_cum_mean_J"])
    capsys.readouterr()
