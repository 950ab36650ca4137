import pytest

from fedswitch import orchestrator as orc
from fedswitch.config import parse_config
from fedswitch.metrics import COLUMNS, emit_metrics, parse_metrics, row_dict, write_rows


@pytest.fixture(scope="module")
def rows():
    cfg = parse_config(None, n_ues=3, n_modules=2, n_features=4, n_outputs=3, samples_per_ue=30,
                       constant_samples=300, mu_per_j=1e-3)
    return cfg, orc.run_experiment(cfg, "proposed", rounds=3, seeds=[0])


def test_header_only_for_empty_table(tmp_path):
    path = emit_metrics([], tmp_path / "empty.csv")
    assert path.read_text(encoding="utf-8") == ",".join(COLUMNS) + "\n"
    assert parse_metrics(path) == []


def test_stable_column_prefix():
    assert COLUMNS[:14] == ("round", "seed", "strategy", "phi_measured", "bound_total", "bound_term1",
                            "bound_term2", "bound_term3", "bound_term4", "energy_total_J", "success_rate",
                            "E_t_s", "inner_iters", "flags")


def test_round_trip_and_byte_identity(tmp_path, rows):
    cfg, table = rows
    a = write_rows(table, tmp_path / "a.csv", cfg.config_hash())
    parsed = parse_metrics(a)
    assert len(parsed) == len(table)
    for got, r in zip(parsed, table):
        ref = row_dict(r, cfg.config_hash())
        for key in COLUMNS:
            assert got[key] == (tuple(ref[key]) if key in ("A_n", "B_n") else ref[key]), key
    b = emit_metrics(parsed, tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()


def test_rejects_foreign_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        parse_metrics(p)
