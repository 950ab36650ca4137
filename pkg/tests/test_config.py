import math

import pytest

from fedswitch.config import ConfigError, ExperimentConfig, load_preset, parse_config, preset_names


def test_empty_source_gives_defaults(tmp_path):
    empty = tmp_path / "empty.toml"
    empty.write_text("")
    c = parse_config(empty)
    assert c == ExperimentConfig() == parse_config(None)
    assert c.cpu_frequency_hz == 1.5e9 and c.alpha == 3.8 and c.subscription_cap == 1
    assert c.local_iterations == 4 and c.participation_floor == 0.1 and c.bandwidth_hz == 1e9
    assert c.capacitance_coeff == 1e-27 and c.cycles_per_bit == 737.5
    assert c.noise_density_w_per_hz == pytest.approx(10 ** -16.2 * 1e-3, rel=1e-15)
    assert c.p_max_w == 0.2 and c.e_min_s == 5e-3 and c.n_modules == 4


def test_db_conversion():
    assert parse_config("theta_db = -5\n").theta == pytest.approx(10**-0.5, rel=1e-15)
    assert parse_config(None, noise_density_db=-192).noise_density_w_per_hz == pytest.approx(10**-19.2)
    with pytest.raises(ConfigError, match="theta_db"):
        parse_config(None, theta_db=-5, theta=0.3)


@pytest.mark.parametrize("override, key", [
    ({"alpha": 1.5}, "alpha"),
    ({"bogus_key": 1}, "bogus_key"),
    ({"p_max_dbm": 23}, "p_max_dbm"),
    ({"p_min_w": 0.5}, "p_min_w"),
    ({"n_ues": 0}, "n_ues"),
    ({"strategy": "best"}, "strategy"),
    ({"subscription_cap": 5}, "subscription_cap"),
    ({"participation_floor": 0.3}, "participation_floor"),
    ({"seeds": [-1]}, "seeds"),
    ({"omega": 1.0}, "omega"),
])
def test_errors_name_the_key(override, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(None, **override)


def test_nested_tables_rejected():
    with pytest.raises(ConfigError, match="radio"):
        parse_config("[radio]\nalpha = 3.0\n")


def test_aliases_and_coercions():
    assert parse_config(None, strategy="vanilla-fedlora").strategy == "vanilla"
    assert parse_config(None, strategy="one_shot").strategy == "one-shot"
    c = parse_config("rounds = 10.0\nseeds = 3\nbandwidth_hz = 2000000\n")
    assert c.rounds == 10 and c.seeds == (3,) and isinstance(c.bandwidth_hz, float)


def test_hash_ignores_output_and_seeds():
    a = parse_config(None)
    assert a.config_hash() == a.replace(output_dir="elsewhere", seeds=(4, 5)).config_hash()
    assert a.config_hash() != a.replace(mu_per_j=2.0).config_hash()
    assert len(a.config_hash()) == 16


def test_derived_sizes():
    c = parse_config(None, n_features=6, n_outputs=3, adapter_rank=2)
    assert c.upload_bits == 2 * c.adapter_bits_per_rank
    assert c.model_bits == 32.0 * 18 + c.upload_bits
    assert parse_config(None, adapter_rank=0).rank is None
    assert c.guard_radius_m == c.cell_radius_m


def test_presets_load():
    names = preset_names()
    assert {"bound_dominance", "switching_strategies", "power_control_energy", "degenerate_gd"} <= set(names)
    for name in names:
        assert isinstance(load_preset(name), ExperimentConfig)
    assert load_preset("degenerate_gd", rounds=3).rounds == 3
    with pytest.raises(ConfigError, match="unknown preset"):
        load_preset("nope")


def test_round_trip_through_dict():
    c = load_preset("switching_strategies")
    assert parse_config(c.to_dict()) == c
    assert math.isfinite(c.theta)
