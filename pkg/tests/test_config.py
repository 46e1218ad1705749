import pytest

from dephtrap.config import PRESETS, ConfigError, load, parse, preset, serialize
from dephtrap.params import coefficient_for_critical_distance, mhz_over_2pi

MINIMAL = """
[scenario]
name = "custom"
[eit]
omega_p_mhz_over_2pi = 0.3
omega_c_mhz_over_2pi = 30
gamma_p_mhz_over_2pi = 1.35
[interactions]
d_c_s_um = 1.3
[gas]
shape = "cube"
side_um = 2.0
density_per_m3 = 1e21
[grid]
min_um = 2.0
max_um = 18.0
n = 64
"""


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_round_trip(name):
    cfg = preset(name)
    assert parse(serialize(cfg)) == cfg


def test_minimal_config_fills_defaults():
    cfg = parse(MINIMAL)
    assert cfg["gas"]["seed"] == 0
    assert cfg["kernels"]["mask"] == "auto"
    assert cfg["eit"]["delta_p_mhz_over_2pi"] == 0.0


def test_builders_convert_to_angular_units():
    cfg = parse(MINIMAL)
    eit = cfg.eit()
    assert eit.omega_c == pytest.approx(mhz_over_2pi(30.0))
    inter = cfg.interactions()
    assert inter.c6_us == pytest.approx(coefficient_for_critical_distance(eit, 1.3, "s"))
    assert inter.c4_up == 0.0
    assert cfg.interactions(100.0).c3_dd == pytest.approx(mhz_over_2pi(100.0))


@pytest.mark.parametrize("patch, message", [
    (("n = 64", "n = 100"), "power of two"),
    (("side_um = 2.0", "side = 2.0"), "unknown key"),
    (("omega_c_mhz_over_2pi = 30", "omega_c_mhz_over_2pi = \"30\""), "expected"),
    (("d_c_s_um = 1.3", "d_c_s_um = 1.3\nc6_us_mhz_um6_over_2pi = 5.0"), "either"),
    (("shape = \"cube\"", "shape = \"sphere\""), "unknown shape"),
    (("[grid]", "[mesh]"), "unknown section"),
    (("density_per_m3 = 1e21", "density_per_m3 = -1e21"), "density"),
])
def test_invalid_configs_raise(patch, message):
    text = MINIMAL.replace(*patch)
    with pytest.raises(ConfigError, match=message):
        parse(text)


def test_malformed_toml_is_a_config_error():
    with pytest.raises(ConfigError):
        parse("[scenario\nname=")


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "absent.toml")


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("no-such-preset")


def test_overrides_revalidate():
    cfg = preset("dimer-bind")
    assert cfg.with_overrides(gas={"seed": 9}).gas().seed == 9
    with pytest.raises(ConfigError):
        cfg.with_overrides(grid={"n": 3})


def test_load_from_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(MINIMAL)
    assert load(p).name == "custom"


def test_scenario_specific_keys_checked_on_use():
    cfg = parse(MINIMAL)
    with pytest.raises(ConfigError, match="t_final_us"):
        cfg.require("run", "t_final_us")
