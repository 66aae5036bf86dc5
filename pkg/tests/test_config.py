import numpy as np
import pytest

from nrhc.config import (ConfigError, NON_BENCHMARK_KEYS, ScenarioConfig, bundled_scenario,
                         config_from_dict, config_from_header, defaulted_keys, header_lines,
                         parse_config, parse_text, to_sim_config, to_toml, with_override)
from nrhc.dynamics import RobotParams


def test_bundled_matched_scenario():
    cfg = parse_config(bundled_scenario("matched"))
    assert cfg.name == "matched"
    assert cfg.controller.variant == "basic"
    assert cfg.controller.q_w == 1e7 and cfg.controller.r_w == 1e-14 and cfg.controller.h == 1e-3
    assert cfg.reference.omega == (10.0, 10.0) and cfg.reference.xi == (1.0, 1.0)
    assert cfg.plant.params() == RobotParams.benchmark_arm()
    assert not cfg.friction.enabled and not cfg.observer.enabled


@pytest.mark.parametrize("name", ["matched", "mismatched", "integral", "observer"])
def test_bundled_scenarios_build(name):
    sim = to_sim_config(parse_config(bundled_scenario(name)))
    assert sim.dt == 1e-4 and sim.t_end == 4.0


def test_mismatched_payload_applied():
    cfg = parse_config(bundled_scenario("mismatched"))
    p = cfg.plant.params().links[1]
    assert p.mass == pytest.approx(10.0)
    assert p.com == pytest.approx(1.0)  # 0.5 + 0.5, the centre of mass moves to the tip
    assert cfg.friction.enabled and cfg.friction.fs == (5.0, 5.0)


def test_missing_bundled_scenario():
    with pytest.raises(FileNotFoundError):
        bundled_scenario("nope")


def test_empty_file_is_all_defaults():
    cfg = parse_text("")
    assert cfg == ScenarioConfig()
    keys = defaulted_keys(cfg)
    for k in ("simulation.dt", "controller.q_w", "plant.link1.mass", "observer.poles"):
        assert k in keys


def test_defaulted_keys_exclude_given_values():
    cfg = parse_text("[controller]\nh = 0.002\n[simulation]\ndt = 1e-4\n")
    keys = defaulted_keys(cfg)
    assert "controller.h" not in keys and "simulation.dt" not in keys
    assert "controller.q_w" in keys and "simulation.t_end" in keys


def test_negative_mass_reported_with_path():
    with pytest.raises(ConfigError) as ei:
        parse_text("[plant.link1]\nmass = -1.0\nlength = 1.0\ncom = 0.5\ninertia = 1.0\n", "bad.toml")
    assert "bad.toml: plant.link1.mass" in str(ei.value)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as ei:
        parse_text("[controller]\ngain = 3\n")
    assert "controller.gain" in str(ei.value)
    with pytest.raises(ConfigError):
        parse_text("[nonsense]\nx = 1\n")


def test_toml_syntax_error_has_position():
    with pytest.raises(ConfigError) as ei:
        parse_text("[controller\nh = 1\n", "x.toml")
    msg = str(ei.value)
    assert msg.startswith("x.toml") and "line 1" in msg


@pytest.mark.parametrize("text,path", [
    ("[simulation]\ndt = 1e-3\nt_end = 5e-3\n", "t_end"),
    ("[controller]\nh = 0\n", "controller.h"),
    ("[controller]\nvariant = \"pid\"\n", "controller.variant"),
    ("[observer]\npoles = [-0.4, 0.1]\n", "poles"),
    ("[plant.link2]\nmass = 5.0\nlength = 1.0\ncom = 1.5\ninertia = 0.4\n", "com"),
    ("[plant.payload]\ndm2 = -6.0\n", "plant"),
    ("[simulation]\nlog_stride = 0\n", "simulation.log_stride"),
])
def test_invalid_values(text, path):
    with pytest.raises(ConfigError) as ei:
        parse_text(text)
    assert path in str(ei.value)


def test_missing_file_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        parse_config(tmp_path / "absent.scenario")


def test_header_round_trip(tmp_path):
    cfg = parse_config(bundled_scenario("observer"))
    lines = header_lines(cfg, "some title")
    path = tmp_path / "out.csv"
    path.write_text("\n".join(lines) + "\nt,q1\n0,0\n")
    assert config_from_header(path) == cfg
    assert any(ln.startswith("# # defaulted:") for ln in lines)
    assert any(all(k in ln for k in NON_BENCHMARK_KEYS) for ln in lines)


def test_toml_round_trip():
    cfg = parse_config(bundled_scenario("integral"))
    assert parse_text(to_toml(cfg)) == cfg


def test_with_override():
    cfg = parse_config(bundled_scenario("matched"))
    new = with_override(cfg, "controller.h", 0.002)
    assert new.controller.h == 0.002 and cfg.controller.h == 1e-3
    assert with_override(cfg, "metrics.torque_limit", 500.0).metrics.torque_limit == 500.0
    with pytest.raises(ConfigError):
        with_override(cfg, "controller.nope", 1.0)
    with pytest.raises(ConfigError):
        with_override(cfg, "controller.h", -1.0)


def test_to_sim_config_wiring():
    cfg = config_from_dict({"controller": {"variant": "computed_torque", "r_w": 0.5},
                            "friction": {"enabled": True},
                            "observer": {"enabled": True, "initial_qhat": [0.02, -0.01]},
                            "initial": {"q": [0.1, 0.2]}})
    sim = to_sim_config(cfg)
    # the computed-torque law is the r_w = 0 member of the family
    assert sim.controller.r_w == 0.0 and sim.controller.variant == "computed_torque"
    assert sim.friction is not None and sim.use_observer
    np.testing.assert_array_equal(sim.initial.q, [0.1, 0.2])
    np.testing.assert_array_equal(sim.observer_initial.zhat[0::2], [0.02, -0.01])


def test_sim_config_errors_become_config_errors():
    cfg = config_from_dict({"controller": {"sample_period": 1.5e-4}})
    with pytest.raises(ConfigError):
        to_sim_config(cfg)
