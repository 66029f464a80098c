import dataclasses

import pytest

from stresspath.config import Config, ConfigError, FEA_KEYS, dump_config, from_dict, parse_config


def write(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    return p


def test_empty_file_gives_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, ""))
    d = Config()
    assert (cfg.theta_a, cfg.theta_s, cfg.layer_height, cfg.line_spacing, cfg.contour_count, cfg.smoothing,
            cfg.poisson_ratio) == (3.0, 0.1, 0.1, 0.4, 2, 0.95, 0.3)
    assert dataclasses.asdict(cfg) == dataclasses.asdict(d)


def test_single_override(tmp_path):
    cfg = parse_config(write(tmp_path, "theta_a = 15\n"))
    a, b = dataclasses.asdict(cfg), dataclasses.asdict(Config())
    assert cfg.theta_a == 15.0
    assert {k for k in a if a[k] != b[k]} == {"theta_a"}


def test_poisson_range(tmp_path):
    with pytest.raises(ConfigError, match="poisson_ratio"):
        parse_config(write(tmp_path, "poisson_ratio = 0.7\n"))


@pytest.mark.parametrize("text, key", [
    ("layer_height = 0\n", "layer_height"),
    ("layer_height = -0.1\n", "layer_height"),
    ("line_spacing = 0\n", "line_spacing"),
    ("smoothing = 1.5\n", "smoothing"),
    ("theta_s = 0\n", "theta_s"),
    ("jobs = 0\n", "jobs"),
    ("geometry = \"torus\"\n", "geometry"),
    ("fixed = [\"left\"]\n", "fixed"),
    ("load = [1, 2]\n", "load"),
])
def test_validation_errors(tmp_path, text, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(write(tmp_path, text))


def test_unknown_key(tmp_path):
    with pytest.raises(ConfigError, match="thetaa"):
        parse_config(write(tmp_path, "thetaa = 3\n"))


def test_type_error_names_key(tmp_path):
    with pytest.raises(ConfigError, match="contour_count"):
        parse_config(write(tmp_path, "contour_count = \"two\"\n"))
    with pytest.raises(ConfigError, match="contour_count"):
        parse_config(write(tmp_path, "contour_count = 2.5\n"))
    with pytest.raises(ConfigError, match="write_svg"):
        parse_config(write(tmp_path, "write_svg = 1\n"))


def test_tables_and_syntax_rejected(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, "[material]\nyoung_modulus = 3\n"))
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, "theta_a = = 3\n"))
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "nope.toml")


def test_missing_mesh(tmp_path):
    with pytest.raises(ConfigError, match="mesh"):
        parse_config(write(tmp_path, "mesh = \"part.node\"\n"))


def test_dump_round_trip(tmp_path):
    cfg = from_dict({"theta_a": 4, "base": "zmin", "write_svg": False})
    assert cfg.base == ["zmin"]
    back = parse_config(write(tmp_path, dump_config(cfg)))
    assert dataclasses.asdict(back) == dataclasses.asdict(cfg)


def test_digest_keys():
    a = Config()
    assert a.digest(FEA_KEYS) == dataclasses.replace(a, young_modulus=5.0).digest(FEA_KEYS)
    assert a.digest(FEA_KEYS) != dataclasses.replace(a, load=[0.0, 100.0, 0.0]).digest(FEA_KEYS)
    assert a.lift() == a.layer_height and a.field_eps() is None
