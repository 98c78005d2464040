import pytest
from hypothesis import given, settings, strategies as st

from waveguide_ip.config import (
    DEFAULTS, ConfigError, apply_override, config_hash, dump_config, parse_config,
)


def test_empty_document_gives_defaults():
    assert parse_config("") == DEFAULTS


def test_nested_merge_keeps_other_keys():
    cfg = parse_config("grid:\n  n_prime: 16\n")
    assert cfg["grid"]["n_prime"] == 16
    assert cfg["grid"]["n3"] == DEFAULTS["grid"]["n3"]


@pytest.mark.parametrize("text,field,line", [
    ("grid:\n  n_prime: 4\n", "grid.n_prime", 2),
    ("grid:\n  kind: hexagon\n", "grid.kind", 2),
    ("noise:\n  seed: 0\n  deltas: [-1]\n", "noise.deltas", 3),
    ("bogus: 1\n", "bogus", 1),
    ("grid:\n  offsets: [0.1, 0.2, 0.3, 0.4]\n", "grid.offsets", 2),
    ("potential:\n  q2:\n    center: [0, 0]\n    widths: 0.1\n    amplitude: 1\n",
     "potential.q2.center", 3),
])
def test_errors_name_field_and_line(text, field, line):
    with pytest.raises(ConfigError) as ei:
        parse_config(text)
    assert ei.value.field == field
    assert ei.value.line == line


def test_yaml_syntax_error_reports_line():
    with pytest.raises(ConfigError) as ei:
        parse_config("grid:\n  n_prime: [1, 2\n")
    assert ei.value.line is not None


def test_dump_roundtrip_and_hash():
    cfg = apply_override(DEFAULTS, "cgo.rho=[2.0, 3.0]")
    again = parse_config(dump_config(cfg))
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)
    assert config_hash(cfg) != config_hash(DEFAULTS)


@settings(max_examples=30, deadline=None)
@given(st.integers(16, 200), st.floats(0.1, 10.0), st.integers(0, 2 ** 31))
def test_override_roundtrip(n3, L, seed):
    cfg = DEFAULTS
    for item in (f"grid.n3={n3}", f"grid.L={L!r}", f"noise.seed={seed}"):
        cfg = apply_override(cfg, item)
    assert (cfg["grid"]["n3"], cfg["grid"]["L"], cfg["noise"]["seed"]) == (n3, L, seed)
    assert parse_config(dump_config(cfg)) == cfg


def test_bad_overrides():
    with pytest.raises(ConfigError):
        apply_override(DEFAULTS, "grid.nope=1")
    with pytest.raises(ConfigError):
        apply_override(DEFAULTS, "grid.n3")
    with pytest.raises(ConfigError):
        apply_override(DEFAULTS, "grid.L=-1")
