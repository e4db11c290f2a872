"""Tests for TOML configuration loading and override application."""

import pytest

from planarbfm.config import (
    KNOWN_SECTIONS,
    ConfigError,
    apply_overrides,
    load_config,
    section,
)
from planarbfm.control import MaskCurriculumState
from planarbfm.distill import DistillConfig
from planarbfm.proxy import ProxyConfig
from planarbfm.residual import ResidualConfig


def write(tmp_path, text):
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


# -- file loading ------------------------------------------------------------
def test_load_sections(tmp_path):
    path = write(tmp_path, """
[proxy]
total_env_steps = 1000

[distill]
lam_kl = 0.002
""")
    cfg = load_config(path)
    assert section(cfg, "proxy") == {"total_env_steps": 1000}
    assert section(cfg, "distill") == {"lam_kl": 0.002}
    assert section(cfg, "residual") == {}


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.toml")


def test_invalid_toml(tmp_path):
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config(write(tmp_path, "[proxy\nbroken"))


def test_unknown_section(tmp_path):
    with pytest.raises(ConfigError, match="trainer"):
        load_config(write(tmp_path, "[trainer]\nlr = 0.1\n"))


def test_unknown_section_name():
    with pytest.raises(ConfigError, match="unknown config section"):
        section({}, "nonsense")


def test_known_sections_cover_stages():
    assert set(KNOWN_SECTIONS) == {
        "motions", "proxy", "distill", "residual", "eval", "latent", "steer"
    }


# -- overrides ---------------------------------------------------------------
def test_apply_overrides_flat():
    cfg = apply_overrides(ProxyConfig(), {"total_env_steps": 123, "lr": 1e-4})
    assert cfg.total_env_steps == 123
    assert cfg.lr == 1e-4
    # Original untouched (frozen dataclass, replace semantics).
    assert ProxyConfig().total_env_steps != 123


def test_apply_overrides_nested():
    cfg = apply_overrides(
        DistillConfig(),
        {"mask_curriculum": {"p_keep": 0.8, "decay": 0.9}},
    )
    assert cfg.mask_curriculum == MaskCurriculumState(p_keep=0.8, decay=0.9)
    assert cfg.lam_kl == DistillConfig().lam_kl


def test_apply_overrides_nested_curriculum_residual():
    cfg = apply_overrides(ResidualConfig(), {"curriculum": {"tau_end": 0.25}})
    assert cfg.curriculum.tau_end == 0.25
    assert cfg.curriculum.tau_start == ResidualConfig().curriculum.tau_start


def test_int_to_float_coercion():
    cfg = apply_overrides(DistillConfig(), {"lam_kl": 1})
    assert cfg.lam_kl == 1.0
    assert isinstance(cfg.lam_kl, float)


def test_list_to_tuple_coercion():
    cfg = apply_overrides(ResidualConfig(), {"hidden": [64, 64]})
    assert cfg.hidden == (64, 64)


def test_unknown_key_lists_valid():
    with pytest.raises(ConfigError, match="valid keys"):
        apply_overrides(ProxyConfig(), {"learning_rate": 1e-3})


def test_unknown_nested_key_includes_path():
    with pytest.raises(ConfigError, match="mask_curriculum.p"):
        apply_overrides(DistillConfig(), {"mask_curriculum": {"p": 0.7}})


def test_type_errors():
    with pytest.raises(ConfigError, match="expected integer"):
        apply_overrides(ProxyConfig(), {"total_env_steps": 1.5})
    with pytest.raises(ConfigError, match="expected number"):
        apply_overrides(ProxyConfig(), {"lr": "fast"})
    with pytest.raises(ConfigError, match="expected integer"):
        apply_overrides(ProxyConfig(), {"total_env_steps": True})


def test_nested_requires_table():
    with pytest.raises(ConfigError, match="expected a table"):
        apply_overrides(DistillConfig(), {"mask_curriculum": 0.5})


def test_not_a_dataclass():
    with pytest.raises(ConfigError, match="not a config object"):
        apply_overrides({"lr": 1}, {"lr": 2})
