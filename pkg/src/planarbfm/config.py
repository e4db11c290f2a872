"""TOML experiment configuration applied over the frozen config dataclasses.

A config file holds one table per pipeline stage, with dotted keys reaching
into nested configs:

    [proxy]
    total_env_steps = 500_000
    n_envs = 128

    [proxy.dr]
    push_probability = 0.0

    [distill]
    lam_kl = 1e-3

Unknown sections, unknown keys, and type mismatches are hard errors — a
typo must never silently train with defaults.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import tomli

__all__ = ["ConfigError", "KNOWN_SECTIONS", "apply_overrides", "load_config", "section"]

KNOWN_SECTIONS = ("motions", "proxy", "distill", "residual", "eval", "latent", "steer")


class ConfigError(ValueError):
    pass


def load_config(path: str | Path) -> dict:
    """Parse a TOML file and reject sections this project does not use."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as f:
            data = tomli.load(f)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{path}: invalid TOML: {e}") from None
    unknown = set(data) - set(KNOWN_SECTIONS)
    if unknown:
        raise ConfigError(
            f"{path}: unknown section(s) {sorted(unknown)}; "
            f"known sections: {list(KNOWN_SECTIONS)}"
        )
    return data


def section(config: dict, name: str) -> dict:
    if name not in KNOWN_SECTIONS:
        raise ConfigError(f"unknown config section {name!r}")
    return config.get(name, {})


def _coerce(current, value, path: str):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected bool, got {type(value).__name__}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {type(value).__name__}")
        return float(value)
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected integer, got {type(value).__name__}")
        return value
    if isinstance(current, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected array, got {type(value).__name__}")
        return tuple(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {type(value).__name__}")
        return value
    if current is None:
        return value
    raise ConfigError(f"{path}: cannot override field of type {type(current).__name__}")


def apply_overrides(config, overrides: dict, _path: str = ""):
    """Return a copy of a (frozen) config dataclass with overrides applied.

    Nested tables recurse into nested config dataclasses; every key must
    name an existing field.
    """
    if not dataclasses.is_dataclass(config):
        raise ConfigError(f"{_path or 'config'}: not a config object")
    names = {f.name for f in dataclasses.fields(config)}
    changes = {}
    for key, value in overrides.items():
        path = f"{_path}.{key}" if _path else key
        if key not in names:
            raise ConfigError(
                f"unknown config key {path!r}; valid keys: {sorted(names)}"
            )
        current = getattr(config, key)
        if dataclasses.is_dataclass(current) and not isinstance(current, type):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: expected a table for nested config")
            changes[key] = apply_overrides(current, value, path)
        else:
            changes[key] = _coerce(current, value, path)
    return dataclasses.replace(config, **changes)
