"""Run configuration: one nested defaults tree mirroring every tunable
default, overridable by config file (JSON or TOML), then ROG_* environment
variables, then explicit CLI overrides. Unknown keys are rejected and the
fully resolved tree is echoed into every output manifest.
"""

from __future__ import annotations

import copy
import json
import os

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python 3.10
    try:
        import tomli as _toml
    except ModuleNotFoundError:
        _toml = None

ENV_PREFIX = "ROG_"

DEFAULTS = {
    "diffusion": {
        "steps": 1000,
        "beta_start": 1e-4,
        "beta_end": 0.02,
    },
    "generator": {
        "width": 128,
        "layers": 4,
        "heads": 4,
        "vocab": 5,
    },
    "relation": {
        "width": 128,
        "blocks": 4,
        "heads": 4,
        "vocab": 5,
    },
    "training": {
        "steps": 5000,
        "lr": 1e-4,
        "weight_decay": 0.01,
        "lambda_idf": 5.0,
        "seed": 0,
    },
    "guidance": {
        "window_fraction": 0.01,
        "iterations": 10,
        "history": 10,
        "grad_tol": 1e-8,
    },
    "idf": {
        "metric": "squared",
    },
    "sampling": {
        "frames": 24,
        "seed": 0,
    },
    "metrics": {
        "contact_threshold": 0.05,
        "collision_threshold": 0.04,
        "mdev_alpha": 0.05,
        "fid_frames": 8,
        "collision_proxy": "joints",
        "sdf_resolution": 24,
        "sdf_padding": 0.1,
    },
    "synth": {
        "frames": 24,
        "fps": 20.0,
        "jitter": 0.005,
        "split_ratio": 0.8,
    },
}

# The reference-scale model configuration (selectable with --paper-scale).
PAPER_SCALE = {
    "diffusion": {"steps": 1000},
    "generator": {"width": 384, "layers": 8},
    "relation": {"width": 384, "blocks": 8},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> None:
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} expects a table")
            _merge(base[key], value, where)
        else:
            base[key] = _coerce(value, base[key], where)


def _coerce(value, template, where: str):
    if isinstance(template, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"config key {where!r} expects a boolean")
    if isinstance(template, int) and not isinstance(template, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {where!r} expects an integer")
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"config key {where!r} expects an integer")
        return int(value)
    if isinstance(template, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {where!r} expects a number")
        return float(value)
    if isinstance(template, str):
        if not isinstance(value, str):
            raise ConfigError(f"config key {where!r} expects a string")
        return value
    raise ConfigError(f"config key {where!r} has unsupported type")


def _parse_scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _env_overrides(environ) -> dict:
    out: dict = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if not key:
            raise ConfigError(f"environment variable {name} must look like {ENV_PREFIX}SECTION_KEY")
        out.setdefault(section, {})[key] = _parse_scalar(raw)
    return out


def _set_overrides(pairs) -> dict:
    out: dict = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects section.key=value, got {pair!r}")
        dotted, raw = pair.split("=", 1)
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"--set expects section.key=value, got {pair!r}")
        out.setdefault(section, {})[key] = _parse_scalar(raw)
    return out


def load_config(path=None, environ=None, set_pairs=None, paper_scale: bool = False) -> dict:
    """Resolve the configuration with precedence file < env < --set."""
    cfg = copy.deepcopy(DEFAULTS)
    if paper_scale:
        _merge(cfg, copy.deepcopy(PAPER_SCALE))
    if path is not None:
        if str(path).endswith(".toml"):
            if _toml is None:
                raise ConfigError("TOML support needs the tomli package on this Python")
            with open(path, "rb") as fh:
                file_cfg = _toml.load(fh)
        else:
            with open(path, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        _merge(cfg, file_cfg)
    _merge(cfg, _env_overrides(environ if environ is not None else os.environ))
    _merge(cfg, _set_overrides(set_pairs))
    return cfg
