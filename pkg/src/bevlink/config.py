"""Experiment configuration: schema, validation, hashing.

Configs are YAML documents with six sections (data, encoder, channel,
diffusion, train, eval).  Every key has a default listed in the schema
below, so the empty document is a valid config.  Validation happens up
front and rejects unknown keys, wrong types, and out-of-range values with
the offending dotted key named in the error.  The hash of the fully
defaulted config is what output directories and checkpoints record.
"""

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .scenes import STYLE_PRESETS


class ConfigError(ValueError):
    pass


def _positive(key, v):
    if v <= 0:
        raise ConfigError(f"{key} must be positive, got {v}")


def _at_least(n):
    def check(key, v):
        if v < n:
            raise ConfigError(f"{key} must be >= {n}, got {v}")
    return check


def _open_unit(key, v):
    if not 0.0 < v < 1.0:
        raise ConfigError(f"{key} must be in (0, 1), got {v}")


def _choice(*options):
    def check(key, v):
        if v not in options:
            raise ConfigError(f"{key} must be one of {sorted(options)}, got {v!r}")
    return check


def _even_grid(key, v):
    if v < 16 or v % 2 != 0:
        raise ConfigError(f"{key} must be an even integer >= 16, got {v}")


def _image_size(key, v):
    if v < 32 or v % 8 != 0:
        raise ConfigError(f"{key} must be a multiple of 8, >= 32, got {v}")


def _ratio(key, v):
    if not 0.0 < v <= 1.0:
        raise ConfigError(f"{key} must be in (0, 1], got {v}")


def _scene_mix(key, v):
    if not isinstance(v, dict) or not v:
        raise ConfigError(f"{key} must be a non-empty mapping of style to count")
    for style, count in v.items():
        if style not in STYLE_PRESETS:
            raise ConfigError(
                f"{key}: unknown style {style!r}; "
                f"choose from {sorted(STYLE_PRESETS)}")
        if not isinstance(count, int) or count < 0:
            raise ConfigError(f"{key}.{style} must be a non-negative integer")


def _horizon_list(key, v):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{key} must be a non-empty list")
    for h in v:
        if h not in (0, 1, 2, 3):
            raise ConfigError(f"{key} entries must be in {{0,1,2,3}}, got {h}")
    if len(set(v)) != len(v):
        raise ConfigError(f"{key} entries must be unique")


def _snr_list(key, v):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{key} must be a non-empty list of dB values")
    for s in v:
        if not isinstance(s, (int, float)) or isinstance(s, bool):
            raise ConfigError(f"{key} entries must be numbers, got {s!r}")


def _hidden_widths(key, v):
    if not isinstance(v, list) or len(v) != 3:
        raise ConfigError(f"{key} must list exactly 3 widths")
    for w in v:
        if not isinstance(w, int) or w < 4:
            raise ConfigError(f"{key} widths must be integers >= 4")


def _variant_list(key, v):
    from .sweep import VARIANTS
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{key} must be a non-empty list")
    for name in v:
        if name not in VARIANTS:
            raise ConfigError(
                f"{key}: unknown variant {name!r}; choose from {sorted(VARIANTS)}")


# key -> (default, type or tuple of types, constraint or None)
SCHEMA = {
    "data": {
        "grid_size": (64, int, _even_grid),
        "extent_m": (32.0, float, _positive),
        "image_size": (128, int, _image_size),
        "num_views": (6, int, _at_least(1)),
        "n_frames": (8, int, _at_least(4)),
        "train_scenes": ({"A": 2, "B": 1, "C": 1, "probe": 2}, dict, _scene_mix),
        "test_scenes": ({"A": 1, "B": 1, "C": 1, "probe": 1}, dict, _scene_mix),
        "seed": (7, int, None),
    },
    "encoder": {
        "backbone": ("small", str, _choice("small", "resnet")),
        "image_channels": (32, int, _at_least(4)),
        "radar_channels": (16, int, _at_least(4)),
        "fusion": ("concatenation", str,
                   _choice("concatenation", "addition", "averaging",
                           "ensemble", "mixture-of-experts")),
        "overlap": ("mean", str, _choice("mean", "max")),
    },
    "channel": {
        "kind": ("awgn", str, _choice("awgn", "rayleigh")),
        "ratio": (0.25, float, _ratio),
        "hidden": ([64, 64, 32], list, _hidden_widths),
        "compressed_channels": (16, int, _at_least(1)),
        "snr_db": ([0.0, 5.0, 10.0, 15.0, 20.0], list, _snr_list),
    },
    "diffusion": {
        "steps": (100, int, _at_least(2)),
        "beta_min": (1e-4, float, _positive),
        "beta_max": (0.02, float, _open_unit),
        "reference_steps": (1000, int, _at_least(1)),
        "horizons": ([0, 1, 2, 3], list, _horizon_list),
        "base": (16, int, _at_least(4)),
    },
    "train": {
        "lr": (1e-3, float, _positive),
        "lr_schedule": ("cosine", str, _choice("constant", "cosine")),
        "batch_size": (8, int, _at_least(1)),
        "epochs_stage1": (30, int, _at_least(1)),
        "epochs_stage2": (30, int, _at_least(1)),
        "epochs_stage3": (50, int, _at_least(1)),
        "feature_loss_weight": (0.5, float, _at_least(0)),
        "finetune_all": (False, bool, None),
        "threads": (1, int, _at_least(1)),
        "val_snr_db": (20.0, float, None),
    },
    "eval": {
        "threshold": (0.5, float, _open_unit),
        "seeds": (3, int, _at_least(1)),
        "base_seed": (99, int, None),
        "variants": (["lossless", "awgn"], list, _variant_list),
        "horizons": ([0], list, _horizon_list),
        "jobs": (1, int, _at_least(1)),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, fully defaulted configuration."""

    sections: dict

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def get(self, dotted: str):
        section, key = dotted.split(".", 1)
        return self.sections[section][key]

    def as_dict(self) -> dict:
        return copy.deepcopy(self.sections)

    def hash(self) -> str:
        canon = json.dumps(self.sections, sort_keys=True,
                           separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.sections, sort_keys=True)


def _coerce(key: str, value, expected):
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(
                f"{key} must be a number, got {type(value).__name__} {value!r}")
        return float(value)
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(
                f"{key} must be an integer, got {type(value).__name__} {value!r}")
        return value
    if expected is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true/false, got {value!r}")
        return value
    if not isinstance(value, expected):
        raise ConfigError(
            f"{key} must be {expected.__name__}, got {type(value).__name__}")
    return value


def validate_config(raw: dict) -> ExperimentConfig:
    """Merge a raw mapping over the defaults; reject anything off-schema."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping of sections")
    sections = {}
    for section, keys in SCHEMA.items():
        sections[section] = {k: copy.deepcopy(d) for k, (d, _, _) in keys.items()}
    for section, content in raw.items():
        if section not in SCHEMA:
            raise ConfigError(
                f"unknown config section {section!r}; "
                f"known: {sorted(SCHEMA)}")
        if content is None:
            continue
        if not isinstance(content, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        for key, value in content.items():
            if key not in SCHEMA[section]:
                raise ConfigError(
                    f"unknown config key {section}.{key}; "
                    f"known keys: {sorted(SCHEMA[section])}")
            _, expected, check = SCHEMA[section][key]
            dotted = f"{section}.{key}"
            value = _coerce(dotted, value, expected)
            if check is not None:
                check(dotted, value)
            sections[section][key] = value
    _cross_checks(sections)
    _normalize(sections)
    return ExperimentConfig(sections=sections)


def _cross_checks(s):
    if s["diffusion"]["beta_min"] >= s["diffusion"]["beta_max"]:
        raise ConfigError(
            "diffusion.beta_min must be smaller than diffusion.beta_max")
    fused = s["encoder"]["image_channels"] + s["encoder"]["radar_channels"]
    if s["encoder"]["fusion"] in ("addition", "averaging"):
        fused = s["encoder"]["image_channels"]
    if s["channel"]["compressed_channels"] >= fused:
        raise ConfigError(
            f"channel.compressed_channels must be smaller than the fused "
            f"channel count ({fused})")
    if s["diffusion"]["base"] % 4 != 0:
        raise ConfigError("diffusion.base must be divisible by 4")


def _normalize(s):
    s["channel"]["snr_db"] = [float(v) for v in s["channel"]["snr_db"]]
    s["diffusion"]["horizons"] = sorted(s["diffusion"]["horizons"])
    s["eval"]["horizons"] = sorted(s["eval"]["horizons"])


def parse_config(text: str) -> ExperimentConfig:
    """Validate a YAML document (the empty string means all defaults)."""
    try:
        raw = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from None
    return validate_config(raw)


def load_config(path=None) -> ExperimentConfig:
    """Load and validate a config file; None means all defaults."""
    if path is None:
        return validate_config({})
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())
