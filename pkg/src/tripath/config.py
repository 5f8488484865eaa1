"""Run configuration: one flat UTF-8 key=value file describes a whole run.

Grammar, one entry per line:

    # comment (blank lines are fine too)
    seed=7
    model.alpha=4
    train.max_epochs=30
    data.nt_fraction=0.65

Keys are either top-level run fields or ``section.field`` with sections
``model``, ``train`` and ``data``. Values parse by the field's declared
type; tuples are comma-separated ("1.25,0.833"), the literal ``none``
means null for non-string fields, booleans are ``true``/``false``.
Unknown keys, duplicates and malformed lines are rejected. Serialization
emits every field sorted, so parse(serialize(c)) == c.
"""

import dataclasses

from .data import SyntheticParams
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

SECTIONS = {"model": ModelConfig, "train": TrainConfig, "data": SyntheticParams}

# fields whose value is fully determined by other fields; serialized as
# the null literal so overriding the source fields stays consistent
DERIVED_KEYS = ("model.slow_stride",)

# element type of every tuple-valued field (comma lists are untyped on disk)
TUPLE_ELEMENTS = {
    "class_weights": float,
    "pathways": str,
    "fusion_stages": str,
    "first_division_window": int,
    "second_division_window": int,
    "nt_division_window": int,
}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Top-level run settings plus the three nested configs."""

    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    data: SyntheticParams = SyntheticParams()
    seed: int = 0
    n_videos: int = 200
    expansion_factor: int = 1
    test_fraction: float = 0.2
    n_folds: int = 1
    val_fraction: float = 0.15
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.n_videos < 1:
            raise ConfigError(f"n_videos must be >= 1, got {self.n_videos}")
        if self.expansion_factor < 1:
            raise ConfigError(f"expansion_factor must be >= 1, got {self.expansion_factor}")

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": self.data.to_dict(),
            "seed": self.seed,
            "n_videos": self.n_videos,
            "expansion_factor": self.expansion_factor,
            "test_fraction": self.test_fraction,
            "n_folds": self.n_folds,
            "val_fraction": self.val_fraction,
            "out_dir": self.out_dir,
        }


_SCALAR_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)
                  if f.name not in SECTIONS}


def _parse_value(text, annotation, key):
    text = text.strip()
    # null literal for optional numeric fields; string fields take the
    # text verbatim ("none" names a lateral wiring)
    if text.lower() == "none" and annotation is not str:
        return None
    try:
        if annotation is bool:
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if annotation is int:
            return int(text)
        if annotation is float:
            return float(text)
        if annotation is str:
            return text
        if annotation is tuple:
            field = key.split(".")[-1]
            if field not in TUPLE_ELEMENTS:
                raise ConfigError(f"{key}: no element type declared for this tuple field")
            elem = TUPLE_ELEMENTS[field]
            return tuple(elem(part.strip()) for part in text.split(",") if part.strip())
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {getattr(annotation, '__name__', annotation)}")
    raise ConfigError(f"{key}: unsupported field type {annotation!r}")


def _format_value(value, key):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v, key) for v in value)
    if isinstance(value, float):
        return repr(value)
    text = str(value)
    if "=" in text or "\n" in text or "," in text:
        raise ConfigError(f"{key}: value {text!r} cannot be serialized in this format")
    return text


def parse_config_text(text):
    """Flat key -> raw string mapping; rejects malformed or duplicate lines."""
    flat = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in flat:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        flat[key] = value.strip()
    return flat


def config_from_flat(flat):
    """Build a RunConfig from a flat mapping, rejecting unknown keys."""
    scalar_over = {}
    section_over = {name: {} for name in SECTIONS}
    for key, raw in flat.items():
        if "." in key:
            section, field = key.split(".", 1)
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section {section!r} in key {key!r}")
            fields = {f.name: f for f in dataclasses.fields(SECTIONS[section])}
            if field not in fields:
                raise ConfigError(f"unknown key {key!r}: {section} has no field {field!r}")
            section_over[section][field] = _parse_value(raw, fields[field].type, key)
        else:
            if key not in _SCALAR_FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            scalar_over[key] = _parse_value(raw, _SCALAR_FIELDS[key].type, key)
    kwargs = dict(scalar_over)
    for name, cls in SECTIONS.items():
        kwargs[name] = cls(**section_over[name])
    return RunConfig(**kwargs)


def config_to_flat(config):
    """Every field of the run config as sorted flat keys."""
    flat = {}
    for name in _SCALAR_FIELDS:
        flat[name] = _format_value(getattr(config, name), name)
    for section, cls in SECTIONS.items():
        obj = getattr(config, section)
        for f in dataclasses.fields(cls):
            key = f"{section}.{f.name}"
            if key in DERIVED_KEYS:
                flat[key] = "none"
            else:
                flat[key] = _format_value(getattr(obj, f.name), key)
    return dict(sorted(flat.items()))


def config_to_text(config):
    flat = config_to_flat(config)
    return "\n".join(f"{k}={v}" for k, v in flat.items()) + "\n"


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_flat(parse_config_text(fh.read()))


def save_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(config))


def apply_overrides(config, pairs):
    """Apply ``key=value`` strings (e.g. from --set flags) over a config."""
    base = config_to_flat(config)
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        key = key.strip()
        if key not in base:
            raise ConfigError(f"unknown config key {key!r}")
        base[key] = value.strip()
    return config_from_flat(base)
