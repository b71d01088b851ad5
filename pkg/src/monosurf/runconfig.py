"""Key-value run configuration files and run manifests.

Config files are UTF-8 text, one ``section.key = value`` per line, ``#``
comments allowed. Values are parsed as int, float, bool, or a
comma-separated list thereof; anything else stays a string. CLI flags
override file values. Every artifact-producing command writes a JSON
manifest next to its output recording the resolved configuration, input
hashes, seed, version, and timestamps.
"""

import dataclasses
import hashlib
import json
import os
import time

from . import __version__
from ._backend import BACKEND_NAME
from .datagen import SceneConfig
from .errors import ConfigError
from .losses import LossConfig
from .network import ModelConfig
from .trainer import TrainConfig


def _parse_value(raw):
    raw = raw.strip()
    if "," in raw:
        return [_parse_value(part) for part in raw.split(",") if part.strip()]
    low = raw.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for caster in (int, float):
        try:
            return caster(raw)
        except ValueError:
            continue
    return raw


def parse_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = stripped.split("=", 1)
            values[key.strip()] = _parse_value(raw)
    return values


def _section(values, prefix):
    out = {}
    for key, val in values.items():
        if key.startswith(prefix + "."):
            out[key[len(prefix) + 1 :]] = val
    return out


def _build(cls, fields, what):
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(fields) - valid
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**fields)
    except TypeError as exc:
        raise ConfigError(f"bad {what} configuration: {exc}") from None


def scene_config(values, overrides=None):
    fields = _section(values, "scene")
    fields.update(overrides or {})
    if "textures" in fields and isinstance(fields["textures"], str):
        fields["textures"] = [fields["textures"]]
    if "textures" in fields:
        fields["textures"] = tuple(fields["textures"])
    return _build(SceneConfig, fields, "scene")


def loss_config(values, overrides=None):
    fields = _section(values, "loss")
    fields.update(overrides or {})
    return _build(LossConfig, fields, "loss")


def train_config(values, overrides=None, loss=None):
    fields = _section(values, "train")
    fields.update(overrides or {})
    if loss is not None:
        fields["loss"] = loss
    return _build(TrainConfig, fields, "train")


def model_config(values, overrides=None):
    fields = _section(values, "model")
    fields.update(overrides or {})
    if "widths" in fields:
        widths = fields["widths"]
        fields["widths"] = (
            tuple(widths) if isinstance(widths, (list, tuple)) else (widths,)
        )
    if "skips" in fields:
        raise ConfigError("skip pairs are not settable from config files")
    return _build(ModelConfig, fields, "model")


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        try:
            return obj.item()
        except Exception:
            return str(obj)
    return obj


def write_manifest(output_path, command, config, inputs=None, outputs=None,
                   seed=None, started_at=None):
    manifest = {
        "command": command,
        "tool_version": __version__,
        "kernel_backend": BACKEND_NAME,
        "seed": seed,
        "config": _jsonable(config),
        "inputs": _jsonable(inputs or {}),
        "outputs": _jsonable(outputs or {}),
        "started_at": started_at,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    path = os.fspath(output_path) + ".manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def timestamp():
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")
