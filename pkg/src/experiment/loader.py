"""TOML experiment files with ``include = [...]`` and the defaults dump."""
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from exceptions import ConfigError
from experiment.model import ExperimentConfig

logger = logging.getLogger(__name__)


def deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _read(path: Path, chain: tuple[Path, ...]) -> dict:
    path = path.resolve()
    if path in chain:
        cycle = " -> ".join(str(p) for p in (*chain, path))
        raise ConfigError([f"include cycle: {cycle}"])
    try:
        data = tomllib.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"])
    except tomllib.TOMLDecodeError as err:
        raise ConfigError([f"{path}: {err}"])
    includes = data.pop("include", [])
    if isinstance(includes, str):
        includes = [includes]
    merged: dict = {}
    for include in includes:
        merged = deep_merge(merged, _read(path.parent / include, (*chain, path)))
    return deep_merge(merged, data)


def _violations(err: ValidationError) -> list[str]:
    return [f"{'.'.join(str(part) for part in e['loc']) or '<root>'}: {e['msg']}"
            for e in err.errors()]


def load_config(path: Path | str) -> tuple[ExperimentConfig, Path]:
    """Loads and validates an experiment file.

    Relative ``output_dir`` and ``corpus`` paths resolve against the file's
    directory, which is returned alongside the config.

    Raises:
        ConfigError: lists every violated constraint
    """
    path = Path(path)
    raw = _read(path, ())
    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as err:
        raise ConfigError(_violations(err))
    base = path.resolve().parent
    violations = []
    output = config.output_path(base)
    existing = next((p for p in (output, *output.parents) if p.exists()), None)
    if existing is None or not os.access(existing, os.W_OK):
        violations.append(f"output_dir: {output} is not writable")
    for name in ("corpus", "targets"):
        value = getattr(config, name)
        if value is not None and not (base / value).is_file():
            violations.append(f"{name}: file not found: {base / value}")
    if violations:
        raise ConfigError(violations)
    logger.debug(f"loaded config {path} ({config.config_hash()[:12]})")
    return config, base


def _toml_value(value: Any) -> str:
    if isinstance(value, Enum):
        value = value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace('\\', '\\\\').replace('"', '\\"') + '"'
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(item) for item in value) + "]"
    if isinstance(value, dict):
        return "{" + ", ".join(f"{k} = {_toml_value(v)}" for k, v in value.items()) + "}"
    raise TypeError(f"cannot render {type(value).__name__} as TOML")


def _emit_table(lines: list[str], prefix: str, table: dict, array: bool = False) -> None:
    scalars = {k: v for k, v in table.items()
               if v is not None and not isinstance(v, dict)
               and not (isinstance(v, list) and v and isinstance(v[0], dict))}
    nested = {k: v for k, v in table.items() if isinstance(v, dict)}
    arrays = {k: v for k, v in table.items()
              if isinstance(v, list) and v and isinstance(v[0], dict)}
    if prefix:
        lines.append("")
        lines.append(f"[[{prefix}]]" if array else f"[{prefix}]")
    for key, value in scalars.items():
        lines.append(f"{key} = {_toml_value(value)}")
    for key, value in nested.items():
        _emit_table(lines, f"{prefix}.{key}" if prefix else key, value)
    for key, items in arrays.items():
        for item in items:
            _emit_table(lines, f"{prefix}.{key}" if prefix else key, item, array=True)


def defaults_toml(seed: int = 0) -> str:
    """The complete default experiment as TOML, loadable by :func:`load_config`."""
    lines: list[str] = ["# lowrank-lens experiment defaults"]
    _emit_table(lines, "", ExperimentConfig(seed=seed).model_dump(mode='json'))
    return "\n".join(lines) + "\n"
