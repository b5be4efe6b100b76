import dataclasses
import enum
import logging
import os
import typing
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, TypeVar

from dotenv import dotenv_values

from errors import ParameterError

logger = logging.getLogger(__name__)

# Constants
SAMPLE_RATE = int(os.getenv("AFFECTFORGE_SAMPLE_RATE", "16000"))
LOG_LEVEL = os.getenv("AFFECTFORGE_LOG_LEVEL", "INFO")
JOBS = int(os.getenv("AFFECTFORGE_JOBS", "1"))
OUT_DIR = os.getenv("AFFECTFORGE_OUT", "runs")
CHECKPOINT = os.getenv("AFFECTFORGE_CHECKPOINT")  # optional default checkpoint for the tool server

# Validate environment variables
if SAMPLE_RATE <= 0:
    raise ValueError("AFFECTFORGE_SAMPLE_RATE must be a positive integer")
if JOBS < 1:
    raise ValueError("AFFECTFORGE_JOBS must be at least 1")

D = TypeVar("D")


def read_config_file(path: Optional[Path]) -> Dict[str, str]:
    """
    Read a plain-text key=value configuration file.

    Args:
        path: Path to the file, or None for an empty configuration

    Returns:
        Mapping of keys to raw string values

    Raises:
        ParameterError: If the file does not exist or a line has no value
    """
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ParameterError(f"Config file not found: {path}")
    values = dotenv_values(path)
    missing = [key for key, value in values.items() if value is None]
    if missing:
        raise ParameterError(f"Config keys without a value in {path}: {', '.join(missing)}")
    return {key.strip().lower(): value.strip() for key, value in values.items()}


def _coerce(raw: Any, annotation: Any, key: str) -> Any:
    if not isinstance(raw, str):
        return raw
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is typing.Union:
        # Optional[X]
        inner = [a for a in args if a is not type(None)]
        if raw.lower() in ("", "none", "null"):
            return None
        return _coerce(raw, inner[0], key)
    if origin in (tuple, list):
        item_type = args[0] if args else str
        items = [part.strip() for part in raw.split(",") if part.strip()]
        return tuple(_coerce(item, item_type, key) for item in items)
    try:
        if annotation is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if annotation is int:
            return int(raw)
        if annotation is float:
            return float(raw)
        if isinstance(annotation, type) and issubclass(annotation, enum.Enum):
            return annotation(raw.lower())
    except ValueError as e:
        raise ParameterError(f"Invalid value for '{key}': {raw!r} ({e})")
    return raw


def override(instance: D, values: Mapping[str, Any]) -> D:
    """
    Return a copy of a config dataclass with the given fields replaced.

    String values are coerced to the field's declared type, so the output of
    read_config_file can be passed straight in. Keys that are not fields of the
    dataclass are ignored; the caller decides whether leftovers are an error.

    Args:
        instance: A dataclass instance
        values: Field overrides

    Returns:
        A new instance (validated again through __post_init__)
    """
    hints = typing.get_type_hints(type(instance))
    changes = {}
    for f in dataclasses.fields(instance):
        if f.name in values and values[f.name] is not None:
            changes[f.name] = _coerce(values[f.name], hints[f.name], f.name)
    if not changes:
        return instance
    return dataclasses.replace(instance, **changes)


def field_names(*classes: type) -> set:
    """Names of all fields declared by the given dataclasses."""
    return {f.name for cls in classes for f in dataclasses.fields(cls)}
