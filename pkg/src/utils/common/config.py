"""Configuration management utilities."""

import dataclasses
import hashlib
import json
import os
import typing
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Type, TypeVar

import yaml

from .exceptions import ConfigurationError
from .validation import DataValidator

T = TypeVar("T")

TRAIN_ENV_MAPPINGS: Dict[str, List[str]] = {
    "EEGAN_LOG_LEVEL": ["log_level"],
    "EEGAN_DATASET_PATH": ["data", "dataset_path"],
    "EEGAN_OUTPUT_DIR": ["run", "output_dir"],
    "EEGAN_NUM_THREADS": ["data", "prefetch_workers"],
}


class ConfigManager:
    """Configuration manager for run, dataset and render configs."""

    def __init__(
        self,
        config_path: Optional[str] = None,
        env_mappings: Optional[Mapping[str, List[str]]] = None,
    ):
        """Initialize configuration manager.

        Args:
            config_path: Path to configuration file
            env_mappings: Environment variable to nested key mapping applied
                after the file is read
        """
        self.config_path = str(config_path or self._get_default_config_path())
        self.env_mappings = dict(env_mappings or {})

    def _get_default_config_path(self) -> str:
        """Get default configuration file path."""
        return os.getenv("EEGAN_CONFIG", "config/train_toy.yaml")

    def load_raw(self) -> Dict[str, Any]:
        """Load the configuration mapping from file and environment variables.

        Returns:
            Configuration dictionary
        """
        config_data = self._load_from_file()
        return self._override_with_env(config_data)

    def load(self, factory: Callable[[Dict[str, Any]], T]) -> T:
        """Load configuration and build a typed object from it.

        Args:
            factory: Callable turning the raw mapping into a config object

        Returns:
            Typed configuration
        """
        return factory(self.load_raw())

    def _load_from_file(self) -> Dict[str, Any]:
        """Load configuration from file."""
        if not os.path.exists(self.config_path):
            raise ConfigurationError(
                f"Configuration file not found: {self.config_path}",
                config_key="config_path",
            )

        with open(self.config_path, "r", encoding="utf-8") as f:
            try:
                if self.config_path.endswith((".yaml", ".yml")):
                    data = yaml.safe_load(f)
                elif self.config_path.endswith(".json"):
                    data = json.load(f)
                else:
                    raise ConfigurationError(
                        f"Unsupported configuration file format: {self.config_path}"
                    )
            except (yaml.YAMLError, json.JSONDecodeError) as exc:
                raise ConfigurationError(
                    f"Cannot parse configuration file {self.config_path}: {exc}"
                ) from exc

        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigurationError("Configuration must be a mapping")
        return data

    def _override_with_env(self, config_data: Dict[str, Any]) -> Dict[str, Any]:
        """Override configuration with environment variables."""
        for env_var, config_path in self.env_mappings.items():
            env_value = os.getenv(env_var)
            if env_value is not None:
                self._set_nested_value(config_data, config_path, env_value)

        return config_data

    def _set_nested_value(self, data: Dict[str, Any], path: list, value: Any) -> None:
        """Set nested dictionary value."""
        current = data
        for key in path[:-1]:
            if key not in current or current[key] is None:
                current[key] = {}
            current = current[key]

        if isinstance(value, str):
            if value.lower() in ("true", "false"):
                value = value.lower() == "true"
            elif value.isdigit():
                value = int(value)
            else:
                try:
                    value = float(value)
                except ValueError:
                    pass

        current[path[-1]] = value

    def save_config(self, config: Any, path: Optional[str] = None) -> None:
        """Save configuration to file.

        Args:
            config: Dataclass configuration to save
            path: Optional path to save to
        """
        save_path = str(path or self.config_path)
        data = config_to_dict(config)

        with open(save_path, "w", encoding="utf-8") as f:
            if save_path.endswith((".yaml", ".yml")):
                yaml.safe_dump(data, f, default_flow_style=False, indent=2)
            elif save_path.endswith(".json"):
                json.dump(data, f, indent=2, sort_keys=True)
            else:
                raise ConfigurationError(
                    f"Unsupported configuration file format: {save_path}"
                )


def _unwrap_optional(tp: Any) -> Any:
    if typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def _coerce(tp: Any, value: Any, key: str) -> Any:
    if value is None:
        return None
    tp = _unwrap_optional(tp)
    origin = typing.get_origin(tp)

    if dataclasses.is_dataclass(tp) and isinstance(tp, type):
        if not isinstance(value, dict):
            raise ConfigurationError(f"Section '{key}' must be a mapping", config_key=key)
        return build_dataclass(tp, value, prefix=f"{key}.")
    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"'{key}' must be a list", config_key=key)
        args = typing.get_args(tp)
        if origin is tuple and args and args[-1] is not Ellipsis:
            if len(args) != len(value):
                raise ConfigurationError(
                    f"'{key}' must have {len(args)} entries", config_key=key
                )
            return tuple(_coerce(a, v, key) for a, v in zip(args, value))
        item_tp = args[0] if args else Any
        items = [_coerce(item_tp, v, key) for v in value]
        return tuple(items) if origin is tuple else items
    if isinstance(tp, type) and issubclass(tp, Enum):
        try:
            return tp(value)
        except ValueError as exc:
            raise ConfigurationError(f"Invalid value for '{key}': {value}", key) from exc
    if tp is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if tp is int and isinstance(value, float) and value.is_integer():
        return int(value)
    return value


def build_dataclass(cls: Type[T], data: Mapping[str, Any], prefix: str = "") -> T:
    """Build a (nested) dataclass from a mapping, rejecting unknown keys.

    Args:
        cls: Dataclass type to build
        data: Raw mapping, e.g. parsed YAML
        prefix: Dotted key prefix used in error messages

    Returns:
        Dataclass instance
    """
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}  # type: ignore[arg-type]

    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigurationError(
            f"Unknown configuration key '{prefix}{unknown[0]}'",
            config_key=f"{prefix}{unknown[0]}",
        )

    kwargs = {
        name: _coerce(hints[name], value, f"{prefix}{name}")
        for name, value in data.items()
    }
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"Invalid configuration for {cls.__name__}: {exc}") from exc


def enforce_rules(
    section: str,
    values: Mapping[str, Any],
    rules: Mapping[str, List[Callable[[Any], None]]],
) -> None:
    """Run per-field validation rules and raise on the first failing key.

    Args:
        section: Dotted section name used as key prefix, e.g. ``"optimizer"``
        values: Field values of the section
        rules: Validators per field, as accepted by ``DataValidator.add_rule``

    Raises:
        ConfigurationError: Naming the first field (in rule order) that fails
    """
    validator = DataValidator()
    for field_name, field_rules in rules.items():
        for rule in field_rules:
            validator.add_rule(field_name, rule)

    errors = validator.validate(dict(values))
    for field_name in rules:
        if field_name in errors:
            key = f"{section}.{field_name}" if section else field_name
            raise ConfigurationError(
                f"Invalid value for '{key}': {errors[field_name][0]}", config_key=key
            )


def config_to_dict(config: Any) -> Dict[str, Any]:
    """Convert a dataclass configuration to plain JSON-compatible types."""

    def convert(value: Any) -> Any:
        if isinstance(value, Enum):
            return value.value
        if isinstance(value, (list, tuple)):
            return [convert(v) for v in value]
        if isinstance(value, dict):
            return {k: convert(v) for k, v in value.items()}
        if isinstance(value, Path):
            return str(value)
        return value

    return convert(dataclasses.asdict(config))


def config_hash(config: Any, exclude: tuple = ("run",)) -> str:
    """SHA-256 of the canonical JSON form of a configuration.

    Args:
        config: Dataclass configuration or plain mapping
        exclude: Top-level sections that do not define the experiment

    Returns:
        Hex digest
    """
    data = config if isinstance(config, dict) else config_to_dict(config)
    data = {k: v for k, v in data.items() if k not in exclude}
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(
    config_path: Optional[str],
    factory: Callable[[Dict[str, Any]], T],
    env_mappings: Optional[Mapping[str, List[str]]] = None,
) -> T:
    """Load configuration using ConfigManager.

    Args:
        config_path: Optional path to configuration file
        factory: Callable turning the raw mapping into a config object
        env_mappings: Environment overrides to apply

    Returns:
        Typed configuration
    """
    manager = ConfigManager(config_path, env_mappings)
    return manager.load(factory)
