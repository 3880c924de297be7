#!/usr/bin/env python3
"""
Configuration module for massem experiments

This module resolves, loads and validates experiment configuration:
1. Accepts explicit absolute/relative paths from CLI flags
2. Consults the MASSEM_CONFIG environment variable
3. Checks XDG-compliant directories on Linux and macOS Application Support
4. Falls back to the packaged massem.yaml
5. Creates a commented user template on request (massem init-config)

Configuration files hold four sections (experiment, model, dynamics, mcem).
Any key can be overridden from the command line with --<key> <value>; values
are parsed as YAML scalars so numbers, booleans and null work as expected.
"""

import copy
import json
import os
import platform
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import yaml

from sampling.dynamics import HmcConfig, NpConfig, SghmcConfig, SgnhtConfig
from sampling.mcem import McemConfig, SamplerKind

APP_NAME = "massem"
CONFIG_ENV_VAR = "MASSEM_CONFIG"

MODEL_KINDS = ("gaussian-nw", "bayes-lr-synthetic", "bayes-lr-csv")
RMSE_MODES = ("per-sample", "posterior-mean")
_EXPONENT = re.compile(r"^[-+]?[0-9]+(\.[0-9]*)?[eE][-+]?[0-9]+$")

# Default configuration, one mapping per section
DEFAULT_CONFIG: Dict[str, Dict[str, Any]] = {
    "experiment": {
        "sampler": "hmc-em",
        "seed": 1,
        "epochs": 10000,
        "burn_in": 5000,
        "output_dir": "runs/massem",
        "rmse_mode": "per-sample",
        "trace_timing": False,
    },
    "model": {
        "kind": "gaussian-nw",
        "n": 5000,
        "path": None,
        "label_column": -1,
        "standardize": False,
        "prior_variance": 10.0,
        "a0": 1.0,
        "b0": 1.0,
        "mu0": 0.0,
        "lambda0": 1.0,
        "label_rule": "threshold",
    },
    "dynamics": {
        "eps": 0.01,
        "n_leapfrog": 10,
        "batch_size": 100,
        "C": 10.0,
        "B_hat": 0.0,
        "A": 1.0,
        "mu_th": 1.0,
        "xi_bar": None,
        "Q": 1.0,
        "g": None,
        "kT": 1.0,
        "H0": None,
        "A_noise": 0.01,
        "B_noise": 0.01,
        "refresh_thermostat": True,
    },
    "mcem": {
        "s_count": 100,
        "S_I": 10,
        "nu": 1.0,
        "d": 2.0,
        "alpha": 0.05,
        "kappa_c": 1.0,
        "kappa_t0": 0.0,
        "ridge": None,
        "offset_policy": "poisson",
        "offset_stride": 10,
        "min_increment": 1,
        "max_condition": 100.0,
    },
}

SECTIONS = tuple(DEFAULT_CONFIG)

# Used when massem_default.yaml is missing from the installation
CONFIG_TEMPLATE = """# massem configuration
# Sections: experiment, model, dynamics, mcem. Every key can be overridden on
# the command line, e.g. `massem run --eps 0.001 --s_count 300`.
""" + yaml.safe_dump(DEFAULT_CONFIG, sort_keys=False)


class ConfigurationError(Exception):
    """
    Rich exception for configuration-related errors.

    Provides detailed context about configuration resolution failures,
    including search paths attempted and specific error reasons.
    """
    def __init__(self, message: str, search_paths: Optional[list] = None,
                 original_error: Optional[Exception] = None):
        super().__init__(message)
        self.search_paths = search_paths or []
        self.original_error = original_error

    def __str__(self) -> str:
        msg = super().__str__()
        if self.search_paths:
            msg += "\n\nSearched paths:\n"
            for path in self.search_paths:
                msg += f"  - {path}\n"
        if self.original_error:
            msg += f"\nOriginal error: {self.original_error}"
        return msg


def get_platform_config_dir() -> Path:
    """
    Get the platform-specific configuration directory.

    Platform-specific paths:
    - macOS: ~/Library/Application Support/massem/
    - Linux: ~/.config/massem/ (XDG_CONFIG_HOME)
    - Windows: %APPDATA%/massem/
    """
    system = platform.system()
    home = Path.home()

    if system == "Darwin":
        return home / "Library" / "Application Support" / APP_NAME
    elif system == "Windows":
        appdata = os.environ.get("APPDATA")
        if appdata:
            return Path(appdata) / APP_NAME
        return home / "AppData" / "Roaming" / APP_NAME
    else:
        xdg_config = os.environ.get("XDG_CONFIG_HOME")
        if xdg_config:
            return Path(xdg_config) / APP_NAME
        return home / ".config" / APP_NAME


def get_packaged_config_path() -> Path:
    """Path to the packaged massem.yaml next to this module."""
    return Path(__file__).parent / "massem.yaml"


def load_packaged_template() -> str:
    """
    Load the commented user template massem_default.yaml.

    Falls back to a generated template when the file is not installed.
    """
    template_path = Path(__file__).parent / "massem_default.yaml"
    try:
        return template_path.read_text(encoding="utf-8")
    except OSError:
        return CONFIG_TEMPLATE


def _search_paths(cli_arg: Optional[str]) -> List[Path]:
    paths = []
    if cli_arg:
        paths.append(Path(cli_arg).expanduser().resolve())
    env_config = os.environ.get(CONFIG_ENV_VAR)
    if env_config:
        paths.append(Path(env_config).expanduser().resolve())
    platform_dir = get_platform_config_dir()
    paths.extend([platform_dir / "massem.yaml", platform_dir / "massem.json"])
    cwd = Path.cwd()
    paths.extend([cwd / "massem.yaml", cwd / "massem.json"])
    paths.append(get_packaged_config_path())
    return paths


def get_config_path(cli_arg: Optional[str] = None) -> Path:
    """
    Resolve configuration file path following the search order.

    Search order:
    1. CLI argument (explicit path)
    2. MASSEM_CONFIG environment variable
    3. Platform-specific user config directory
    4. Current directory (./massem.yaml, ./massem.json)
    5. Packaged defaults

    Raises:
        ConfigurationError: If an explicit path is missing, or no file is found
    """
    search_paths = _search_paths(cli_arg)

    if cli_arg and not search_paths[0].exists():
        raise ConfigurationError(
            f"Configuration file not found: {cli_arg}",
            search_paths=[str(search_paths[0])]
        )

    for path in search_paths:
        if path.exists():
            return path

    raise ConfigurationError(
        "No configuration file found in any search location",
        search_paths=[str(p) for p in search_paths]
    )


def load_config_from_path(path: Path) -> Dict[str, Any]:
    """
    Load configuration from the specified path.

    Supports both YAML and JSON formats, with automatic format detection
    based on file extension.

    Raises:
        ConfigurationError: If file cannot be read or parsed
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Configuration file does not exist: {path}")
    if not path.is_file():
        raise ConfigurationError(f"Configuration path is not a file: {path}")

    try:
        content = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"Could not read configuration file: {path}", original_error=e)

    suffix = path.suffix.lower()
    if suffix in (".yaml", ".yml"):
        try:
            config = yaml.safe_load(content)
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Invalid YAML in configuration file: {path}", original_error=e)
    elif suffix == ".json":
        try:
            config = json.loads(content)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Invalid JSON in configuration file: {path}", original_error=e)
    else:
        try:
            config = json.loads(content)
        except json.JSONDecodeError:
            try:
                config = yaml.safe_load(content)
            except yaml.YAMLError as e:
                raise ConfigurationError(
                    f"Could not parse configuration file as JSON or YAML: {path}",
                    original_error=e
                )

    if not isinstance(config, dict):
        raise ConfigurationError(f"Configuration file must contain a dictionary/object: {path}")
    return config


def ensure_user_default() -> Path:
    """
    Ensure a user configuration file exists in the platform-appropriate location.

    Creates the commented template if no user config exists; never
    overwrites an existing file.

    Raises:
        ConfigurationError: If the directory or file cannot be created
    """
    platform_dir = get_platform_config_dir()
    config_path = platform_dir / "massem.yaml"
    if config_path.exists():
        return config_path
    json_path = platform_dir / "massem.json"
    if json_path.exists():
        return json_path

    try:
        platform_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigurationError(
            f"Could not create configuration directory: {platform_dir}",
            original_error=e
        )

    temp_path = config_path.with_suffix(".tmp")
    try:
        temp_path.write_text(load_packaged_template(), encoding="utf-8")
        temp_path.replace(config_path)
        return config_path
    except OSError as e:
        if temp_path.exists():
            temp_path.unlink()
        raise ConfigurationError(
            f"Could not create configuration file: {config_path}",
            original_error=e
        )


def _key_index() -> Dict[str, str]:
    return {key: section for section, keys in DEFAULT_CONFIG.items() for key in keys}


def merge_with_defaults(raw: Mapping[str, Any]) -> Dict[str, Dict[str, Any]]:
    """
    Overlay a loaded mapping on DEFAULT_CONFIG.

    Raises:
        ConfigurationError: on unknown sections or keys
    """
    merged = copy.deepcopy(DEFAULT_CONFIG)
    for section, values in raw.items():
        if section not in merged:
            raise ConfigurationError(
                f"Unknown configuration section '{section}' (expected one of {', '.join(SECTIONS)})"
            )
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigurationError(f"Configuration section '{section}' must be a mapping")
        for key, value in values.items():
            if key not in merged[section]:
                raise ConfigurationError(f"Unknown key '{key}' in section '{section}'")
            merged[section][key] = value
    return merged


def parse_override_args(tokens: Sequence[str]) -> Dict[str, str]:
    """
    Turn ['--eps', '0.001', '--s_count=300'] into {'eps': '0.001', 's_count': '300'}.

    Dashes inside key names are read as underscores.
    """
    overrides = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or len(token) == 2:
            raise ConfigurationError(f"Unexpected argument '{token}' (overrides look like --key value)")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigurationError(f"Override --{key} has no value")
            value = tokens[i + 1]
            i += 2
        overrides[key.replace("-", "_")] = value
    return overrides


def _resolve_override(key: str, value: Any) -> Tuple[str, str, Any]:
    index = _key_index()
    if "." in key:
        section, name = key.split(".", 1)
        if section not in DEFAULT_CONFIG or name not in DEFAULT_CONFIG[section]:
            raise ConfigurationError(f"Unknown configuration key '{key}'")
    elif key in index:
        section, name = index[key], key
    else:
        raise ConfigurationError(f"Unknown configuration key '{key}'")
    if isinstance(value, str):
        try:
            value = yaml.safe_load(value)
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Could not parse value for '{key}'", original_error=e)
        if isinstance(value, str) and _EXPONENT.match(value):
            # YAML 1.1 reads 1e-3 (no dot) as a string
            value = float(value)
    return section, name, value


def apply_overrides(raw: Mapping[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Dict[str, Any]]:
    """
    Apply flat --key value overrides to a configuration mapping.

    Keys are looked up in whichever section declares them; 'section.key'
    is accepted too. String values are parsed as YAML scalars.

    Raises:
        ConfigurationError: on unknown keys or unparseable values
    """
    merged = merge_with_defaults(raw)
    for section, values in override_layer(overrides).items():
        merged[section].update(values)
    return merged


def override_layer(overrides: Mapping[str, Any]) -> Dict[str, Dict[str, Any]]:
    """
    Only the overridden keys, grouped by section: {'dynamics': {'eps': 0.001}}.

    Raises:
        ConfigurationError: on unknown keys or unparseable values
    """
    layer: Dict[str, Dict[str, Any]] = {}
    for key, value in overrides.items():
        section, name, parsed = _resolve_override(key, value)
        layer.setdefault(section, {})[name] = parsed
    return layer


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Validated experiment settings.

    ``model``, ``dynamics`` and ``mcem`` keep the section mappings; the
    kernel and MCEM configs are built from them on demand.
    """
    sampler: SamplerKind
    seed: int
    epochs: int
    burn_in: int
    output_dir: Path
    rmse_mode: str = "per-sample"
    trace_timing: bool = False
    model: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_CONFIG["model"]))
    dynamics: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_CONFIG["dynamics"]))
    mcem: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_CONFIG["mcem"]))

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ExperimentConfig":
        """
        Build and validate a config from a (possibly partial) section mapping.

        Raises:
            ConfigurationError: on any invalid value
        """
        merged = merge_with_defaults(raw)
        exp = merged["experiment"]
        try:
            sampler = SamplerKind.parse(exp["sampler"])
        except ValueError as e:
            raise ConfigurationError(str(e))

        try:
            seed, epochs, burn_in = int(exp["seed"]), int(exp["epochs"]), int(exp["burn_in"])
        except (TypeError, ValueError) as e:
            raise ConfigurationError("seed, epochs and burn_in must be integers", original_error=e)
        if seed < 0:
            raise ConfigurationError(f"seed must be nonnegative, got {seed}")
        if burn_in < 0 or epochs <= burn_in:
            raise ConfigurationError(
                f"epochs ({epochs}) must exceed burn_in ({burn_in}) and burn_in must be nonnegative"
            )
        if exp["rmse_mode"] not in RMSE_MODES:
            raise ConfigurationError(
                f"Unknown rmse_mode '{exp['rmse_mode']}' (choose from {', '.join(RMSE_MODES)})"
            )
        if exp["output_dir"] in (None, ""):
            raise ConfigurationError("output_dir must be set")

        model = merged["model"]
        if model["kind"] not in MODEL_KINDS:
            raise ConfigurationError(
                f"Unknown model kind '{model['kind']}' (choose from {', '.join(MODEL_KINDS)})"
            )
        if model["kind"] == "bayes-lr-csv" and not model["path"]:
            raise ConfigurationError("Model kind 'bayes-lr-csv' needs a data path")
        if model["kind"] != "bayes-lr-csv" and not (isinstance(model["n"], int) and model["n"] >= 1):
            raise ConfigurationError(f"Model size n must be a positive integer, got {model['n']}")

        batch_size = merged["dynamics"]["batch_size"]
        if batch_size is not None and not (isinstance(batch_size, int) and batch_size >= 1):
            raise ConfigurationError(f"batch_size must be a positive integer or null, got {batch_size}")

        config = cls(
            sampler=sampler, seed=seed, epochs=epochs, burn_in=burn_in,
            output_dir=Path(str(exp["output_dir"])).expanduser(),
            rmse_mode=exp["rmse_mode"], trace_timing=bool(exp["trace_timing"]),
            model=model, dynamics=merged["dynamics"], mcem=merged["mcem"],
        )
        # Surface kernel and MCEM constraint violations before any sampling
        config.kernel_config()
        config.mcem_config()
        return config

    def kernel_config(self):
        """The dynamics config for this sampler's base kernel."""
        d = self.dynamics
        base = self.sampler.base
        try:
            if base is SamplerKind.HMC:
                return HmcConfig(float(d["eps"]), int(d["n_leapfrog"]))
            if base is SamplerKind.SGHMC:
                return SghmcConfig(float(d["eps"]), int(d["n_leapfrog"]),
                                   C=float(d["C"]), B_hat=float(d["B_hat"]))
            if base is SamplerKind.SGNHT:
                return SgnhtConfig(float(d["eps"]), int(d["n_leapfrog"]), A=float(d["A"]),
                                   mu_th=float(d["mu_th"]), xi_bar=_optional_float(d["xi_bar"]))
            return NpConfig(float(d["eps"]), int(d["n_leapfrog"]), Q=float(d["Q"]),
                            g=_optional_float(d["g"]), kT=float(d["kT"]),
                            H0=_optional_float(d["H0"]), A_noise=float(d["A_noise"]),
                            B_noise=float(d["B_noise"]),
                            refresh_thermostat=bool(d["refresh_thermostat"]))
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid dynamics settings for {self.sampler.value}: {e}")

    def mcem_config(self) -> McemConfig:
        m = self.mcem
        try:
            return McemConfig(
                s_count=None if m["s_count"] is None else int(m["s_count"]),
                S_I=int(m["S_I"]), nu=float(m["nu"]), d=float(m["d"]),
                alpha=float(m["alpha"]), kappa_c=float(m["kappa_c"]),
                kappa_t0=float(m["kappa_t0"]), ridge=_optional_float(m["ridge"]),
                offset_policy=str(m["offset_policy"]), offset_stride=int(m["offset_stride"]),
                min_increment=int(m["min_increment"]),
                max_condition=_optional_float(m["max_condition"]),
            )
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid mcem settings: {e}")

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        """Section mapping that from_dict accepts; used for config-echo.json."""
        return {
            "experiment": {
                "sampler": self.sampler.value,
                "seed": self.seed,
                "epochs": self.epochs,
                "burn_in": self.burn_in,
                "output_dir": str(self.output_dir),
                "rmse_mode": self.rmse_mode,
                "trace_timing": self.trace_timing,
            },
            "model": dict(self.model),
            "dynamics": dict(self.dynamics),
            "mcem": dict(self.mcem),
        }

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(apply_overrides(self.to_dict(), overrides))


def _optional_float(value) -> Optional[float]:
    return None if value is None else float(value)


def resolve_and_load_config(cli_arg: Optional[str] = None) -> Tuple[Path, Dict[str, Any]]:
    """
    Resolve and load configuration.

    Raises:
        ConfigurationError: If configuration cannot be resolved or loaded
    """
    config_path = get_config_path(cli_arg)
    return config_path, load_config_from_path(config_path)


def load_experiment_config(cli_arg: Optional[str] = None,
                           overrides: Optional[Mapping[str, Any]] = None) -> Tuple[Path, ExperimentConfig]:
    """Resolve, load, override and validate in one step."""
    config_path, raw = resolve_and_load_config(cli_arg)
    merged = apply_overrides(raw, overrides or {})
    return config_path, ExperimentConfig.from_dict(merged)


def get_config_info(cli_arg: Optional[str] = None) -> Dict[str, Any]:
    """
    Get detailed information about configuration resolution.

    Useful for debugging and --config-info CLI commands.
    """
    platform_dir = get_platform_config_dir()
    info = {
        "platform": platform.system(),
        "platform_config_dir": str(platform_dir),
        "packaged_config_path": str(get_packaged_config_path()),
        "environment_variable": os.environ.get(CONFIG_ENV_VAR),
        "cli_argument": cli_arg,
        "search_paths": [str(p) for p in _search_paths(cli_arg)],
        "resolved_path": None,
        "config_exists": False,
        "user_config_exists": (platform_dir / "massem.yaml").exists()
        or (platform_dir / "massem.json").exists(),
        "error": None,
    }

    try:
        resolved_path = get_config_path(cli_arg)
        info["resolved_path"] = str(resolved_path)
        info["config_exists"] = resolved_path.exists()
    except ConfigurationError as e:
        info["error"] = str(e)

    return info
