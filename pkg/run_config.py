#!/usr/bin/env python3
"""
Run configuration for the qattr command line.

Settings are merged in this order, later sources winning:

1. `config.json` next to this file (built-in defaults per subcommand)
2. environment (`.env` is loaded): QATTR_OUT_DIR, QATTR_SEED, QATTR_DATA_DIR
3. the JSON file given with `--config`
4. command-line flags

The merged mapping is checked against the subcommand's schema before
anything runs. Every run writes a manifest.json echoing the resolved
configuration.
"""

import json
import os
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

from errors import ConfigError, DataIOError, NumericalError

load_dotenv()

VERSION = "0.1.0"
DEFAULT_CONFIG_PATH = Path(__file__).with_name("config.json")
MAX_SEED = 2 ** 64
GLOBAL_KEYS = ("output_dir", "seed", "data_dir")

DATASETS = ("bars_and_stripes", "nist8x8", "mnist", "fashion_mnist")
ENCODINGS = ("amplitude_overflow", "amplitude_normalized", "angle")
FIT_POLICIES = ("truncate_last", "pad_next_qubit", "plain_normalize")
GRADIENT_METHODS = ("exact", "hadamard_single", "hadamard_multi", "param_shift")
NULL_KINDS = ("uniform_0_pi", "gaussian_0_halfpi", "student_t_nu2")


@dataclass(frozen=True)
class Rule:
    """Type and range constraints for one configuration key."""
    types: Tuple[type, ...]
    choices: Optional[Tuple[Any, ...]] = None
    positive: bool = False
    non_negative: bool = False
    at_most: Optional[float] = None
    nullable: bool = False
    items: Optional[Tuple[type, ...]] = None  # element types for lists

    def check(self, key: str, value: Any) -> None:
        if value is None:
            if self.nullable:
                return
            raise ConfigError(f"{key} must not be null", field=key)
        if isinstance(value, bool) and bool not in self.types:
            raise ConfigError(f"{key} must be {self._names()}, got a boolean", field=key)
        if not isinstance(value, self.types):
            raise ConfigError(f"{key} must be {self._names()}, got {type(value).__name__}",
                              field=key)
        values = value if isinstance(value, list) else [value]
        for item in values:
            if self.items is not None and isinstance(value, list):
                if isinstance(item, bool) or not isinstance(item, self.items):
                    raise ConfigError(f"{key} entries must be {self.items[0].__name__}, "
                                      f"got {item!r}", field=key)
            if self.choices is not None and item not in self.choices:
                raise ConfigError(f"{key} must be one of {list(self.choices)}, got {item!r}",
                                  field=key)
            if isinstance(item, (int, float)) and not isinstance(item, bool):
                if self.positive and item <= 0:
                    raise ConfigError(f"{key} must be positive, got {item}", field=key)
                if self.non_negative and item < 0:
                    raise ConfigError(f"{key} must be >= 0, got {item}", field=key)
                if self.at_most is not None and item > self.at_most:
                    raise ConfigError(f"{key} must be <= {self.at_most:g}, got {item}", field=key)

    def _names(self) -> str:
        return " or ".join(t.__name__ for t in self.types)


NUMBER = (int, float)
PATH = Rule((str,), nullable=True)

DATASET_RULES = {
    "dataset": Rule((str,), choices=DATASETS),
    "image_side": Rule((int,), positive=True),
    "class_pair": Rule((list,), items=(str, int)),
    "train_fraction": Rule(NUMBER, positive=True, at_most=1.0),
    "subsample": Rule((int,), positive=True, nullable=True),
    "label_map": Rule((dict,), nullable=True),
    "download": Rule((bool,)),
}
MODEL_INPUT_RULES = {
    "model": PATH,
    "data": PATH,
}
ATTRIBUTION_RULES = {
    "path_steps": Rule((int,), positive=True),
    "space": Rule((str,), choices=("pixel", "amplitude")),
    "baseline": Rule((list,), nullable=True, items=NUMBER),
    "scale": Rule((int,), positive=True),
    "workers": Rule((int,), positive=True),
}

SCHEMAS: Dict[str, Dict[str, Rule]] = {
    "generate-data": dict(DATASET_RULES),
    "train": {
        **DATASET_RULES,
        "train_data": PATH,
        "test_data": PATH,
        "n_qubits": Rule((int,), positive=True),
        "n_layers": Rule((int,), non_negative=True),
        "encoding": Rule((str,), choices=ENCODINGS),
        "fit_policy": Rule((str,), choices=FIT_POLICIES),
        "observable": Rule((str,)),
        "activation": Rule((str,), choices=("none", "tanh")),
        "optimizer": Rule((str,), choices=("spsa", "gd_param_shift")),
        "max_iters": Rule((int,), non_negative=True),
        "learning_rate": Rule(NUMBER, positive=True),
        "spsa": Rule((dict,)),
        "init": Rule((str,), choices=NULL_KINDS),
        "resume": PATH,
        "log_every": Rule((int,), non_negative=True),
    },
    "evaluate": dict(MODEL_INPUT_RULES),
    "attribute": {
        **MODEL_INPUT_RULES,
        **ATTRIBUTION_RULES,
        "samples": Rule((list,), items=(int,)),
        "gradient_method": Rule((str,), choices=GRADIENT_METHODS),
        "shots": Rule((int,), positive=True, nullable=True),
        "ancillas": Rule((int,), positive=True),
    },
    "gradcheck": {
        **MODEL_INPUT_RULES,
        **ATTRIBUTION_RULES,
        "sample": Rule((int,), non_negative=True),
        "shots": Rule((list,), items=(int,), positive=True),
        "ancillas": Rule((list,), items=(int,), positive=True),
        "sigma": Rule(NUMBER, positive=True),
        "pass_fraction": Rule(NUMBER, positive=True, at_most=1.0),
    },
    "null-model": {
        **MODEL_INPUT_RULES,
        **ATTRIBUTION_RULES,
        "samples": Rule((list,), items=(int,)),
        "distributions": Rule((list,), items=(str,), choices=NULL_KINDS),
        "top_fraction": Rule(NUMBER, positive=True, at_most=1.0),
    },
}
SPSA_KEYS = ("a", "c", "A", "alpha", "gamma")


def _read_json(path: Path, what: str) -> Dict[str, Any]:
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataIOError(f"{what} not found: {path}", path=str(path))
    except OSError as e:
        raise DataIOError(f"cannot read {what} {path}: {e}", path=str(path))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{what} {path} is not valid JSON: {e}", field=str(path))
    if not isinstance(data, dict):
        raise ConfigError(f"{what} {path} must contain a JSON object", field=str(path))
    return data


def load_defaults(path: Path = DEFAULT_CONFIG_PATH) -> Dict[str, Any]:
    return _read_json(Path(path), "default configuration")


def environment_overrides() -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if os.getenv("QATTR_OUT_DIR"):
        overrides["output_dir"] = os.getenv("QATTR_OUT_DIR")
    if os.getenv("QATTR_DATA_DIR"):
        overrides["data_dir"] = os.getenv("QATTR_DATA_DIR")
    if os.getenv("QATTR_SEED"):
        try:
            overrides["seed"] = int(os.getenv("QATTR_SEED"))
        except ValueError:
            raise ConfigError(f"QATTR_SEED must be an integer, got {os.getenv('QATTR_SEED')!r}",
                              field="QATTR_SEED")
    return overrides


def _split(document: Dict[str, Any], subcommand: str) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """Global keys and the subcommand's section of a config document.

    A user config may also be flat (only the subcommand's keys).
    """
    globals_ = {k: v for k, v in document.items() if k in GLOBAL_KEYS}
    if subcommand in document:
        section = document[subcommand]
        if not isinstance(section, dict):
            raise ConfigError(f"section {subcommand!r} must be an object", field=subcommand)
    else:
        section = {k: v for k, v in document.items()
                   if k not in GLOBAL_KEYS and k not in SCHEMAS}
    return globals_, dict(section)


def validate(subcommand: str, values: Dict[str, Any]) -> None:
    """Raise ConfigError naming the first unknown or invalid key."""
    schema = SCHEMAS.get(subcommand)
    if schema is None:
        raise ConfigError(f"unknown subcommand {subcommand!r}", field="subcommand")
    for key, value in values.items():
        if key not in schema:
            raise ConfigError(f"unknown configuration key {key!r} for {subcommand}", field=key)
        schema[key].check(key, value)
    if "spsa" in values:
        for key, value in values["spsa"].items():
            if key not in SPSA_KEYS:
                raise ConfigError(f"unknown SPSA setting {key!r}", field=f"spsa.{key}")
            Rule(NUMBER, positive=True).check(f"spsa.{key}", value)
    if "class_pair" in values and len(values["class_pair"]) != 2:
        raise ConfigError("class_pair must have exactly two entries", field="class_pair")


def _check_globals(values: Dict[str, Any]) -> None:
    seed = values.get("seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < MAX_SEED:
        raise ConfigError(f"seed must be an integer in [0, 2^64), got {seed!r}", field="seed")
    for key in ("output_dir", "data_dir"):
        if not isinstance(values.get(key), str) or not values[key]:
            raise ConfigError(f"{key} must be a non-empty path", field=key)


@dataclass
class RunConfig:
    subcommand: str
    values: Dict[str, Any]
    output_dir: Path
    seed: int
    data_dir: Path
    record_timing: bool = False
    artifacts: List[str] = field(default_factory=list)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    def output_path(self, name: str) -> Path:
        """Path inside the output directory, recorded as an artifact."""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.artifacts.append(name)
        return self.output_dir / name

    def resolved(self) -> Dict[str, Any]:
        return {
            "subcommand": self.subcommand,
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "data_dir": str(self.data_dir),
            self.subcommand: self.values,
        }

    def manifest(self, extra: Optional[Dict[str, Any]] = None,
                 seconds: Optional[float] = None) -> Dict[str, Any]:
        document = {
            "tool": "qattr",
            "version": VERSION,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "config": self.resolved(),
            "artifacts": sorted(set(self.artifacts)),
        }
        if extra:
            document.update(extra)
        if self.record_timing and seconds is not None:
            document["wall_time_seconds"] = seconds
        return document

    def write_manifest(self, extra: Optional[Dict[str, Any]] = None,
                       seconds: Optional[float] = None) -> Path:
        path = self.output_dir / "manifest.json"
        write_json(path, self.manifest(extra, seconds))
        return path


def resolve(subcommand: str, config_path: Optional[str] = None,
            overrides: Optional[Dict[str, Any]] = None, output_dir: Optional[str] = None,
            seed: Optional[int] = None, record_timing: bool = False,
            defaults_path: Path = DEFAULT_CONFIG_PATH) -> RunConfig:
    """Merge all configuration sources for `subcommand` and validate the result."""
    if subcommand not in SCHEMAS:
        raise ConfigError(f"unknown subcommand {subcommand!r}", field="subcommand")
    global_values, values = _split(load_defaults(defaults_path), subcommand)
    global_values.update(environment_overrides())
    if config_path:
        user_globals, user_values = _split(_read_json(Path(config_path), "config file"), subcommand)
        global_values.update(user_globals)
        values.update(user_values)
    values.update(overrides or {})
    if output_dir is not None:
        global_values["output_dir"] = output_dir
    if seed is not None:
        global_values["seed"] = seed
    _check_globals(global_values)
    validate(subcommand, values)
    return RunConfig(subcommand, values, Path(global_values["output_dir"]),
                     int(global_values["seed"]), Path(global_values["data_dir"]),
                     record_timing)


def write_json(path, data: Any) -> Path:
    """Deterministic JSON (sorted keys, fixed indent) so reruns are byte-identical."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n")
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}", path=str(path))
    except ValueError as e:
        raise NumericalError(f"cannot serialise {path}: {e}", path=str(path))
    return path
