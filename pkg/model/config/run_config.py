"""
Run configuration: built-in defaults, an optional preset, an INI file and
command-line overrides, resolved in that order and validated as one model.
"""

import configparser
import logging
import os
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from model.config.model_config import (
    PRESETS,
    EstimatorKind,
    FitnessConfig,
    FitnessVariant,
    GAConfig,
    TrainConfig,
    derive_seed,
)

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "ECS_DATA_DIR"
SNAPSHOT_NAME = "resolved_config.ini"
COMMANDS = ("train", "compress", "evaluate", "report", "baseline")


class ConfigError(ValueError):
    """Raised for unknown keys and constraint violations, naming the key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message


def _check_fields(config: Any) -> None:
    """Run a config's validate(), naming the offending fields on failure."""
    try:
        config.validate()
    except ValueError as e:
        message = str(e)
        raise ConfigError(message.split(" must ")[0].replace(" ", ""), message) from e


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class DataSection(_Section):
    dataset: Literal["mnist", "synthetic"] = "mnist"
    data_dir: Optional[str] = None
    eval_size: int = Field(5000, ge=1)
    finetune_size: int = Field(10000, ge=0)
    synthetic_classes: int = Field(10, ge=2)
    synthetic_per_class: int = Field(200, ge=1)


class TrainSection(_Section):
    epochs: int = 12
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay: float = 0.85
    bn_momentum: float = 0.1

    @model_validator(mode="after")
    def _check(self) -> "TrainSection":
        _check_fields(TrainConfig(**self.model_dump()))
        return self


class GASection(_Section):
    population_size: int = 1000
    max_iterations: int = 100
    s1: float = 0.2
    s2: float = 0.7
    s3: float = 0.1
    init_density: float = 0.5
    workers: int = 1

    @model_validator(mode="after")
    def _check(self) -> "GASection":
        _check_fields(GAConfig(**self.model_dump()))
        return self


class FitnessSection(_Section):
    lam: float = Field(0.9, alias="lambda")
    variant: FitnessVariant = FitnessVariant.COUPLED
    estimator: EstimatorKind = EstimatorKind.FINE_TUNE
    finetune_steps: Optional[int] = None
    finetune_batch_size: int = 64
    finetune_learning_rate: float = 0.001
    finetune_momentum: float = 0.9

    @model_validator(mode="after")
    def _check(self) -> "FitnessSection":
        _check_fields(FitnessConfig(**self.model_dump()))
        return self


class RunSection(_Section):
    seed: int = 0
    out: str = "runs/ecs"
    preset: Optional[Literal["full", "desk"]] = None
    checkpoint: Optional[str] = None
    individual: Optional[str] = None
    compressed: Optional[str] = None
    log: Optional[str] = None
    tau: Optional[float] = None
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"


SECTIONS = {
    "data": DataSection,
    "train": TrainSection,
    "ga": GASection,
    "fitness": FitnessSection,
    "run": RunSection,
}


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    command: Literal["train", "compress", "evaluate", "report", "baseline"]
    data: DataSection = Field(default_factory=DataSection)
    train: TrainSection = Field(default_factory=TrainSection)
    ga: GASection = Field(default_factory=GASection)
    fitness: FitnessSection = Field(default_factory=FitnessSection)
    run: RunSection = Field(default_factory=RunSection)

    @property
    def seed(self) -> int:
        return self.run.seed

    @property
    def out_dir(self) -> Path:
        return Path(self.run.out)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            **self.train.model_dump(), seed=derive_seed(self.seed, "train")
        )

    def ga_config(self) -> GAConfig:
        return GAConfig(**self.ga.model_dump(), seed=derive_seed(self.seed, "ga"))

    def fitness_config(self) -> FitnessConfig:
        return FitnessConfig(
            **self.fitness.model_dump(), seed=derive_seed(self.seed, "fitness")
        )

    def snapshot(self) -> str:
        """The fully resolved configuration as INI text, re-parseable as is."""
        lines = [f"# command: {self.command}\n"]
        for name in SECTIONS:
            section = getattr(self, name)
            values = section.model_dump(mode="json", by_alias=True, exclude_none=True)
            lines.append(f"[{name}]\n")
            lines.extend(f"{key} = {value}\n" for key, value in values.items())
            lines.append("\n")
        return "".join(lines)

    def write_snapshot(self, directory: Optional[Union[str, Path]] = None) -> Path:
        target = Path(directory or self.out_dir) / SNAPSHOT_NAME
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(self.snapshot(), encoding="utf-8")
        logger.info(f"Wrote resolved configuration to {target}")
        return target


def _read_file(path: Union[str, Path]) -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # type: ignore[assignment,method-assign]
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError(str(path), f"cannot parse config file ({e})") from e
    sections: Dict[str, Dict[str, str]] = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(name, "unknown section")
        sections[name] = dict(parser[name])
    return sections


def _preset_values(name: str) -> Dict[str, Dict[str, Any]]:
    if name not in PRESETS:
        raise ConfigError("run.preset", f"unknown preset {name!r}")
    preset = PRESETS[name]
    return {
        "ga": {
            "population_size": preset["population_size"],
            "max_iterations": preset["max_iterations"],
        },
        "data": {"finetune_size": preset["finetune_size"]},
    }


def parse_config(
    command: str,
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Mapping[str, Any]]] = None,
) -> RunConfig:
    """Resolve defaults < preset < file < overrides into a validated RunConfig.

    `overrides` maps section -> key -> value; None values are ignored.
    """
    file_values = _read_file(path) if path is not None else {}
    flag_values = {
        section: {k: v for k, v in values.items() if v is not None}
        for section, values in (overrides or {}).items()
    }
    for section in flag_values:
        if section not in SECTIONS:
            raise ConfigError(section, "unknown section")

    preset = flag_values.get("run", {}).get("preset") or file_values.get(
        "run", {}
    ).get("preset")
    merged: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}
    layers = [_preset_values(preset)] if preset else []
    layers += [file_values, flag_values]
    for layer in layers:
        for section, values in layer.items():
            merged[section].update(values)

    if not merged["data"].get("data_dir") and os.environ.get(DATA_DIR_ENV):
        merged["data"]["data_dir"] = os.environ[DATA_DIR_ENV]

    try:
        return RunConfig(command=command, **merged)
    except ValidationError as e:
        error = e.errors()[0]
        key = ".".join(str(part) for part in error["loc"]) or "config"
        cause = error.get("ctx", {}).get("error")
        if isinstance(cause, ConfigError):
            raise ConfigError(f"{key}.{cause.key}", cause.message) from e
        raise ConfigError(key, error["msg"]) from e
