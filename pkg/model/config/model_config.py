import hashlib
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional


class FitnessVariant(Enum):
    UNIFORM = "v1-uniform"
    SIZED = "v2-sized"
    COUPLED_LITERAL = "v3-coupled-literal"
    COUPLED = "v3-coupled-corrected"


class EstimatorKind(Enum):
    FINE_TUNE = "fine-tune"
    SURROGATE = "surrogate"


def derive_seed(master: int, purpose: str) -> int:
    """Derive a stable 63-bit seed for one concern from the master seed."""
    digest = hashlib.sha256(f"{master}:{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], byteorder="little") >> 1


@dataclass(frozen=True)
class TrainConfig:
    # LeNet on MNIST: 12 epochs with the rate shrinking 15% per epoch
    epochs: int = 12
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay: float = 0.85
    bn_momentum: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        """Validate the configuration."""
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not self.lr_decay > 0:
            raise ValueError("lr_decay must be > 0")
        if not 0 < self.bn_momentum <= 1:
            raise ValueError("bn_momentum must be in (0, 1]")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class GAConfig:
    population_size: int = 1000
    max_iterations: int = 100
    s1: float = 0.2
    s2: float = 0.7
    s3: float = 0.1
    init_density: float = 0.5
    seed: int = 0
    workers: int = 1

    def validate(self) -> None:
        """Validate the configuration."""
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("s1", "s2", "s3"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if abs(self.s1 + self.s2 + self.s3 - 1.0) > 1e-9:
            raise ValueError(
                f"s1 + s2 + s3 must equal 1 (got {self.s1 + self.s2 + self.s3:.12g})"
            )
        if not 0 < self.init_density <= 1:
            raise ValueError("init_density must be in (0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class FitnessConfig:
    lam: float = 0.9
    variant: FitnessVariant = FitnessVariant.COUPLED
    estimator: EstimatorKind = EstimatorKind.FINE_TUNE
    # None means one pass over the fine-tune subset
    finetune_steps: Optional[int] = None
    finetune_batch_size: int = 64
    finetune_learning_rate: float = 0.001
    finetune_momentum: float = 0.9
    seed: int = 0

    def validate(self) -> None:
        """Validate the configuration."""
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.finetune_steps is not None and self.finetune_steps < 0:
            raise ValueError("finetune_steps must be >= 0")
        if self.finetune_batch_size < 1:
            raise ValueError("finetune_batch_size must be >= 1")
        if not self.finetune_learning_rate > 0:
            raise ValueError("finetune_learning_rate must be > 0")

    def finetune_train_config(self) -> TrainConfig:
        """Training settings used for per-individual fine-tuning."""
        return TrainConfig(
            epochs=1,
            batch_size=self.finetune_batch_size,
            learning_rate=self.finetune_learning_rate,
            momentum=self.finetune_momentum,
            weight_decay=0.0,
            lr_decay=1.0,
            seed=self.seed,
        )


PRESETS = {
    "full": {
        "population_size": 1000,
        "max_iterations": 100,
        "finetune_size": 10000,
    },
    "desk": {
        "population_size": 50,
        "max_iterations": 20,
        "finetune_size": 2000,
    },
}
