from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

from model.config.model_config import FitnessConfig

if TYPE_CHECKING:
    from data.datasets import DatasetBundle
    from model.compression.genome import Individual, MaskLayout
    from model.core.network import TrainedNetwork


@dataclass(frozen=True)
class ErrorEstimate:
    error: float
    fine_tuned: bool = False
    diverged: bool = False


class BaseErrorEstimator(ABC):
    """Base class for measuring the error E of the network an individual encodes."""

    def __init__(
        self,
        config: FitnessConfig,
        layout: "MaskLayout",
        net: Optional["TrainedNetwork"] = None,
        data: Optional["DatasetBundle"] = None,
    ):
        self.config = config
        self.config.validate()
        self.layout = layout

    @abstractmethod
    def estimate(self, ind: "Individual", seed: int) -> ErrorEstimate:
        """Return the error in [0, 1] for one individual.

        `seed` is private to the individual so results do not depend on
        evaluation order.
        """
        pass
