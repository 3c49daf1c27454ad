from typing import TYPE_CHECKING, Optional

import numpy as np

from model.compression.genome import Individual, MaskLayout
from model.config.model_config import FitnessConfig, derive_seed
from model.fine_tuning.base import BaseErrorEstimator, ErrorEstimate

if TYPE_CHECKING:
    from data.datasets import DatasetBundle
    from model.core.network import TrainedNetwork


class SurrogateErrorEstimator(BaseErrorEstimator):
    """Deterministic pseudo-error of a mask, for exercising the search without training.

    Each maskable filter gets a fixed cost drawn from the config seed: a
    `critical_fraction` of filters cost `critical_cost` when dropped, the rest
    cost at most `redundant_cost`. The error is the base error plus the cost of
    every dropped filter, capped at 1.
    """

    def __init__(
        self,
        config: FitnessConfig,
        layout: MaskLayout,
        net: Optional["TrainedNetwork"] = None,
        data: Optional["DatasetBundle"] = None,
        base_error: float = 0.01,
        critical_fraction: float = 0.5,
        critical_cost: float = 0.5,
        redundant_cost: float = 0.01,
    ):
        super().__init__(config, layout, net, data)
        rng = np.random.default_rng(derive_seed(config.seed, "surrogate"))
        critical = rng.random(layout.bit_length) < critical_fraction
        redundant = rng.uniform(0.0, redundant_cost, size=layout.bit_length)
        self.costs = np.where(critical, critical_cost, redundant)
        self.base_error = base_error

    def estimate(self, ind: Individual, seed: int) -> ErrorEstimate:
        dropped = ind.bits == 0
        error = self.base_error + float(self.costs[dropped].sum())
        return ErrorEstimate(min(1.0, error))
