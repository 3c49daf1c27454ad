import logging
import math
from typing import TYPE_CHECKING, Optional

from model.compression.genome import Individual, MaskLayout, compact_network
from model.config.model_config import FitnessConfig
from model.core.errors import NonFiniteError, ShapeMismatchError
from model.core.network import TrainedNetwork, evaluate_error
from model.core.training import train
from model.fine_tuning.base import BaseErrorEstimator, ErrorEstimate

if TYPE_CHECKING:
    from data.datasets import DatasetBundle, LabeledDataset

logger = logging.getLogger(__name__)


def fine_tune(
    compact_net: TrainedNetwork,
    subset: "LabeledDataset",
    steps: int,
    seed: int,
    config: Optional[FitnessConfig] = None,
) -> TrainedNetwork:
    """Run `steps` seeded SGD mini-batch steps on the fine-tune subset.

    Raises TrainingDivergedError on a non-finite loss; callers decide whether
    that is fatal.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0:
        return compact_net.copy()
    settings = (config or FitnessConfig()).finetune_train_config().with_seed(seed)
    return train(compact_net, subset, settings, max_steps=steps)


class FineTuneErrorEstimator(BaseErrorEstimator):
    """Compact the network, fine-tune it briefly, and measure its error."""

    def __init__(
        self,
        config: FitnessConfig,
        layout: MaskLayout,
        net: Optional[TrainedNetwork] = None,
        data: Optional["DatasetBundle"] = None,
    ):
        super().__init__(config, layout, net, data)
        if net is None or data is None:
            raise ValueError("fine-tune estimation needs a network and datasets")
        if MaskLayout.from_spec(net.spec) != layout:
            raise ValueError("network does not match the mask layout")
        self.net = net
        self.data = data

    @property
    def steps(self) -> int:
        if self.config.finetune_steps is not None:
            return self.config.finetune_steps
        return math.ceil(len(self.data.finetune) / self.config.finetune_batch_size)

    def estimate(self, ind: Individual, seed: int) -> ErrorEstimate:
        compact = compact_network(self.net, ind)
        try:
            tuned = fine_tune(
                compact, self.data.finetune, self.steps, seed, self.config
            )
            error = evaluate_error(tuned, self.data.evaluation)
        except NonFiniteError as e:
            logger.warning(f"Fine-tuning diverged for {ind.to_text()}: {e}")
            return ErrorEstimate(1.0, fine_tuned=True, diverged=True)
        except ShapeMismatchError as e:
            logger.warning(f"Cannot fine-tune {ind.to_text()}: {e}")
            return ErrorEstimate(1.0, fine_tuned=False, diverged=True)
        return ErrorEstimate(error, fine_tuned=self.steps > 0)
