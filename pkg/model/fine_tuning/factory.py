from typing import Optional, Type

from model.compression.genome import MaskLayout
from model.config.model_config import EstimatorKind, FitnessConfig
from model.fine_tuning.base import BaseErrorEstimator
from model.fine_tuning.sgd_tuner import FineTuneErrorEstimator
from model.fine_tuning.surrogate import SurrogateErrorEstimator


class ErrorEstimatorFactory:
    """Factory class for creating error estimators by kind."""

    _estimators: dict[EstimatorKind, Type[BaseErrorEstimator]] = {
        EstimatorKind.FINE_TUNE: FineTuneErrorEstimator,
        EstimatorKind.SURROGATE: SurrogateErrorEstimator,
    }

    @classmethod
    def create(
        cls, config: FitnessConfig, layout: MaskLayout, net=None, data=None
    ) -> BaseErrorEstimator:
        """Create the estimator selected by `config.estimator`."""
        estimator_class: Optional[Type[BaseErrorEstimator]] = cls._estimators.get(
            config.estimator
        )
        if not estimator_class:
            raise ValueError(f"No error estimator registered for: {config.estimator}")
        return estimator_class(config, layout, net=net, data=data)

    @classmethod
    def register_estimator(
        cls, kind: EstimatorKind, estimator_class: Type[BaseErrorEstimator]
    ) -> None:
        """Register a new estimator implementation for a kind."""
        cls._estimators[kind] = estimator_class
