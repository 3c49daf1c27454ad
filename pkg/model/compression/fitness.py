"""
Fitness of an individual: f = 1 - E + lambda * sparsity term, with results
cached by bit string.
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence

import numpy as np

from model.compression.genome import (
    Individual,
    MaskLayout,
    kept_weight_count,
    surviving_counts,
)
from model.config.model_config import FitnessConfig, FitnessVariant, derive_seed
from model.core.errors import LayoutMismatchError, NonFiniteError, ShapeMismatchError
from model.fine_tuning.base import BaseErrorEstimator, ErrorEstimate
from model.fine_tuning.factory import ErrorEstimatorFactory

if TYPE_CHECKING:
    from data.datasets import DatasetBundle
    from model.core.network import TrainedNetwork

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitnessReport:
    error: float
    sparsity: float
    fitness: float
    variant: FitnessVariant
    lam: float
    fine_tuned: bool
    diverged: bool
    kept_weights: int
    total_weights: int

    @property
    def kept_fraction(self) -> float:
        return self.kept_weights / self.total_weights

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["variant"] = self.variant.value
        return data


def sparsity_term(
    layout: MaskLayout, ind: Individual, variant: FitnessVariant
) -> float:
    """Normalised amount of discarded filters or weights, in [0, 1]."""
    if ind.layout != layout:
        raise LayoutMismatchError("individual layout does not match")
    counts = surviving_counts(ind)
    originals = [layout.input_channels] + layout.filter_counts
    dropped = [n - kept for n, kept in zip(originals, counts)]

    if variant is FitnessVariant.UNIFORM:
        return sum(dropped[1:]) / layout.total_filters
    if variant is FitnessVariant.SIZED:
        total = sum(
            shape.height * shape.width * shape.channels * dropped[i]
            for i, shape in enumerate(layout.shapes, start=1)
        )
        return total / layout.total_weights
    if variant is FitnessVariant.COUPLED_LITERAL:
        total = sum(
            shape.height * shape.width * dropped[i - 1] * dropped[i]
            for i, shape in enumerate(layout.shapes, start=1)
        )
        return total / layout.total_weights
    if variant is FitnessVariant.COUPLED:
        _, discarded, total = kept_weight_count(layout, counts)
        return discarded / total
    raise ValueError(f"Unsupported fitness variant: {variant}")


def fitness_value(error: float, sparsity: float, lam: float) -> float:
    return 1.0 - error + lam * sparsity


def individual_seed(master: int, ind: Individual) -> int:
    """Seed private to one bit string, independent of evaluation order."""
    return derive_seed(master, f"individual:{ind.key}")


class FitnessEvaluator:
    """Evaluates individuals against one error estimator and caches the reports."""

    def __init__(
        self,
        layout: MaskLayout,
        config: FitnessConfig,
        estimator: BaseErrorEstimator,
    ):
        config.validate()
        self.layout = layout
        self.config = config
        self.estimator = estimator
        self.evaluations = 0
        self._cache: Dict[str, FitnessReport] = {}
        self._lock = threading.Lock()

    @classmethod
    def create(
        cls,
        layout: MaskLayout,
        config: FitnessConfig,
        net: Optional["TrainedNetwork"] = None,
        data: Optional["DatasetBundle"] = None,
    ) -> "FitnessEvaluator":
        estimator = ErrorEstimatorFactory.create(config, layout, net=net, data=data)
        return cls(layout, config, estimator)

    def cached(self, ind: Individual) -> Optional[FitnessReport]:
        with self._lock:
            return self._cache.get(ind.key)

    @property
    def cache_size(self) -> int:
        with self._lock:
            return len(self._cache)

    def _report(self, ind: Individual, estimate: ErrorEstimate) -> FitnessReport:
        error = float(np.clip(estimate.error, 0.0, 1.0))
        sparsity = sparsity_term(self.layout, ind, self.config.variant)
        kept, _, total = kept_weight_count(self.layout, surviving_counts(ind))
        return FitnessReport(
            error=error,
            sparsity=sparsity,
            fitness=fitness_value(error, sparsity, self.config.lam),
            variant=self.config.variant,
            lam=self.config.lam,
            fine_tuned=estimate.fine_tuned,
            diverged=estimate.diverged,
            kept_weights=kept,
            total_weights=total,
        )

    def evaluate(self, ind: Individual) -> FitnessReport:
        if ind.layout != self.layout:
            raise LayoutMismatchError("individual layout does not match the evaluator")
        ind.validate()
        cached = self.cached(ind)
        if cached is not None:
            return cached

        seed = individual_seed(self.config.seed, ind)
        try:
            estimate = self.estimator.estimate(ind, seed)
        except (NonFiniteError, ShapeMismatchError, RuntimeError) as e:
            logger.warning(f"Error estimation failed for {ind.to_text()}: {e}")
            estimate = ErrorEstimate(1.0, fine_tuned=False, diverged=True)
        report = self._report(ind, estimate)

        with self._lock:
            self._cache[ind.key] = report
            self.evaluations += 1
        return report

    def evaluate_many(
        self, individuals: Sequence[Individual], workers: int = 1
    ) -> List[FitnessReport]:
        """Reports in input order; cache misses run on up to `workers` threads."""
        pending: Dict[str, Individual] = {}
        for ind in individuals:
            if ind.key not in pending and self.cached(ind) is None:
                pending[ind.key] = ind

        if workers > 1 and len(pending) > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                list(executor.map(self.evaluate, pending.values()))
        else:
            for ind in pending.values():
                self.evaluate(ind)
        return [self.evaluate(ind) for ind in individuals]


def evaluate_fitness(
    net: "TrainedNetwork",
    ind: Individual,
    data: "DatasetBundle",
    config: FitnessConfig,
    evaluator: Optional[FitnessEvaluator] = None,
) -> FitnessReport:
    """Compact, fine-tune and score one individual.

    Pass a shared `evaluator` to reuse its cache across calls.
    """
    if evaluator is None:
        evaluator = FitnessEvaluator.create(
            MaskLayout.from_spec(net.spec), config, net=net, data=data
        )
    return evaluator.evaluate(ind)
