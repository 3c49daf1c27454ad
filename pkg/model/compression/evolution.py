"""
Genetic search over filter masks: roulette selection, two-point crossover,
fragment-flip mutation and elitism.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from model.compression.fitness import FitnessEvaluator, FitnessReport
from model.compression.genome import (
    Individual,
    MaskLayout,
    compact_network,
    random_individual,
    repair,
)
from model.config.model_config import FitnessConfig, GAConfig, TrainConfig, derive_seed
from model.core.errors import TrainingDivergedError
from model.core.network import TrainedNetwork, evaluate_error
from model.core.training import train

if TYPE_CHECKING:
    from data.datasets import DatasetBundle

logger = logging.getLogger(__name__)

# Floor applied to fitness values before roulette selection, so a population
# of worst-case entries (E = 1, nothing discarded) stays selectable.
MIN_SELECTION_FITNESS = 1e-12


class Operator(Enum):
    SELECTION = "selection"
    CROSSOVER = "crossover"
    MUTATION = "mutation"


def selection_probabilities(fitnesses: Sequence[float]) -> np.ndarray:
    """Pr(j) = f_j / sum_k f_k."""
    values = np.asarray(fitnesses, dtype=np.float64)
    if values.size == 0:
        raise ValueError("selection needs at least one fitness value")
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise ValueError("fitness values must be finite and > 0")
    return values / values.sum()


def roulette_select(probabilities: np.ndarray, rng: np.random.Generator) -> int:
    cumulative = np.cumsum(probabilities)
    point = rng.random() * cumulative[-1]
    index = int(np.searchsorted(cumulative, point, side="right"))
    return min(index, len(cumulative) - 1)


def choose_operator(config: GAConfig, rng: np.random.Generator) -> Operator:
    draw = rng.random()
    if draw < config.s1:
        return Operator.SELECTION
    if draw < config.s1 + config.s2:
        return Operator.CROSSOVER
    return Operator.MUTATION


def _cut_points(length: int, rng: np.random.Generator) -> Tuple[int, int]:
    low, high = sorted(int(c) for c in rng.integers(0, length + 1, size=2))
    return low, high


def crossover(
    parent1: Individual,
    parent2: Individual,
    rng: np.random.Generator,
    cuts: Optional[Tuple[int, int]] = None,
) -> Tuple[Individual, Individual]:
    """Swap the segment between two cut points; uniform cuts unless given."""
    if parent1.layout != parent2.layout:
        raise ValueError("crossover parents must share a layout")
    layout = parent1.layout
    low, high = cuts if cuts is not None else _cut_points(layout.bit_length, rng)
    if not 0 <= low <= high <= layout.bit_length:
        raise ValueError(f"invalid cut points ({low}, {high})")

    first = parent1.bits.copy()
    second = parent2.bits.copy()
    first[low:high] = parent2.bits[low:high]
    second[low:high] = parent1.bits[low:high]
    return (
        Individual(layout, repair(first, layout, rng)),
        Individual(layout, repair(second, layout, rng)),
    )


def mutate(
    parent: Individual,
    rng: np.random.Generator,
    fragment: Optional[Tuple[int, int]] = None,
) -> Individual:
    """Complement a contiguous fragment of bits (XOR with ones)."""
    layout = parent.layout
    if fragment is None:
        fragment = _cut_points(layout.bit_length, rng)
    low, high = fragment
    if not 0 <= low <= high <= layout.bit_length:
        raise ValueError(f"invalid fragment ({low}, {high})")
    bits = parent.bits.copy()
    bits[low:high] ^= 1
    return Individual(layout, repair(bits, layout, rng))


def best_index(
    individuals: Sequence[Individual], reports: Sequence[FitnessReport]
) -> int:
    """Highest fitness; ties go to fewer kept weights, then the smallest bits."""
    if not individuals:
        raise ValueError("no individuals to rank")
    return min(
        range(len(individuals)),
        key=lambda j: (
            -reports[j].fitness,
            reports[j].kept_weights,
            individuals[j].key,
        ),
    )


@dataclass
class Population:
    generation: int
    individuals: List[Individual]
    reports: List[FitnessReport]

    def validate(self, size: int) -> None:
        if len(self.individuals) != size or len(self.reports) != size:
            raise ValueError(
                f"population of generation {self.generation} has "
                f"{len(self.individuals)} individuals, expected {size}"
            )
        layout = self.individuals[0].layout
        for ind in self.individuals:
            if ind.layout != layout:
                raise ValueError("population mixes layouts")
            ind.validate()

    @property
    def best(self) -> Tuple[Individual, FitnessReport]:
        j = best_index(self.individuals, self.reports)
        return self.individuals[j], self.reports[j]

    def fitnesses(self) -> np.ndarray:
        return np.array([r.fitness for r in self.reports], dtype=np.float64)


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    min_fitness: float
    best_error: float
    best_kept_fraction: float
    best_individual: str
    population_size: int
    selections: int = 0
    crossovers: int = 0
    mutations: int = 0
    evaluations: int = 0

    @classmethod
    def from_population(
        cls,
        population: Population,
        counts: Optional[dict] = None,
        evaluations: int = 0,
    ) -> "GenerationRecord":
        best, report = population.best
        fitnesses = population.fitnesses()
        counts = counts or {}
        return cls(
            generation=population.generation,
            best_fitness=report.fitness,
            mean_fitness=float(fitnesses.mean()),
            min_fitness=float(fitnesses.min()),
            best_error=report.error,
            best_kept_fraction=report.kept_fraction,
            best_individual=best.to_text(),
            population_size=len(population.individuals),
            selections=counts.get(Operator.SELECTION, 0),
            crossovers=counts.get(Operator.CROSSOVER, 0),
            mutations=counts.get(Operator.MUTATION, 0),
            evaluations=evaluations,
        )


@dataclass
class EvolutionLog:
    records: List[GenerationRecord] = field(default_factory=list)

    def append(self, record: GenerationRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def best_fitness_curve(self) -> List[float]:
        return [r.best_fitness for r in self.records]

    def is_monotone(self) -> bool:
        curve = self.best_fitness_curve()
        return all(b >= a for a, b in zip(curve, curve[1:]))

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.records
        )

    @classmethod
    def from_jsonl(cls, text: str) -> "EvolutionLog":
        records = [
            GenerationRecord(**json.loads(line))
            for line in text.splitlines()
            if line.strip()
        ]
        return cls(records)

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records])


def _next_generation(
    population: Population,
    evaluator: FitnessEvaluator,
    config: GAConfig,
    rng: np.random.Generator,
) -> Tuple[Population, dict]:
    """Breed generation t + 1; every random draw happens before evaluation."""
    probabilities = selection_probabilities(
        np.maximum(population.fitnesses(), MIN_SELECTION_FITNESS)
    )
    elite, _ = population.best
    parents = population.individuals
    counts = {op: 0 for op in Operator}
    slots: List[Tuple[Individual, ...]] = []

    for _ in range(config.population_size - 1):
        operator = choose_operator(config, rng)
        counts[operator] += 1
        if operator is Operator.SELECTION:
            slots.append((parents[roulette_select(probabilities, rng)],))
        elif operator is Operator.CROSSOVER:
            first = parents[roulette_select(probabilities, rng)]
            second = parents[roulette_select(probabilities, rng)]
            slots.append(crossover(first, second, rng))
        else:
            slots.append((mutate(parents[roulette_select(probabilities, rng)], rng),))

    evaluator.evaluate_many(
        [ind for slot in slots for ind in slot], workers=config.workers
    )
    individuals = [elite]
    for slot in slots:
        # crossover keeps the fitter offspring
        reports = [evaluator.evaluate(ind) for ind in slot]
        individuals.append(slot[best_index(slot, reports)])

    reports = evaluator.evaluate_many(individuals, workers=config.workers)
    return Population(population.generation + 1, individuals, reports), counts


def evolve(
    evaluator: FitnessEvaluator,
    config: GAConfig,
    initial: Optional[Sequence[Individual]] = None,
) -> Tuple[Individual, FitnessReport, EvolutionLog]:
    """Run the GA for `max_iterations` generations, the first being random."""
    config.validate()
    layout: MaskLayout = evaluator.layout
    rng = np.random.default_rng(derive_seed(config.seed, "evolution"))

    if initial is None:
        individuals = [
            random_individual(layout, config.init_density, rng)
            for _ in range(config.population_size)
        ]
    else:
        individuals = list(initial)
    population = Population(
        1, individuals, evaluator.evaluate_many(individuals, workers=config.workers)
    )
    population.validate(config.population_size)

    log = EvolutionLog()
    log.append(
        GenerationRecord.from_population(population, evaluations=evaluator.evaluations)
    )
    logger.info(
        f"Generation 1: best fitness {log.records[-1].best_fitness:.4f} "
        f"(K={config.population_size}, {layout.bit_length} bits)"
    )

    for _ in range(config.max_iterations - 1):
        population, counts = _next_generation(population, evaluator, config, rng)
        population.validate(config.population_size)
        record = GenerationRecord.from_population(
            population, counts, evaluator.evaluations
        )
        log.append(record)
        logger.info(
            f"Generation {record.generation}: best fitness {record.best_fitness:.4f}, "
            f"mean {record.mean_fitness:.4f}, best error {record.best_error:.4f}, "
            f"kept {record.best_kept_fraction:.3%}"
        )

    best, report = population.best
    return best, report, log


@dataclass
class EcsResult:
    best: Individual
    report: FitnessReport
    network: TrainedNetwork
    log: EvolutionLog
    final_error: float


def final_train_config(fitness_config: FitnessConfig, seed: int) -> TrainConfig:
    """One pass over the full training split at the fine-tune learning rate."""
    return TrainConfig(
        epochs=1,
        batch_size=fitness_config.finetune_batch_size,
        learning_rate=fitness_config.finetune_learning_rate,
        momentum=fitness_config.finetune_momentum,
        weight_decay=0.0,
        lr_decay=1.0,
        seed=derive_seed(seed, "final-finetune"),
    )


def run_ecs(
    net: TrainedNetwork,
    data: "DatasetBundle",
    ga_config: GAConfig,
    fitness_config: FitnessConfig,
    train_config: Optional[TrainConfig] = None,
) -> EcsResult:
    """Search for the best mask, then compact and fine-tune the winner."""
    ga_config.validate()
    fitness_config.validate()
    layout = MaskLayout.from_spec(net.spec)
    evaluator = FitnessEvaluator.create(layout, fitness_config, net=net, data=data)
    best, report, log = evolve(evaluator, ga_config)

    compact = compact_network(net, best)
    settings = train_config or final_train_config(fitness_config, ga_config.seed)
    try:
        tuned = train(compact, data.train, settings)
    except TrainingDivergedError as e:
        logger.warning(f"Final fine-tune diverged, keeping the compact weights: {e}")
        tuned = compact
    final_error = evaluate_error(tuned, data.final)
    logger.info(
        f"ECS finished after {len(log)} generations: {best.to_text()} "
        f"keeps {report.kept_fraction:.2%} of weights, final error {final_error:.4f}"
    )
    return EcsResult(best, report, tuned, log, final_error)
