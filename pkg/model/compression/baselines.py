"""
Greedy pruning baselines and the control experiments run beside ECS.
"""

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence

import numpy as np
import torch

from model.compression.genome import (
    Individual,
    MaskLayout,
    compact_network,
    repair,
    surviving_counts,
)
from model.config.model_config import TrainConfig, derive_seed
from model.core.network import TrainedNetwork, evaluate_error, init_network
from model.core.spec import NetworkSpec
from model.core.training import train

if TYPE_CHECKING:
    from data.datasets import DatasetBundle, LabeledDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LayerSparsity:
    layer: int
    total: int
    zeros: int

    @property
    def fraction(self) -> float:
        return self.zeros / self.total


def weight_threshold_mask(filters: torch.Tensor, tau: float) -> torch.Tensor:
    """Elementwise keep mask: 0 where |w| <= tau."""
    return (filters.abs() > tau).to(torch.uint8)


def weight_sparsity_stats(net: TrainedNetwork, tau: float) -> List[LayerSparsity]:
    """Zeros the weight-magnitude rule would leave in every conv layer."""
    stats = []
    for ordinal in range(len(net.spec.conv_indices)):
        mask = weight_threshold_mask(net.conv_weight(ordinal), tau)
        total = int(mask.numel())
        stats.append(LayerSparsity(ordinal + 1, total, total - int(mask.sum())))
    return stats


def filter_norms(weight: torch.Tensor) -> np.ndarray:
    """Squared Frobenius norm of every filter of an (N, C, H, W) tensor."""
    return weight.detach().double().pow(2).sum(dim=(1, 2, 3)).numpy()


def filter_norm_bits(weight: torch.Tensor, tau: float) -> np.ndarray:
    return (filter_norms(weight) > tau).astype(np.uint8)


def filter_norm_mask(net: TrainedNetwork, tau: float, seed: int = 0) -> Individual:
    """Drop every filter whose squared norm is <= tau; the class layer stays."""
    layout = MaskLayout.from_spec(net.spec)
    parts = [
        filter_norm_bits(net.conv_weight(ordinal), tau)
        for ordinal in range(layout.depth - 1)
    ]
    bits = np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint8)
    rng = np.random.default_rng(derive_seed(seed, "filter-norm-repair"))
    return Individual(layout, repair(bits, layout, rng))


def filter_norm_topk(net: TrainedNetwork, counts: Sequence[int]) -> Individual:
    """Keep the `counts[i]` largest-norm filters of every maskable layer."""
    layout = MaskLayout.from_spec(net.spec)
    if len(counts) != layout.depth - 1:
        raise ValueError(
            f"need {layout.depth - 1} per-layer counts, got {len(counts)}"
        )
    parts = []
    for ordinal, keep in enumerate(counts):
        norms = filter_norms(net.conv_weight(ordinal))
        if not 1 <= keep <= norms.size:
            raise ValueError(f"conv layer {ordinal + 1} cannot keep {keep} filters")
        bits = np.zeros(norms.size, dtype=np.uint8)
        bits[np.argsort(-norms, kind="stable")[:keep]] = 1
        parts.append(bits)
    return Individual(layout, np.concatenate(parts))


def random_budget_individual(
    layout: MaskLayout, target_total_filters: int, rng: np.random.Generator
) -> Individual:
    """Random architecture with `target_total_filters` filters in total.

    Per-layer counts are drawn uniformly from all count vectors with
    1 <= n_i <= N_i that meet the budget; each layer then keeps that many
    filters chosen at random. The class layer is counted in the total and
    always kept whole.
    """
    budget = target_total_filters - layout.filter_counts[-1]
    counts = _uniform_counts(layout.maskable_counts, budget, target_total_filters, rng)
    bits = np.zeros(layout.bit_length, dtype=np.uint8)
    for window, count in zip(layout.layer_slices(), counts):
        width = window.stop - window.start
        bits[window.start + rng.choice(width, size=count, replace=False)] = 1
    return Individual(layout, bits)


def _uniform_counts(
    caps: Sequence[int], budget: int, target: int, rng: np.random.Generator
) -> List[int]:
    if not len(caps) <= budget <= sum(caps):
        raise ValueError(
            f"target of {target} filters is infeasible; it must lie in "
            f"[{len(caps) + target - budget}, {sum(caps) + target - budget}]"
        )
    # ways[i][s]: count vectors for layers i.. summing to s
    ways = [[0] * (budget + 1) for _ in range(len(caps) + 1)]
    ways[len(caps)][0] = 1
    for i in range(len(caps) - 1, -1, -1):
        prefix = [0]
        for value in ways[i + 1]:
            prefix.append(prefix[-1] + value)
        for s in range(1, budget + 1):
            ways[i][s] = prefix[s] - prefix[max(s - caps[i], 0)]
    counts = []
    remaining = budget
    for i, cap in enumerate(caps):
        options = list(range(1, min(cap, remaining) + 1))
        weights = [ways[i + 1][remaining - n] for n in options]
        total = sum(weights)
        probabilities = np.array([w / total for w in weights])
        n = options[int(rng.choice(len(options), p=probabilities))]
        counts.append(n)
        remaining -= n
    return counts


@dataclass
class ControlResult:
    method: str
    network: TrainedNetwork
    error: Optional[float] = None


def scratch_train_control(
    compact_spec: NetworkSpec,
    dataset: "LabeledDataset",
    train_config: TrainConfig,
    evaluation: Optional["LabeledDataset"] = None,
) -> ControlResult:
    """Train an architecture from random initialisation; divergence aborts."""
    net = init_network(compact_spec, derive_seed(train_config.seed, "scratch-init"))
    trained = train(net, dataset, train_config)
    error = evaluate_error(trained, evaluation) if evaluation is not None else None
    return ControlResult("scratch", trained, error)


def random_architecture_control(
    spec: NetworkSpec,
    target_total_filters: int,
    seed: int,
    dataset: "LabeledDataset",
    train_config: TrainConfig,
    evaluation: Optional["LabeledDataset"] = None,
) -> ControlResult:
    """Scratch-train a random architecture holding `target_total_filters` filters."""
    layout = MaskLayout.from_spec(spec)
    rng = np.random.default_rng(derive_seed(seed, "random-architecture"))
    ind = random_budget_individual(layout, target_total_filters, rng)
    counts = surviving_counts(ind)
    logger.info(f"Random architecture filter counts: {counts[1:]}")
    result = scratch_train_control(
        spec.with_filter_counts(counts[1:]),
        dataset,
        train_config.with_seed(derive_seed(seed, "random-architecture-train")),
        evaluation,
    )
    result.method = "random-architecture"
    return result


def control_record(
    method: str, net: TrainedNetwork, total_weights: int, error: float
) -> Dict[str, Any]:
    """One comparison row in the shape of the compression report records."""
    kept = net.weight_count()
    return {
        "method": method,
        "filter_counts": [layer.out_filters for layer in net.spec.conv_layers],
        "kept_weights": kept,
        "total_weights": total_weights,
        "r_c": total_weights / kept,
        "error": error,
        "accuracy": 1.0 - error,
    }


def compare_controls(
    net: TrainedNetwork,
    data: "DatasetBundle",
    ecs_network: TrainedNetwork,
    finetune_config: TrainConfig,
    scratch_config: TrainConfig,
    seed: int = 0,
    tau: Optional[float] = None,
) -> List[Dict[str, Any]]:
    """Run every control at the ECS filter budget and collect comparable rows.

    The filter-norm baseline keeps the same per-layer counts as the ECS
    network; with `tau` set, the plain threshold rule is run as well.
    """
    total = net.weight_count()
    evaluation = data.final
    counts = [layer.out_filters for layer in ecs_network.spec.conv_layers]
    ecs_error = evaluate_error(ecs_network, evaluation)
    rows = [control_record("ecs", ecs_network, total, ecs_error)]

    pruned = {"filter-norm-budget": filter_norm_topk(net, counts[:-1])}
    if tau is not None:
        pruned["filter-norm-threshold"] = filter_norm_mask(net, tau, seed)
    for method, ind in pruned.items():
        tuned = train(
            compact_network(net, ind),
            data.train,
            finetune_config.with_seed(derive_seed(seed, method)),
        )
        error = evaluate_error(tuned, evaluation)
        rows.append(control_record(method, tuned, total, error))

    scratch = scratch_train_control(
        ecs_network.spec,
        data.train,
        scratch_config.with_seed(derive_seed(seed, "scratch")),
    )
    randomized = random_architecture_control(
        net.spec, sum(counts), seed, data.train, scratch_config
    )
    for control in (scratch, randomized):
        error = evaluate_error(control.network, evaluation)
        rows.append(control_record(control.method, control.network, total, error))

    for row in rows:
        logger.info(f"{row['method']}: error {row['error']:.4f}, r_c {row['r_c']:.2f}")
    return rows
