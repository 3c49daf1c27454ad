"""
Train / evaluation / fine-tune index plans.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from data.datasets import DatasetBundle, LabeledDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitPlan:
    """Sorted index sets into one source dataset."""

    train_indices: np.ndarray
    eval_indices: np.ndarray
    finetune_indices: np.ndarray
    seed: int

    def validate(self) -> None:
        train = set(self.train_indices.tolist())
        if not set(self.finetune_indices.tolist()) <= train:
            raise ValueError("fine-tune subset must lie inside the training indices")
        if train & set(self.eval_indices.tolist()):
            raise ValueError("training and evaluation indices overlap")

    def bundle(
        self, source: LabeledDataset, test: Optional[LabeledDataset] = None
    ) -> DatasetBundle:
        return DatasetBundle(
            train=source.subset(self.train_indices, f"{source.name}-train"),
            finetune=source.subset(self.finetune_indices, f"{source.name}-finetune"),
            evaluation=source.subset(self.eval_indices, f"{source.name}-eval"),
            test=test,
        )


def plan_splits(
    dataset_size: int, eval_size: int, finetune_size: int, seed: int
) -> SplitPlan:
    """Hold out `eval_size` examples, then sample the fine-tune subset from the rest."""
    if not 0 <= eval_size < dataset_size:
        raise ValueError(
            f"eval_size {eval_size} must be in [0, {dataset_size}) for "
            f"{dataset_size} examples"
        )
    train_count = dataset_size - eval_size
    if not 0 <= finetune_size <= train_count:
        raise ValueError(
            f"fine-tune size {finetune_size} exceeds the {train_count} "
            "available training examples"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(dataset_size)
    eval_indices = np.sort(order[:eval_size])
    train_indices = np.sort(order[eval_size:])
    finetune_indices = np.sort(rng.choice(train_indices, finetune_size, replace=False))
    plan = SplitPlan(train_indices, eval_indices, finetune_indices, seed)
    logger.info(
        f"Split {dataset_size} examples: {train_count} train "
        f"({finetune_size} fine-tune), {eval_size} held-out eval"
    )
    return plan


def sample_finetune_subset(
    dataset: LabeledDataset, size: int, seed: int, eval_size: int = 0
) -> SplitPlan:
    """Uniform sample without replacement of the fine-tune subset."""
    return plan_splits(len(dataset), eval_size, size, seed)
