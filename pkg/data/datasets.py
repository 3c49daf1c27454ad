"""
In-memory labelled image datasets and the synthetic blob generator.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import torch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledDataset:
    """Images as a float32 (N, H, W, C) tensor in [0, 1] plus int64 labels."""

    images: torch.Tensor
    labels: torch.Tensor
    name: str = "dataset"

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.images.shape[1:])  # type: ignore

    def validate(self) -> None:
        if self.images.dim() != 4:
            raise ValueError(f"{self.name}: images must be (N, H, W, C)")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.name}: {self.images.shape[0]} images but "
                f"{self.labels.shape[0]} labels"
            )
        if len(self) and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError(f"{self.name}: pixel values must lie in [0, 1]")

    def subset(
        self, indices: Sequence[int], name: Optional[str] = None
    ) -> "LabeledDataset":
        index = torch.as_tensor(np.asarray(indices, dtype=np.int64))
        return LabeledDataset(
            self.images.index_select(0, index),
            self.labels.index_select(0, index),
            name or self.name,
        )

    def class_counts(self, class_count: int) -> np.ndarray:
        return np.bincount(self.labels.numpy(), minlength=class_count)


@dataclass(frozen=True)
class DatasetBundle:
    """Datasets consumed by fitness evaluation, evolution and the controls."""

    train: LabeledDataset
    finetune: LabeledDataset
    evaluation: LabeledDataset
    test: Optional[LabeledDataset] = None

    @property
    def final(self) -> LabeledDataset:
        """Dataset for final reporting: the test split when present."""
        return self.test if self.test is not None else self.evaluation


def synthetic_blobs(
    classes: int,
    per_class: int,
    dims: Tuple[int, int, int] = (8, 8, 1),
    seed: int = 0,
    spread: float = 0.1,
    name: str = "blobs",
) -> LabeledDataset:
    """Gaussian images scattered around one random center image per class.

    Centers are uniform in [0.2, 0.8] per pixel; samples are clipped to [0, 1].
    At the default spread the classes are linearly separable with a wide margin.
    """
    if classes < 2:
        raise ValueError("synthetic_blobs needs at least 2 classes")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.2, 0.8, size=(classes,) + tuple(dims))
    labels = np.repeat(np.arange(classes), per_class)
    noise = rng.normal(0.0, spread, size=(labels.size,) + tuple(dims))
    images = np.clip(centers[labels] + noise, 0.0, 1.0).astype(np.float32)
    order = rng.permutation(labels.size)
    dataset = LabeledDataset(
        torch.from_numpy(images[order]),
        torch.from_numpy(labels[order].astype(np.int64)),
        name,
    )
    logger.debug(f"Generated {len(dataset)} synthetic images ({classes} classes)")
    return dataset
