"""
Reader for the big-endian IDX files the MNIST digits are distributed in.
"""

import logging
import os
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import torch

from data.datasets import LabeledDataset

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

PathLike = Union[str, Path]


class IdxFormatError(ValueError):
    """Malformed IDX content, reported with the byte offset of the problem."""

    def __init__(self, message: str, path: PathLike, offset: int):
        super().__init__(f"{path} @ byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


def _read_header(
    raw: bytes, path: PathLike, magic: int, ndims: int
) -> Tuple[int, ...]:
    header_size = 4 * (1 + ndims)
    if len(raw) < header_size:
        raise IdxFormatError(
            f"header needs {header_size} bytes, file has {len(raw)}", path, len(raw)
        )
    found, *dims = struct.unpack(f">{1 + ndims}I", raw[:header_size])
    if found != magic:
        kind = {IMAGES_MAGIC: "images", LABELS_MAGIC: "labels"}.get(found, "unknown")
        raise IdxFormatError(
            f"wrong magic {found} ({kind}), expected {magic}", path, 0
        )
    return tuple(dims)


def _read_payload(raw: bytes, path: PathLike, offset: int, size: int) -> np.ndarray:
    available = len(raw) - offset
    if available < size:
        raise IdxFormatError(
            f"truncated payload: expected {size} bytes, found {available}",
            path,
            len(raw),
        )
    if available > size:
        logger.warning(f"{path}: ignoring {available - size} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=offset)


def load_idx(
    images_path: PathLike, labels_path: PathLike, name: str = ""
) -> LabeledDataset:
    """Load an IDX image/label file pair into a dataset with pixels scaled to [0, 1]."""
    image_raw = Path(images_path).read_bytes()
    label_raw = Path(labels_path).read_bytes()

    count, rows, cols = _read_header(image_raw, images_path, IMAGES_MAGIC, 3)
    (label_count,) = _read_header(label_raw, labels_path, LABELS_MAGIC, 1)
    if count != label_count:
        raise IdxFormatError(
            f"label count {label_count} does not match image count {count}",
            labels_path,
            4,
        )

    pixels = _read_payload(image_raw, images_path, 16, count * rows * cols)
    labels = _read_payload(label_raw, labels_path, 8, count)

    images = pixels.reshape(count, rows, cols, 1).astype(np.float32) / 255.0
    dataset = LabeledDataset(
        torch.from_numpy(images),
        torch.from_numpy(labels.astype(np.int64)),
        name or Path(images_path).name,
    )
    logger.info(f"Loaded {count} images of {rows}x{cols} from {images_path}")
    return dataset


def load_mnist(data_dir: PathLike, split: str = "train") -> LabeledDataset:
    """Load the MNIST train or test split from a directory of IDX files."""
    if split not in MNIST_FILES:
        raise ValueError(f"unknown MNIST split '{split}'")
    images_name, labels_name = MNIST_FILES[split]
    return load_idx(
        os.path.join(data_dir, images_name),
        os.path.join(data_dir, labels_name),
        name=f"mnist-{split}",
    )


def mnist_available(data_dir: PathLike) -> bool:
    return all(
        os.path.exists(os.path.join(data_dir, name))
        for names in MNIST_FILES.values()
        for name in names
    )
