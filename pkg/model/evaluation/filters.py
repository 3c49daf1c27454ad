"""
Filter images as 8-bit binary PGM files and filter-diversity statistics.
"""

import logging
from pathlib import Path
from typing import List, Union

import numpy as np
import torch

from model.core.network import TrainedNetwork

logger = logging.getLogger(__name__)

MID_GRAY = 128


def normalize_filter(values: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255; a constant filter becomes mid-gray."""
    low, high = float(values.min()), float(values.max())
    if high - low <= 0:
        return np.full(values.shape, MID_GRAY, dtype=np.uint8)
    scaled = (values - low) / (high - low) * 255.0
    return np.rint(scaled).astype(np.uint8)


def write_pgm(path: Union[str, Path], pixels: np.ndarray) -> None:
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.astype(np.uint8).tobytes())


def export_filters(
    net: TrainedNetwork, layer: int, path: Union[str, Path]
) -> List[Path]:
    """Write one image per filter of the 1-based conv `layer`.

    Multi-channel filters are normalised over the whole filter and written one
    channel per file.
    """
    conv_count = len(net.spec.conv_indices)
    if not 1 <= layer <= conv_count:
        raise ValueError(f"layer {layer} outside 1..{conv_count}")
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    weight = net.conv_weight(layer - 1).detach().double().numpy()

    written = []
    for n, values in enumerate(weight):
        pixels = normalize_filter(values)
        for c, channel in enumerate(pixels):
            if pixels.shape[0] == 1:
                name = f"layer_{layer}_filter_{n}.pgm"
            else:
                name = f"layer_{layer}_filter_{n}_channel_{c}.pgm"
            write_pgm(directory / name, channel)
            written.append(directory / name)
    logger.info(f"Wrote {len(written)} filter images for layer {layer} to {directory}")
    return written


def mean_pairwise_distance(filters: torch.Tensor) -> float:
    """Mean Euclidean distance over all pairs of flattened filters."""
    if filters.shape[0] < 2:
        return 0.0
    flat = filters.detach().double().reshape(filters.shape[0], -1)
    return float(torch.pdist(flat).mean())


def mean_cosine_similarity(filters: torch.Tensor) -> float:
    """Mean cosine similarity over all pairs of flattened filters."""
    count = filters.shape[0]
    if count < 2:
        return 0.0
    flat = filters.detach().double().reshape(count, -1)
    unit = flat / flat.norm(dim=1, keepdim=True).clamp_min(1e-12)
    similarity = unit @ unit.T
    off_diagonal = similarity.sum() - similarity.diagonal().sum()
    return float(off_diagonal / (count * (count - 1)))
