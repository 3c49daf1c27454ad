"""
Binary filter masks ("individuals") and structural compaction of a network
under a mask.

One bit per convolution filter of every conv layer except the last, whose
filters are the class outputs and always survive. Removing a filter also
removes the matching input channel of the next conv layer.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import torch

from model.core.errors import LayoutMismatchError
from model.core.network import TrainedNetwork, param_key
from model.core.spec import LayerKind, NetworkSpec

logger = logging.getLogger(__name__)

LAYER_SEPARATOR = "|"


@dataclass(frozen=True)
class FilterShape:
    """H_i x W_i x C_i x N_i of one conv layer."""

    height: int
    width: int
    channels: int
    filters: int

    @property
    def weights(self) -> int:
        return self.height * self.width * self.channels * self.filters

    def describe(self) -> str:
        return f"{self.height}x{self.width}x{self.channels}x{self.filters}"


@dataclass(frozen=True)
class MaskLayout:
    shapes: Tuple[FilterShape, ...]
    input_channels: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "shapes", tuple(self.shapes))
        self.validate()

    @classmethod
    def from_spec(cls, spec: NetworkSpec) -> "MaskLayout":
        shapes = tuple(
            FilterShape(
                layer.filter_height,
                layer.filter_width,
                layer.in_channels,
                layer.out_filters,
            )
            for layer in spec.conv_layers
        )
        return cls(shapes, spec.input_dims[2])

    def validate(self) -> None:
        if not self.shapes:
            raise ValueError("layout needs at least one conv layer")
        if self.input_channels < 1:
            raise ValueError("input channel count must be >= 1")
        for index, shape in enumerate(self.shapes):
            if min(shape.height, shape.width, shape.channels, shape.filters) < 1:
                raise ValueError(f"conv layer {index + 1} has a zero extent")

    @property
    def depth(self) -> int:
        """p, the number of conv layers."""
        return len(self.shapes)

    @property
    def filter_counts(self) -> List[int]:
        """[N_1 ... N_p]."""
        return [shape.filters for shape in self.shapes]

    @property
    def maskable(self) -> Tuple[bool, ...]:
        return tuple(i < self.depth - 1 for i in range(self.depth))

    @property
    def maskable_counts(self) -> List[int]:
        return self.filter_counts[:-1]

    @property
    def bit_length(self) -> int:
        return sum(self.maskable_counts)

    @property
    def total_filters(self) -> int:
        """L, every conv filter including the fixed last layer."""
        return sum(self.filter_counts)

    @property
    def total_weights(self) -> int:
        """M = sum of H_i W_i C_i N_i."""
        return sum(shape.weights for shape in self.shapes)

    def layer_slices(self) -> List[slice]:
        """Bit ranges of the maskable layers inside an individual."""
        slices = []
        start = 0
        for count in self.maskable_counts:
            slices.append(slice(start, start + count))
            start += count
        return slices

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input_channels": self.input_channels,
            "shapes": [
                [s.height, s.width, s.channels, s.filters] for s in self.shapes
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MaskLayout":
        return cls(
            tuple(FilterShape(*shape) for shape in data["shapes"]),
            int(data["input_channels"]),
        )


@dataclass(frozen=True, eq=False)
class Individual:
    layout: MaskLayout
    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.array(self.bits, dtype=np.uint8).reshape(-1)
        if bits.size != self.layout.bit_length:
            raise LayoutMismatchError(
                f"individual has {bits.size} bits, layout needs "
                f"{self.layout.bit_length}"
            )
        if np.any(bits > 1):
            raise ValueError("individual bits must be 0 or 1")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "_key", "".join(map(str, bits.tolist())))

    @classmethod
    def all_ones(cls, layout: MaskLayout) -> "Individual":
        return cls(layout, np.ones(layout.bit_length, dtype=np.uint8))

    @property
    def key(self) -> str:
        return self._key  # type: ignore[attr-defined]

    def layer_bits(self, layer: int) -> np.ndarray:
        """b_i for the 0-based maskable layer index."""
        return self.bits[self.layout.layer_slices()[layer]]

    def is_valid(self) -> bool:
        return all(self.bits[s].any() for s in self.layout.layer_slices())

    def validate(self) -> None:
        for index, window in enumerate(self.layout.layer_slices()):
            if not self.bits[window].any():
                raise ValueError(f"conv layer {index + 1} keeps no filter")

    def to_text(self) -> str:
        return LAYER_SEPARATOR.join(
            "".join("1" if bit else "0" for bit in self.bits[window])
            for window in self.layout.layer_slices()
        )

    @classmethod
    def from_text(cls, text: str, layout: MaskLayout) -> "Individual":
        groups = text.strip().split(LAYER_SEPARATOR)
        expected = layout.maskable_counts
        if [len(group) for group in groups] != expected:
            raise LayoutMismatchError(
                f"layer groups {[len(g) for g in groups]} do not match layout "
                f"{expected}"
            )
        joined = "".join(groups)
        if set(joined) - {"0", "1"}:
            raise ValueError("individual text may only contain '0', '1' and '|'")
        return cls(layout, np.array([int(c) for c in joined], dtype=np.uint8))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Individual):
            return NotImplemented
        return self.layout == other.layout and self.key == other.key

    def __hash__(self) -> int:
        return hash((self.layout, self.key))

    def __repr__(self) -> str:
        return f"Individual({self.to_text()})"


def repair(
    bits: np.ndarray, layout: MaskLayout, rng: np.random.Generator
) -> np.ndarray:
    """Set one random bit in every maskable layer that kept no filter."""
    repaired = np.array(bits, dtype=np.uint8)
    for window in layout.layer_slices():
        if not repaired[window].any():
            repaired[window.start + int(rng.integers(window.stop - window.start))] = 1
    return repaired


def random_individual(
    layout: MaskLayout, density: float, rng: np.random.Generator
) -> Individual:
    if not 0 < density <= 1:
        raise ValueError("density must be in (0, 1]")
    bits = (rng.random(layout.bit_length) < density).astype(np.uint8)
    return Individual(layout, repair(bits, layout, rng))


@dataclass(frozen=True)
class CompactArchitecture:
    counts: Tuple[int, ...]
    kept_indices: Tuple[Tuple[int, ...], ...]


def surviving_counts(ind: Individual) -> List[int]:
    """[N_0, N^_1 ... N^_{p-1}, N_p]: kept filters per conv layer."""
    layout = ind.layout
    kept = [int(ind.bits[window].sum()) for window in layout.layer_slices()]
    return [layout.input_channels] + kept + [layout.filter_counts[-1]]


def compact_architecture(ind: Individual) -> CompactArchitecture:
    kept = [
        tuple(int(i) for i in np.flatnonzero(ind.bits[window]))
        for window in ind.layout.layer_slices()
    ]
    kept.append(tuple(range(ind.layout.filter_counts[-1])))
    return CompactArchitecture(tuple(surviving_counts(ind)), tuple(kept))


def compressed_shapes(
    layout: MaskLayout, counts: Sequence[int]
) -> List[FilterShape]:
    """Filter shapes after compaction.

    Input channels shrink in proportion to the producer's surviving filters,
    which equals N^_{i-1} whenever C_i = N_{i-1} and also covers grouped
    convolutions.
    """
    originals = [layout.input_channels] + layout.filter_counts
    shapes = []
    for i, shape in enumerate(layout.shapes, start=1):
        channels = shape.channels * counts[i - 1] // originals[i - 1]
        shapes.append(FilterShape(shape.height, shape.width, channels, counts[i]))
    return shapes


def kept_weight_count(
    layout: MaskLayout, counts: Sequence[int]
) -> Tuple[int, int, int]:
    """(kept, discarded, M) filter weights for the given surviving counts."""
    total = layout.total_weights
    kept = sum(shape.weights for shape in compressed_shapes(layout, counts))
    return kept, total - kept, total


def compact_network(net: TrainedNetwork, ind: Individual) -> TrainedNetwork:
    """Physically drop masked filters and the input channels they fed."""
    layout = MaskLayout.from_spec(net.spec)
    if ind.layout != layout:
        raise LayoutMismatchError("individual layout does not match the network")
    arch = compact_architecture(ind)
    spec = net.spec.with_filter_counts(arch.counts[1:])

    params = {}
    keep_in = torch.arange(layout.input_channels)
    keep_out = keep_in
    conv_ordinal = 0
    for index, layer in enumerate(net.spec.layers):
        if layer.kind is LayerKind.CONV:
            keep_out = torch.tensor(arch.kept_indices[conv_ordinal], dtype=torch.long)
            weight = net.parameters[param_key(index, "weight")]
            params[param_key(index, "weight")] = (
                weight.index_select(0, keep_out).index_select(1, keep_in).clone()
            )
            bias = net.parameters[param_key(index, "bias")]
            params[param_key(index, "bias")] = bias.index_select(0, keep_out).clone()
            keep_in = keep_out
            conv_ordinal += 1
        elif layer.kind is LayerKind.BATCHNORM:
            for name in ("gamma", "beta", "running_mean", "running_var"):
                key = param_key(index, name)
                params[key] = net.parameters[key].index_select(0, keep_out).clone()
    compact = TrainedNetwork(spec, params)
    logger.debug(f"Compacted network to filter counts {list(arch.counts)}")
    return compact
